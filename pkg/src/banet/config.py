"""Run configuration: one YAML file with a section per subsystem.

Sections are ``data``, ``model``, ``loss``, ``trainer`` and ``boundary``.
Defaults are the reference training hyperparameters.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .data import AugmentSpec, LAYOUTS
from .losses import LossWeights
from .model import ModelConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "data": {
        "root": None,
        "layout": "folder_pairs",
        "eval_root": None,
        "train_split": 1.0,
        "size": 512,
        "seed": 0,
        "batch_size": 16,
        "augment": True,
        "rotation_range": [-45.0, 45.0],
        "flip_prob": 0.5,
        "lightness_range": [0.7, 1.3],
    },
    "model": {"variant": "banet64"},
    "loss": {k: v for k, v in asdict(LossWeights()).items() if k != "width"},
    "trainer": {k: v for k, v in asdict(TrainConfig()).items() if k not in ("batch_size", "seed")},
    "boundary": {"canonical_width": 50},
}
# resolved from 5% of the phase length when left unset
DEFAULTS["trainer"]["warmup_iterations"] = None

_MODEL_FIELDS = {f.name for f in fields(ModelConfig)} - {"temperature"}


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in (update or {}).items():
        where = f"{path}{key}"
        # model keys are checked against ModelConfig later
        if key not in out and path != "model.":
            raise ConfigError(f"{where}: unknown {'key' if path else 'section'}")
        if isinstance(out.get(key), dict) and isinstance(value, dict):
            out[key] = _merge(out[key], value, where + ".")
        else:
            out[key] = value
    return out


def parse_override(text: str) -> dict:
    """``"trainer.iterations=100"`` -> ``{"trainer": {"iterations": 100}}``."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    key, raw = text.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(f"override key {key!r} must be section.key")
    return {parts[0]: {parts[1]: yaml.safe_load(raw)}}


@dataclass
class RunConfig:
    sections: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    provenance: list = field(default_factory=list)

    @classmethod
    def load(cls, path=None, overrides=()) -> "RunConfig":
        sections = copy.deepcopy(DEFAULTS)
        provenance = []
        if path is not None:
            text = Path(path).read_text()
            loaded = yaml.safe_load(text) or {}
            if not isinstance(loaded, dict):
                raise ConfigError(f"{path}: top level must be a mapping of sections")
            sections = _merge(sections, loaded)
            provenance.append(str(path))
        for ov in overrides:
            sections = _merge(sections, parse_override(ov) if isinstance(ov, str) else ov)
            provenance.append(ov if isinstance(ov, str) else repr(ov))
        cfg = cls(sections, provenance)
        cfg.validate()
        return cfg

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        cfg = cls(_merge(DEFAULTS, d.get("sections", d)), list(d.get("provenance", [])))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {"sections": copy.deepcopy(self.sections), "provenance": list(self.provenance)}

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def __getitem__(self, section):
        return self.sections[section]

    # typed views -------------------------------------------------------

    def loss_weights(self) -> LossWeights:
        return LossWeights(**self["loss"], width=self["boundary"]["canonical_width"])

    def model_config(self) -> ModelConfig:
        m = dict(self["model"])
        variant = m.pop("variant", "banet64")
        unknown = set(m) - _MODEL_FIELDS
        if unknown:
            raise ConfigError(f"model.{sorted(unknown)[0]}: unknown key")
        return ModelConfig.named(variant, temperature=self["loss"]["temperature"], **m)

    def train_config(self, **overrides) -> TrainConfig:
        t = dict(self["trainer"], batch_size=self["data"]["batch_size"], seed=self["data"]["seed"])
        t.update(overrides)
        return TrainConfig(**t)

    def augment_spec(self) -> AugmentSpec:
        d = self["data"]
        return AugmentSpec(tuple(d["rotation_range"]), d["flip_prob"], tuple(d["lightness_range"]), bool(d["augment"]))

    def validate(self) -> None:
        checks = [
            ("loss", self.loss_weights),
            ("model", self.model_config),
            ("trainer", self.train_config),
            ("data", self.augment_spec),
        ]
        for section, build in checks:
            try:
                build()
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{section}: {exc}") from exc
        d = self["data"]
        if d["layout"] not in LAYOUTS:
            raise ConfigError(f"data.layout: must be one of {LAYOUTS}, got {d['layout']!r}")
        if not 0 < float(d["train_split"]) <= 1:
            raise ConfigError("data.train_split: must be in (0, 1]")
        if d["size"] is not None and (int(d["size"]) % 32 or int(d["size"]) < 32):
            raise ConfigError("data.size: must be a positive multiple of 32")
        if not self["boundary"]["canonical_width"] > 0:
            raise ConfigError("boundary.canonical_width: must be > 0")
