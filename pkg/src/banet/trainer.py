"""Two-phase SGD training with a warm-up learning-rate schedule.

``pretrain`` optimizes seg + bound losses only; ``finetune`` adds the
refine loss.  Optimizer momentum is reset when a fine-tune run starts from
a pretrain checkpoint.
"""
from __future__ import annotations

import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import torch

from .data import BatchStream, PortraitDataset
from .losses import LossReport, LossWeights, compute_losses
from .model import BANet, ModelConfig

log = logging.getLogger(__name__)

PHASES = ("pretrain", "finetune")
DECAYS = ("poly", "cosine", "step")
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class TrainConfig:
    lr_max: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    iterations: int = 40000
    # None -> 5% of the phase
    warmup_iterations: int | None = None
    batch_size: int = 16
    seed: int = 0
    phase: str = "pretrain"
    decay: str = "poly"
    poly_power: float = 0.9
    checkpoint_every: int = 0
    grad_clip: float | None = None
    use_bound_loss: bool = True

    def __post_init__(self):
        if self.warmup_iterations is None:
            self.warmup_iterations = int(0.05 * self.iterations)
        if self.lr_max <= 0:
            raise ValueError("lr_max must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 <= self.warmup_iterations < self.iterations:
            raise ValueError("warmup_iterations must be in [0, iterations)")
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.decay not in DECAYS:
            raise ValueError(f"decay must be one of {DECAYS}, got {self.decay!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def refine_enabled(self) -> bool:
        return self.phase == "finetune"

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def lr_schedule(iteration: int, cfg: TrainConfig) -> float:
    """Linear warm-up from 0 to ``lr_max``, then decay towards 0."""
    total, warm = cfg.iterations, cfg.warmup_iterations
    if not 0 <= iteration < total:
        raise ValueError(f"iteration {iteration} outside [0, {total})")
    if iteration < warm:
        return cfg.lr_max * iteration / warm
    progress = (iteration - warm) / (total - warm)
    if cfg.decay == "poly":
        return cfg.lr_max * (1.0 - progress) ** cfg.poly_power
    if cfg.decay == "cosine":
        return cfg.lr_max * 0.5 * (1.0 + math.cos(math.pi * progress))
    return cfg.lr_max * 0.1 ** int(3 * progress)


def make_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.SGD:
    # coupled L2 on every learnable parameter, BN included
    return torch.optim.SGD(model.parameters(), lr=cfg.lr_max, momentum=cfg.momentum,
                           weight_decay=cfg.weight_decay)


def _state_bytes(obj) -> bytes:
    buf = io.BytesIO()
    torch.save(obj, buf)
    return buf.getvalue()


def save_checkpoint(path, state: dict) -> Path:
    """Write ``state`` with a sha256 over its serialized payload."""
    path = Path(path)
    payload = _state_bytes(state)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save({"version": CHECKPOINT_VERSION, "sha256": hashlib.sha256(payload).hexdigest(),
                "payload": payload}, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path) -> dict:
    try:
        outer = torch.load(path, map_location="cpu", weights_only=False)
        payload, digest = outer["payload"], outer["sha256"]
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if hashlib.sha256(payload).hexdigest() != digest:
        raise CheckpointError(f"{path}: integrity hash mismatch")
    if outer.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {outer.get('version')}")
    return torch.load(io.BytesIO(payload), map_location="cpu", weights_only=False)


def model_from_checkpoint(state_or_path) -> BANet:
    state = load_checkpoint(state_or_path) if not isinstance(state_or_path, dict) else state_or_path
    model = BANet(ModelConfig(**state["model_config"]))
    model.load_state_dict(state["model"])
    return model


class Trainer:
    """Owns the model, optimizer and iteration counter for one phase."""

    def __init__(self, model: BANet, dataset: PortraitDataset, cfg: TrainConfig,
                 weights: LossWeights | None = None, run_dir=None, extra_config: dict | None = None):
        self.model = model
        self.cfg = cfg
        self.weights = weights or LossWeights()
        self.stream = BatchStream(dataset, cfg.batch_size, cfg.seed)
        self.optimizer = make_optimizer(model, cfg)
        self.iteration = 0
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.extra_config = extra_config or {}
        self.history: list[dict] = []

    @property
    def done(self) -> bool:
        return self.iteration >= self.cfg.iterations

    def losses(self, batch: dict) -> LossReport:
        out = self.model(batch["image"])
        return compute_losses(out, batch["image"], batch["seg"], batch["bound"], self.weights,
                              refine_enabled=self.cfg.refine_enabled, use_bound_loss=self.cfg.use_bound_loss)

    def step(self) -> dict:
        if self.done:
            raise RuntimeError("phase already finished")
        self.model.train()
        lr = lr_schedule(self.iteration, self.cfg)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        batch = self.stream.batch_at(self.iteration)
        report = self.losses(batch)
        if not torch.isfinite(report.total):
            snap = self._abort_snapshot(report)
            raise NonFiniteLossError(f"non-finite loss at iteration {self.iteration}: {report.as_dict()}", snap)
        self.optimizer.zero_grad(set_to_none=True)
        report.total.backward()
        if self.cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.grad_clip)
        self.optimizer.step()
        record = {"iteration": self.iteration, "lr": lr, **report.as_dict()}
        self.iteration += 1
        self.history.append(record)
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            with open(self.run_dir / "train_log.jsonl", "a") as fh:
                fh.write(json.dumps(record) + "\n")
            if self.cfg.checkpoint_every and self.iteration % self.cfg.checkpoint_every == 0:
                self.save(self.run_dir / f"ckpt_{self.iteration:06d}.pt")
        return record

    def train(self, n: int | None = None) -> list[dict]:
        """Run ``n`` more iterations (default: to the end of the phase)."""
        stop = self.cfg.iterations if n is None else min(self.iteration + n, self.cfg.iterations)
        out = []
        while self.iteration < stop:
            rec = self.step()
            out.append(rec)
            if rec["iteration"] % 50 == 0:
                log.info("iter %d lr %.4g total %.4f", rec["iteration"], rec["lr"], rec["total"])
        if self.run_dir is not None:
            self.save(self.run_dir / "final.pt")
        return out

    def state(self) -> dict:
        return {
            "model": self.model.state_dict(),
            "model_config": self.model.cfg.to_dict(),
            "optimizer": self.optimizer.state_dict(),
            "iteration": self.iteration,
            "phase": self.cfg.phase,
            "train_config": asdict(self.cfg),
            "loss_weights": asdict(self.weights),
            "torch_rng": torch.get_rng_state(),
            "config": self.extra_config,
        }

    def save(self, path) -> Path:
        return save_checkpoint(path, self.state())

    def _abort_snapshot(self, report) -> Path | None:
        if self.run_dir is None:
            return None
        path = self.run_dir / f"abort_{self.iteration:06d}.pt"
        state = self.state()
        state["report"] = report.as_dict()
        return save_checkpoint(path, state)

    @classmethod
    def resume(cls, checkpoint, dataset: PortraitDataset, cfg: TrainConfig | None = None,
               run_dir=None) -> "Trainer":
        """Continue an interrupted phase exactly where it stopped."""
        state = load_checkpoint(checkpoint) if not isinstance(checkpoint, dict) else checkpoint
        saved = TrainConfig.from_dict(state["train_config"])
        if cfg is not None:
            for key in ("batch_size", "seed", "phase", "iterations", "warmup_iterations", "lr_max", "decay"):
                if getattr(cfg, key) != getattr(saved, key):
                    raise CheckpointError(
                        f"config incompatible with checkpoint: {key}={getattr(cfg, key)!r}, "
                        f"checkpoint has {getattr(saved, key)!r}")
        model = model_from_checkpoint(state)
        trainer = cls(model, dataset, cfg or saved, LossWeights(**state["loss_weights"]), run_dir,
                      state.get("config"))
        trainer.optimizer.load_state_dict(state["optimizer"])
        trainer.iteration = int(state["iteration"])
        torch.set_rng_state(state["torch_rng"])
        return trainer


def start_finetune(pretrained, dataset: PortraitDataset, cfg: TrainConfig,
                   weights: LossWeights | None = None, run_dir=None) -> Trainer:
    """New fine-tune phase from pretrained weights with fresh optimizer state."""
    if cfg.phase != "finetune":
        raise ValueError("start_finetune needs cfg.phase == 'finetune'")
    model = model_from_checkpoint(pretrained)
    return Trainer(model, dataset, cfg, weights, run_dir)


def train_phase(model: BANet, dataset: PortraitDataset, cfg: TrainConfig,
                weights: LossWeights | None = None, run_dir=None) -> Trainer:
    trainer = Trainer(model, dataset, cfg, weights, run_dir)
    trainer.train()
    return trainer
