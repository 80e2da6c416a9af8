"""Segmentation metrics, latency and the three-way ablation table."""
from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import torch

from .data import PortraitDataset
from .losses import LossWeights
from .model import BANet, ModelConfig, count_parameters, parameter_megabytes

ABLATION_VARIANTS = ("base", "+attention", "+attention+refine")


@dataclass
class EvalReport:
    miou: float
    fps: float
    param_count: int
    param_mb: float
    per_image_iou: list[float] = field(default_factory=list)
    resolution: int = 512
    mode: str = "foreground"

    def to_dict(self) -> dict:
        return asdict(self)


def iou(pred: np.ndarray, target: np.ndarray, threshold: float = 0.5) -> float:
    """Foreground IoU of ``pred > threshold`` against a binary target.

    Both sets empty counts as perfect agreement (1.0).
    """
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    p = pred > threshold
    t = target > 0.5
    union = np.count_nonzero(p | t)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & t) / union


def two_class_iou(pred, target, threshold: float = 0.5) -> float:
    p = (np.asarray(pred) > threshold).astype(np.float32)
    return 0.5 * (iou(p, target) + iou(1.0 - p, 1.0 - (np.asarray(target) > 0.5)))


def _confidence(model, x: torch.Tensor) -> torch.Tensor:
    out = model(x)
    return out.confidence if hasattr(out, "confidence") else out


@torch.no_grad()
def measure_fps(model: Callable, resolution: int = 512, n: int = 20, warmup: int = 10) -> float:
    """Forward passes per second at batch 1, after ``warmup`` untimed passes."""
    if isinstance(model, torch.nn.Module):
        model.eval()
    x = torch.rand(1, 3, resolution, resolution, generator=torch.Generator().manual_seed(0))
    for _ in range(warmup):
        _confidence(model, x)
    start = time.perf_counter()
    for _ in range(n):
        _confidence(model, x)
    return n / (time.perf_counter() - start)


@torch.no_grad()
def evaluate(model: Callable, dataset: PortraitDataset, resolution: int = 512, threshold: float = 0.5,
             mode: str = "foreground", warmup: int = 10) -> EvalReport:
    """mIoU over ``dataset`` (as returned by ``dataset.base_sample``) plus FPS.

    ``model`` is a :class:`BANet` or any callable mapping an ``N x 3 x H x W``
    tensor to a confidence tensor.  Timing covers the forward passes only.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if mode not in ("foreground", "two_class"):
        raise ValueError(f"unknown IoU mode {mode!r}")
    metric = iou if mode == "foreground" else two_class_iou
    if isinstance(model, torch.nn.Module):
        model.eval()
    first = torch.from_numpy(dataset.base_sample(0).image.transpose(2, 0, 1).copy())[None]
    for _ in range(warmup):
        _confidence(model, first)
    scores, elapsed = [], 0.0
    for i in range(len(dataset)):
        s = dataset.base_sample(i)
        x = torch.from_numpy(s.image.transpose(2, 0, 1).copy())[None]
        t0 = time.perf_counter()
        conf = _confidence(model, x)
        elapsed += time.perf_counter() - t0
        scores.append(float(metric(conf[0, 0].numpy(), s.seg_target, threshold)))
    n_params = count_parameters(model) if isinstance(model, torch.nn.Module) else 0
    return EvalReport(
        miou=float(np.mean(scores)),
        fps=len(scores) / elapsed if elapsed > 0 else float("inf"),
        param_count=n_params,
        param_mb=parameter_megabytes(n_params),
        per_image_iou=scores,
        resolution=resolution,
        mode=mode,
    )


def variant_configs(variant: str, model_cfg: ModelConfig, train_cfg):
    """Model and training settings for one ablation row.

    ``base`` drops the attention head, its loss and the refine loss;
    ``+attention`` restores the attention path; the last row adds refine.
    """
    if variant == "base":
        return replace(model_cfg, use_attention=False), replace(train_cfg, phase="pretrain", use_bound_loss=False)
    if variant == "+attention":
        return replace(model_cfg, use_attention=True), replace(train_cfg, phase="pretrain", use_bound_loss=True)
    if variant == "+attention+refine":
        return replace(model_cfg, use_attention=True), replace(train_cfg, phase="finetune", use_bound_loss=True)
    raise ValueError(f"unknown ablation variant {variant!r}")


def ablation_run(train_set: PortraitDataset, eval_set: PortraitDataset | None, model_cfg: ModelConfig,
                 train_cfg, weights: LossWeights | None = None,
                 variants: Iterable[str] = ABLATION_VARIANTS, resolution: int | None = None,
                 warmup: int = 2) -> list[dict]:
    """Train each variant from the same seed and evaluate it."""
    from .trainer import Trainer

    eval_set = eval_set or train_set
    rows = []
    for name in variants:
        mcfg, tcfg = variant_configs(name, model_cfg, train_cfg)
        torch.manual_seed(tcfg.seed)
        trainer = Trainer(BANet(mcfg), train_set, tcfg, weights)
        trainer.train()
        rep = evaluate(trainer.model, eval_set, resolution=resolution or (eval_set.size or 0), warmup=warmup)
        rows.append({
            "model": name,
            "boundary_attention": mcfg.use_attention,
            "refine_loss": tcfg.refine_enabled,
            "miou": rep.miou,
            "fps": rep.fps,
            "param_count": rep.param_count,
            "param_mb": rep.param_mb,
        })
    return rows


def write_ablation_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    return path


def ablation_markdown(rows: list[dict]) -> str:
    lines = ["| model | Boundary Attention | Refine Loss | mIoU |", "|---|:-:|:-:|--:|"]
    for r in rows:
        lines.append(f"| {r['model']} | {'x' if r['boundary_attention'] else ''} | "
                     f"{'x' if r['refine_loss'] else ''} | {100 * r['miou']:.2f} |")
    return "\n".join(lines)
