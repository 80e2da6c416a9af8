"""Procedural portrait-like datasets with pixel-exact masks."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .imaging import save_image, save_mask

SHAPES = ("disc", "head_shoulders")
BACKGROUNDS = ("flat", "gradient", "noise")


@dataclass(frozen=True)
class SyntheticSpec:
    n_images: int = 8
    size: int = 128
    shape: str = "head_shoulders"
    background: str = "gradient"
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_images < 1 or self.size < 8:
            raise ValueError("need n_images >= 1 and size >= 8")
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}")
        if self.background not in BACKGROUNDS:
            raise ValueError(f"background must be one of {BACKGROUNDS}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def _grid(size):
    # pixel centres
    c = np.arange(size) + 0.5
    return np.meshgrid(c, c, indexing="ij")


def disc_mask(size: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = _grid(size)
    return ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(np.float32)


def ellipse_mask(size, cy, cx, ry, rx, angle=0.0) -> np.ndarray:
    yy, xx = _grid(size)
    dy, dx = yy - cy, xx - cx
    ca, sa = np.cos(angle), np.sin(angle)
    u = ca * dx + sa * dy
    v = -sa * dx + ca * dy
    return ((u / rx) ** 2 + (v / ry) ** 2 <= 1.0).astype(np.float32)


def head_shoulders_mask(size: int, rng: np.random.Generator) -> np.ndarray:
    s = size
    head_r = s * rng.uniform(0.16, 0.22)
    cx = s * rng.uniform(0.42, 0.58)
    cy = s * rng.uniform(0.30, 0.40)
    head = ellipse_mask(s, cy, cx, head_r * 1.2, head_r, rng.uniform(-0.2, 0.2))
    sh_cx = cx + s * rng.uniform(-0.05, 0.05)
    shoulders = ellipse_mask(s, s * rng.uniform(0.95, 1.05), sh_cx, s * rng.uniform(0.30, 0.38),
                             s * rng.uniform(0.38, 0.48))
    return np.maximum(head, shoulders)


def _background(spec: SyntheticSpec, rng) -> np.ndarray:
    s = spec.size
    base = rng.uniform(0.2, 0.8, size=3)
    if spec.background == "flat":
        return np.broadcast_to(base, (s, s, 3)).copy()
    yy, xx = _grid(s)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(theta) * xx + np.sin(theta) * yy) / s
    ramp = ramp - ramp.mean()
    bg = base + 0.4 * ramp[..., None] * rng.uniform(0.5, 1.0, size=3)
    if spec.background == "noise":
        bg = bg + rng.normal(0.0, spec.noise_sigma, size=bg.shape)
    return bg


def render(spec: SyntheticSpec, index: int) -> tuple[np.ndarray, np.ndarray]:
    """One (image, mask) pair; deterministic in ``(spec.seed, index)``."""
    rng = np.random.default_rng([spec.seed, index])
    s = spec.size
    if spec.shape == "disc":
        r = s * rng.uniform(0.2, 0.35)
        mask = disc_mask(s, s / 2 + rng.uniform(-0.1, 0.1) * s, s / 2 + rng.uniform(-0.1, 0.1) * s, r)
    else:
        mask = head_shoulders_mask(s, rng)
    bg = _background(spec, rng)
    fg_color = rng.uniform(0.1, 0.9, size=3)
    # keep the portrait distinguishable from the background mean
    while np.abs(fg_color.mean() - bg.mean()) < 0.2:
        fg_color = rng.uniform(0.0, 1.0, size=3)
    yy, _ = _grid(s)
    fg = fg_color + 0.1 * (yy / s - 0.5)[..., None]
    img = np.where(mask[..., None] > 0, fg, bg)
    return np.clip(img, 0.0, 1.0).astype(np.float32), mask


def make_arrays(spec: SyntheticSpec) -> tuple[list[np.ndarray], list[np.ndarray]]:
    pairs = [render(spec, i) for i in range(spec.n_images)]
    return [p[0] for p in pairs], [p[1] for p in pairs]


def generate(spec: SyntheticSpec, out_dir) -> Path:
    """Write ``images/``, ``masks/`` (folder_pairs layout) and ``manifest.json``."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    for i in range(spec.n_images):
        img, mask = render(spec, i)
        save_image(img, out / "images" / f"{i:04d}.png")
        save_mask(mask, out / "masks" / f"{i:04d}.png")
    manifest = {"generator": "banet.synthetic", "spec": asdict(spec), "layout": "folder_pairs"}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out
