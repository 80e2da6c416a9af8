"""Independent brute-force oracles and the aggregate self-check suite.

Each oracle recomputes a quantity by plain loops or finite differences,
without touching the vectorized code path it is checking.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np
import torch

from . import boundary, gradients, imaging, losses

SOBEL_X = np.array([[1, 0, -1], [2, 0, -2], [1, 0, -1]], dtype=np.float64)
SOBEL_Y = SOBEL_X.T.copy()

# hand-computed: columns sampled at x = 0, 1/3, 2/3, 1 between values 0 and 1
BILINEAR_GOLDEN = {
    "input": [[0.0, 1.0], [0.0, 1.0]],
    "size": [2, 4],
    "output": [[0.0, 1 / 3, 2 / 3, 1.0], [0.0, 1 / 3, 2 / 3, 1.0]],
}

# (m_img, m_pred, lam) -> max(lam * m_img - m_pred, 0)
HINGE_GOLDENS = [
    ((2.0, 1.0), 2.0),
    ((1.0, 2.0), 0.0),
    ((0.0, 3.0), 0.0),
    ((1.0, 1.5), 0.0),
    ((4.0, 0.0), 6.0),
]


def brute_cross_correlation(m: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """3x3 cross-correlation at interior pixels; border entries are NaN."""
    h, w = m.shape
    out = np.full((h, w), np.nan)
    for i in range(1, h - 1):
        for j in range(1, w - 1):
            acc = 0.0
            for di in range(3):
                for dj in range(3):
                    acc += kernel[di, dj] * m[i + di - 1, j + dj - 1]
            out[i, j] = acc
    return out


def brute_edges(mask: np.ndarray) -> np.ndarray:
    h, w = mask.shape
    out = np.zeros((h, w), dtype=bool)
    for i in range(h):
        for j in range(w):
            for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                a, b = i + di, j + dj
                if 0 <= a < h and 0 <= b < w and (mask[a, b] > 0.5) != (mask[i, j] > 0.5):
                    out[i, j] = True
    return out


def brute_chebyshev_band(edges: np.ndarray, k: int) -> np.ndarray:
    """Pixels within Chebyshev distance ``k // 2`` of any edge pixel."""
    r = k // 2
    h, w = edges.shape
    pts = np.argwhere(edges > 0.5)
    out = np.zeros((h, w), dtype=bool)
    for i in range(h):
        for j in range(w):
            for a, b in pts:
                if max(abs(a - i), abs(b - j)) <= r:
                    out[i, j] = True
                    break
    return out


def direct_kernel_size(fraction: float, width: float) -> int:
    raw = int(math.floor(fraction * width + 0.5))
    raw = max(raw, 1)
    return raw if raw % 2 == 1 else raw + 1


def finite_difference_grad(f: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor, h: float = 1e-6) -> torch.Tensor:
    g = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for k in range(flat.numel()):
        orig = flat[k].item()
        flat[k] = orig + h
        fp = f(x).item()
        flat[k] = orig - h
        fm = f(x).item()
        flat[k] = orig
        gflat[k] = (fp - fm) / (2 * h)
    return g


def autograd_grad(f, x: torch.Tensor) -> torch.Tensor:
    x = x.detach().clone().requires_grad_(True)
    (g,) = torch.autograd.grad(f(x), x)
    return g


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    scale = max(float(a.abs().max()), float(b.abs().max()), 1e-8)
    return float((a - b).abs().max()) / scale


# -- finite-difference problems -------------------------------------------

KINK_MARGIN = 1e-4


def _random_problem(seed: int, n: int = 6):
    g = torch.Generator().manual_seed(seed)
    img = torch.rand(3, n, n, generator=g, dtype=torch.float64)
    pred = 0.05 + 0.9 * torch.rand(n, n, generator=g, dtype=torch.float64)
    pbound = 0.05 + 0.9 * torch.rand(n, n, generator=g, dtype=torch.float64)
    seg_t = (torch.rand(n, n, generator=g) > 0.5).double()
    bound_t = (torch.rand(n, n, generator=g) > 0.5).double()
    mask = (torch.rand(n, n, generator=g) > 0.4).double()
    return img, pred, pbound, seg_t, bound_t, mask


def _near_kink(img_field, pred: torch.Tensor, lam: float) -> bool:
    """True if ``pred`` sits within a margin of a non-smooth point of the
    refine-loss pipeline (hinge, |dot|, zero magnitude, min/max ties)."""
    pf = gradients.prediction_gradient(pred)
    vals = pred.flatten().sort().values
    if float(vals[1] - vals[0]) < KINK_MARGIN or float(vals[-1] - vals[-2]) < KINK_MARGIN:
        return True
    dot = img_field.gx * pf.gx + img_field.gy * pf.gy
    hinge = lam * img_field.magnitude - pf.magnitude
    return bool(
        (dot.abs() < KINK_MARGIN).any()
        or (hinge.abs() < KINK_MARGIN).any()
        or (pf.magnitude < KINK_MARGIN).any()
        or (img_field.magnitude < KINK_MARGIN).any()
    )


def loss_functions(img, pbound, seg_t, bound_t, mask, w: losses.LossWeights):
    """Scalar losses as functions of the segmentation prediction map."""
    img_field = gradients.image_gradient(img)

    def field(p):
        return gradients.prediction_gradient(p)

    return {
        "bce": lambda p: losses.bce(p, seg_t),
        "cos_loss": lambda p: losses.cos_loss(img_field, field(p)).sum(),
        "mag_loss": lambda p: losses.mag_loss(img_field, field(p), w.lam).sum(),
        "refine_loss": lambda p: losses.refine_loss(img_field, field(p), mask, w.gamma1, w.gamma2, w.lam),
        "total_loss": lambda p: losses.total_loss(p, seg_t, pbound, bound_t, img_field, field(p), mask, w).total,
    }


def gradient_check(name: str, trials: int = 3, seed: int = 0, w: losses.LossWeights | None = None,
                   max_resample: int = 200) -> float:
    """Worst relative error between autograd and central differences for
    loss ``name`` over ``trials`` kink-free random 6x6 problems."""
    w = w or losses.LossWeights()
    worst, done, s = 0.0, 0, seed
    while done < trials:
        if s - seed > max_resample:
            raise RuntimeError(f"could not draw a kink-free problem for {name}")
        img, pred, pbound, seg_t, bound_t, mask = _random_problem(s)
        s += 1
        if _near_kink(gradients.image_gradient(img), pred, w.lam):
            continue
        f = loss_functions(img, pbound, seg_t, bound_t, mask, w)[name]
        ga = autograd_grad(f, pred)
        gn = finite_difference_grad(f, pred.clone())
        worst = max(worst, relative_error(ga, gn))
        done += 1
    return worst


# -- suite ---------------------------------------------------------------

def check_sobel(sobel_fn=None, n_maps: int = 100, seed: int = 0, tol: float = 1e-12) -> tuple[bool, str]:
    sobel_fn = sobel_fn or gradients.sobel
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_maps):
        m = rng.random((8, 8))
        gx, gy = sobel_fn(torch.from_numpy(m))
        bx = brute_cross_correlation(m, SOBEL_X)[1:-1, 1:-1]
        by = brute_cross_correlation(m, SOBEL_Y)[1:-1, 1:-1]
        worst = max(worst, float(np.abs(gx.numpy()[1:-1, 1:-1] - bx).max()),
                    float(np.abs(gy.numpy()[1:-1, 1:-1] - by).max()))
    gx, gy = sobel_fn(torch.full((8, 8), 0.7, dtype=torch.float64))
    const_ok = bool((gx == 0).all() and (gy == 0).all())
    return worst <= tol and const_ok, f"max |diff| {worst:.3g}, constant map zero: {const_ok}"


def check_dilation(n_masks: int = 20, seed: int = 0, width: float = 50) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n_masks):
        h, w = rng.integers(4, 33, size=2)
        mask = (rng.random((h, w)) < rng.uniform(0.1, 0.9)).astype(np.float32)
        frac = mask.mean()
        k = direct_kernel_size(frac, width)
        if boundary.dilation_kernel_size(boundary.DilationSpec.from_mask(mask, width)) != k:
            bad += 1
            continue
        want = brute_chebyshev_band(brute_edges(mask), k)
        got = boundary.make_boundary_target(mask, width) > 0.5
        bad += int(not np.array_equal(got, want))
    return bad == 0, f"{bad} of {n_masks} masks disagree"


def check_bilinear() -> tuple[bool, str]:
    g = BILINEAR_GOLDEN
    out = imaging.resize_bilinear(np.array(g["input"]), *g["size"])
    err = float(np.abs(out - np.array(g["output"])).max())
    return err < 1e-12, f"max |diff| {err:.3g}"


def check_hinge(w: losses.LossWeights | None = None) -> tuple[bool, str]:
    w = w or losses.LossWeights()
    bad = []
    for (m_img, m_pred), want in HINGE_GOLDENS:
        z = torch.zeros(1, 1, dtype=torch.float64)
        fi = gradients.GradientField(z + m_img, z, z)
        fp = gradients.GradientField(z + m_pred, z, z)
        got = float(losses.mag_loss(fi, fp, w.lam))
        if abs(got - want) > 1e-12:
            bad.append((m_img, m_pred, got, want))
    return not bad, f"{len(bad)} hinge goldens off" + (f": {bad}" if bad else "")


def check_gradients(w: losses.LossWeights | None = None, tol: float = 1e-4) -> tuple[bool, str]:
    errs = {name: gradient_check(name, trials=2, w=w) for name in
            ("bce", "cos_loss", "mag_loss", "refine_loss", "total_loss")}
    worst = max(errs.values())
    return worst < tol, ", ".join(f"{k} {v:.2g}" for k, v in errs.items())


def oracle_suite(sobel_fn=None, weights: losses.LossWeights | None = None) -> dict[str, tuple[bool, str]]:
    """Run every oracle; ``sobel_fn``/``weights`` let callers inject faults."""
    return {
        "sobel": check_sobel(sobel_fn),
        "dilation": check_dilation(),
        "bilinear": check_bilinear(),
        "hinge": check_hinge(weights),
        "loss_gradients": check_gradients(weights),
    }
