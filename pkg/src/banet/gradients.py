"""Gradient Calculation Layer: Sobel magnitude and unit direction in torch.

All functions operate on the last two axes of a tensor, so ``H x W``,
``N x H x W`` and ``N x 1 x H x W`` inputs all work, and stay inside the
autograd graph.
"""
from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn.functional as F

from .imaging import minmax_normalize

EPS = 1e-8

# cross-correlation kernels, applied unflipped
SOBEL_X = ((1.0, 0.0, -1.0), (2.0, 0.0, -2.0), (1.0, 0.0, -1.0))
SOBEL_Y = ((1.0, 2.0, 1.0), (0.0, 0.0, 0.0), (-1.0, -2.0, -1.0))


class GradientField(NamedTuple):
    magnitude: torch.Tensor
    gx: torch.Tensor
    gy: torch.Tensor

    @property
    def direction(self) -> torch.Tensor:
        """Unit direction stacked on a trailing axis of size 2."""
        return torch.stack((self.gx, self.gy), dim=-1)


def sobel(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(G_x, G_y)`` with edge-replicated borders, same shape as ``x``.

    Evaluated as a difference followed by a [1, 2, 1] smoothing pass, which
    equals cross-correlation with the kernels above and is exactly zero on
    constant maps.
    """
    if x.dim() < 2 or x.shape[-1] < 3 or x.shape[-2] < 3:
        raise ValueError(f"sobel needs a map of at least 3x3, got shape {tuple(x.shape)}")
    shape = x.shape
    p = F.pad(x.reshape(-1, 1, shape[-2], shape[-1]), (1, 1, 1, 1), mode="replicate")[:, 0]
    dx = p[:, :, :-2] - p[:, :, 2:]
    gx = dx[:, :-2] + 2 * dx[:, 1:-1] + dx[:, 2:]
    dy = p[:, :-2, :] - p[:, 2:, :]
    gy = dy[:, :, :-2] + 2 * dy[:, :, 1:-1] + dy[:, :, 2:]
    return gx.reshape(shape), gy.reshape(shape)


def _safe_sqrt(s: torch.Tensor) -> torch.Tensor:
    # sqrt has an infinite derivative at 0; flat pixels get value 0 and gradient 0
    pos = s > 0
    return torch.where(pos, torch.sqrt(torch.where(pos, s, torch.ones_like(s))), torch.zeros_like(s))


def field_from_components(gx: torch.Tensor, gy: torch.Tensor, eps: float = EPS) -> GradientField:
    mag = _safe_sqrt(gx * gx + gy * gy)
    live = mag > eps
    denom = torch.where(live, mag, torch.ones_like(mag))
    zero = torch.zeros_like(mag)
    return GradientField(mag, torch.where(live, gx / denom, zero), torch.where(live, gy / denom, zero))


def gradient_field(x: torch.Tensor, eps: float = EPS) -> GradientField:
    """Sobel magnitude ``sqrt(Gx^2 + Gy^2)`` and direction ``(Gx, Gy) / M``.

    The direction is ``(0, 0)`` wherever ``M <= eps``.
    """
    gx, gy = sobel(x)
    return field_from_components(gx, gy, eps)


def to_gray(img: torch.Tensor) -> torch.Tensor:
    """Channel mean of a ``... x 3 x H x W`` image."""
    if img.dim() < 3 or img.shape[-3] != 3:
        raise ValueError(f"expected a channel-first RGB tensor, got shape {tuple(img.shape)}")
    return img.mean(dim=-3)


def image_gradient(img: torch.Tensor) -> GradientField:
    """Field of an RGB image: channel mean, min-max normalize, then Sobel.

    Returns maps shaped like the image without its channel axis.
    """
    return gradient_field(minmax_normalize(to_gray(img)))


def prediction_gradient(pred: torch.Tensor) -> GradientField:
    """Field of a confidence map, normalized independently of the image."""
    return gradient_field(minmax_normalize(pred))
