"""Boundary-area targets built from binary portrait annotations.

The semantic edge of a mask is dilated with a square structuring element
whose side scales with the portrait's share of the image:

    k = odd_ceil(round(S_portrait / (S_portrait + S_background) * W))

The resulting band supervises the boundary attention map and also serves
as the mask that restricts the refine loss.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

DEFAULT_WIDTH = 50


@dataclass(frozen=True)
class DilationSpec:
    portrait_area: int
    background_area: int
    canonical_width: float = DEFAULT_WIDTH

    def __post_init__(self):
        if self.canonical_width <= 0:
            raise ValueError(f"canonical width must be positive, got {self.canonical_width}")
        if self.portrait_area < 0 or self.background_area < 0:
            raise ValueError("areas must be non-negative")
        if self.portrait_area + self.background_area == 0:
            raise ValueError("total area must be positive")

    @classmethod
    def from_mask(cls, seg_target: np.ndarray, canonical_width: float = DEFAULT_WIDTH) -> "DilationSpec":
        portrait = int(np.count_nonzero(np.asarray(seg_target) > 0.5))
        return cls(portrait, int(np.asarray(seg_target).size) - portrait, canonical_width)

    @property
    def portrait_fraction(self) -> float:
        return self.portrait_area / (self.portrait_area + self.background_area)


def dilation_kernel_size(spec: DilationSpec) -> int:
    """Side of the square dilation element: nearest integer, bumped to odd, at least 1."""
    raw = math.floor(spec.portrait_fraction * spec.canonical_width + 0.5)
    k = max(raw, 1)
    if k % 2 == 0:
        k += 1
    return k


def detect_edges(seg_target: np.ndarray) -> np.ndarray:
    """Mark every pixel whose 4-neighbourhood contains both classes.

    Both sides of a class change are marked, so the rule is symmetric under
    ``mask -> 1 - mask``.  Pixels outside the image are not neighbours.
    """
    m = np.asarray(seg_target) > 0.5
    edges = np.zeros(m.shape, dtype=bool)
    dv = m[1:, :] != m[:-1, :]
    dh = m[:, 1:] != m[:, :-1]
    edges[1:, :] |= dv
    edges[:-1, :] |= dv
    edges[:, 1:] |= dh
    edges[:, :-1] |= dh
    return edges.astype(np.float32)


def dilate_square(edges: np.ndarray, k: int) -> np.ndarray:
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel side must be odd and positive, got {k}")
    edges = np.asarray(edges) > 0.5
    if k == 1 or not edges.any():
        return edges.astype(np.float32)
    return ndimage.binary_dilation(edges, structure=np.ones((k, k), dtype=bool)).astype(np.float32)


def make_boundary_target(seg_target: np.ndarray, width: float = DEFAULT_WIDTH, kernel_size: int | None = None) -> np.ndarray:
    """Binary boundary band around the annotation's semantic edge.

    ``kernel_size`` overrides the area-adaptive side computed from ``width``.
    """
    seg_target = np.asarray(seg_target)
    if kernel_size is None:
        kernel_size = dilation_kernel_size(DilationSpec.from_mask(seg_target, width))
    return dilate_square(detect_edges(seg_target), kernel_size)
