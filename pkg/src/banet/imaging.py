"""Image and mask rasters: file I/O, min-max normalization and resizing.

Images are ``H x W x 3`` float arrays in [0, 1] (RGB order); masks are
``H x W`` float arrays in [0, 1].  Everything here is a pure function.
"""
from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image as PILImage

MASK_ROLES = ("seg_target", "boundary_target", "attention", "confidence")
TARGET_ROLES = ("seg_target", "boundary_target")
MIN_SIDE = 8


class ImageFormatError(ValueError):
    """Raised when a raster file cannot be interpreted as requested."""


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got shape {img.shape}")
    if img.shape[0] < MIN_SIDE or img.shape[1] < MIN_SIDE:
        raise ValueError(f"image must be at least {MIN_SIDE}x{MIN_SIDE}, got {img.shape[:2]}")
    if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 1:
        raise ValueError("image values must be finite and within [0, 1]")
    return img


def check_mask(mask: np.ndarray, role: str = "seg_target") -> np.ndarray:
    if role not in MASK_ROLES:
        raise ValueError(f"unknown mask role {role!r}; expected one of {MASK_ROLES}")
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"expected H x W mask, got shape {mask.shape}")
    if not np.all(np.isfinite(mask)) or mask.min() < 0 or mask.max() > 1:
        raise ValueError("mask values must be finite and within [0, 1]")
    if role in TARGET_ROLES and not np.all((mask == 0) | (mask == 1)):
        raise ValueError(f"{role} mask must be binary")
    return mask


def _open(path) -> PILImage.Image:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        im = PILImage.open(path)
        im.load()
    except Exception as exc:  # PIL raises a zoo of exception types
        raise ImageFormatError(f"cannot decode {path}: {exc}") from exc
    return im


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG/JPEG as a float32 RGB array in [0, 1].

    Grayscale input is replicated to three channels; an alpha channel is
    dropped with a warning.
    """
    im = _open(path)
    if im.mode in ("RGBA", "LA", "PA") or (im.mode == "P" and "transparency" in im.info):
        warnings.warn(f"{path}: dropping alpha channel", stacklevel=2)
    if im.mode in ("L", "LA", "I;16", "I", "F", "1"):
        arr = np.asarray(im.convert("L"))
        arr = np.repeat(arr[..., None], 3, axis=2)
    else:
        arr = np.asarray(im.convert("RGB"))
    return arr.astype(np.float32) / 255.0


def load_mask(path, role: str = "seg_target") -> np.ndarray:
    """Read a single-channel 8-bit PNG mask.

    Target roles are binarized with ``value > 127``; attention/confidence
    roles keep the continuous value ``v / 255``.
    """
    if role not in MASK_ROLES:
        raise ValueError(f"unknown mask role {role!r}; expected one of {MASK_ROLES}")
    im = _open(path)
    if im.mode not in ("L", "1", "P"):
        raise ImageFormatError(f"{path}: mask must be single-channel, got mode {im.mode}")
    if im.mode == "P":
        # palette masks are common in segmentation sets; only accept gray palettes
        rgb = np.asarray(im.convert("RGB"))
        if not (np.array_equal(rgb[..., 0], rgb[..., 1]) and np.array_equal(rgb[..., 1], rgb[..., 2])):
            raise ImageFormatError(f"{path}: mask must be single-channel, got a color palette")
        arr = rgb[..., 0]
    else:
        arr = np.asarray(im.convert("L"))
    if role in TARGET_ROLES:
        return (arr > 127).astype(np.float32)
    return arr.astype(np.float32) / 255.0


def to_uint8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(arr, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_mask(mask: np.ndarray, path) -> None:
    """Write a mask as an 8-bit grayscale PNG (0 -> 0, 1 -> 255)."""
    PILImage.fromarray(to_uint8(mask)).save(path)


def save_image(img: np.ndarray, path) -> None:
    PILImage.fromarray(to_uint8(img)).save(path)


def minmax_normalize(x):
    """Rescale to [0, 1] via ``(x - min) / (max - min)``.

    Works on numpy arrays and torch tensors.  For inputs with two or more
    dimensions the extrema are taken over the last two (spatial) axes, so a
    batch of maps is normalized map by map.  A constant map becomes all
    zeros.
    """
    if isinstance(x, torch.Tensor):
        dims = tuple(range(max(x.dim() - 2, 0), x.dim()))
        lo = x.amin(dim=dims, keepdim=True)
        hi = x.amax(dim=dims, keepdim=True)
        span = hi - lo
        flat = span <= 0
        return torch.where(flat, torch.zeros_like(x), (x - lo) / torch.where(flat, torch.ones_like(span), span))
    x = np.asarray(x, dtype=np.float64 if np.asarray(x).dtype.kind in "iub" else None)
    axes = tuple(range(max(x.ndim - 2, 0), x.ndim))
    lo = x.min(axis=axes, keepdims=True)
    hi = x.max(axis=axes, keepdims=True)
    span = hi - lo
    flat = span <= 0
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (x - lo) / np.where(flat, 1, span)
    return np.where(flat, 0, out).astype(x.dtype, copy=False)


def resize_bilinear(arr: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling.

    Accepts ``H x W`` or ``H x W x C`` arrays.  The same convention
    (``align_corners=True``) is used for upsampling inside the model.
    """
    if new_h < 1 or new_w < 1:
        raise ValueError(f"target size must be positive, got {new_h}x{new_w}")
    arr = np.asarray(arr)
    if arr.shape[:2] == (new_h, new_w):
        return arr.copy()
    t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float64))
    if arr.ndim == 2:
        t = t[None, None]
    else:
        t = t.permute(2, 0, 1)[None]
    out = F.interpolate(t, size=(new_h, new_w), mode="bilinear", align_corners=True)
    out = out[0, 0] if arr.ndim == 2 else out[0].permute(1, 2, 0)
    # interpolation weights sum to one but rounding can overshoot the hull by an ulp
    out = out.clamp(float(arr.min()), float(arr.max()))
    return out.numpy().astype(arr.dtype if arr.dtype.kind == "f" else np.float64)


def resize_mask(mask: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Resize a binary mask bilinearly and re-binarize at 0.5."""
    return (resize_bilinear(mask.astype(np.float32), new_h, new_w) > 0.5).astype(np.float32)


def image_to_tensor(img: np.ndarray) -> torch.Tensor:
    """``H x W x 3`` array -> ``3 x H x W`` float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(np.asarray(img, dtype=np.float32).transpose(2, 0, 1)))
