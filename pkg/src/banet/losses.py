"""Training objectives.

total = alpha * seg + beta * bound + gamma * refine, where seg and bound
are binary cross-entropies and refine combines a gradient-direction term
and a gradient-magnitude hinge, averaged over the boundary band.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import torch

from .gradients import GradientField, image_gradient, prediction_gradient

BCE_EPS = 1e-7


@dataclass
class LossWeights:
    alpha: float = 0.6
    beta: float = 0.3
    gamma: float = 0.1
    gamma1: float = 0.5
    gamma2: float = 0.5
    lam: float = 1.5
    # not given in the source; see README
    temperature: float = 4.0
    width: float = 50.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "gamma1", "gamma2", "lam", "width"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0, got {getattr(self, name)}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")


@dataclass
class LossReport:
    seg: torch.Tensor
    bound: torch.Tensor
    cos: torch.Tensor
    mag: torch.Tensor
    refine: torch.Tensor
    total: torch.Tensor

    def as_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name).detach()) for f in fields(self)}


def temperature_sigmoid(x: torch.Tensor, temperature: float) -> torch.Tensor:
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    return torch.sigmoid(x / temperature)


def bce(pred: torch.Tensor, target: torch.Tensor, eps: float = BCE_EPS) -> torch.Tensor:
    """Mean binary cross-entropy; ``pred`` is clamped to ``[eps, 1 - eps]``."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    p = pred.clamp(eps, 1.0 - eps)
    return -(target * torch.log(p) + (1.0 - target) * torch.log1p(-p)).mean()


def _check_fields(a: GradientField, b: GradientField):
    if a.magnitude.shape != b.magnitude.shape:
        raise ValueError(f"field shape mismatch: {tuple(a.magnitude.shape)} vs {tuple(b.magnitude.shape)}")


def cos_loss(img_field: GradientField, pred_field: GradientField) -> torch.Tensor:
    """Per-pixel ``(1 - |v_img . v_pred|) * m_pred``."""
    _check_fields(img_field, pred_field)
    dot = img_field.gx * pred_field.gx + img_field.gy * pred_field.gy
    return (1.0 - dot.abs()) * pred_field.magnitude


def mag_loss(img_field: GradientField, pred_field: GradientField, lam: float = 1.5) -> torch.Tensor:
    """Per-pixel hinge ``max(lam * m_img - m_pred, 0)``."""
    _check_fields(img_field, pred_field)
    return torch.clamp(lam * img_field.magnitude - pred_field.magnitude, min=0.0)


def _masked_mean(values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    count = mask.sum()
    if count <= 0:
        return values.sum() * 0.0
    return (values * mask).sum() / count


def refine_loss(
    img_field: GradientField,
    pred_field: GradientField,
    m_bound: torch.Tensor,
    gamma1: float = 0.5,
    gamma2: float = 0.5,
    lam: float = 1.5,
) -> torch.Tensor:
    """Mean of ``gamma1 * cos + gamma2 * mag`` over boundary pixels (0 if none).

    For batched inputs the mean is pooled over every boundary pixel in the batch.
    """
    if m_bound.shape != pred_field.magnitude.shape:
        raise ValueError(f"mask shape {tuple(m_bound.shape)} does not match field {tuple(pred_field.magnitude.shape)}")
    per_pixel = gamma1 * cos_loss(img_field, pred_field) + gamma2 * mag_loss(img_field, pred_field, lam)
    return _masked_mean(per_pixel, m_bound)


def total_loss(
    pred_seg: torch.Tensor,
    seg_target: torch.Tensor,
    pred_bound: torch.Tensor | None,
    bound_target: torch.Tensor,
    img_field: GradientField,
    pred_field: GradientField,
    m_bound: torch.Tensor,
    w: LossWeights | None = None,
    refine_enabled: bool = True,
) -> LossReport:
    """Weighted sum of the three objectives.

    With ``refine_enabled=False`` the refine term is still computed and
    reported (detached) but left out of ``total``.  ``pred_bound=None``
    drops the attention loss, for models without an attention head.
    """
    w = w or LossWeights()
    seg = bce(pred_seg, seg_target)
    bound = bce(pred_bound, bound_target) if pred_bound is not None else seg.new_zeros(())
    cos = _masked_mean(cos_loss(img_field, pred_field), m_bound)
    mag = _masked_mean(mag_loss(img_field, pred_field, w.lam), m_bound)
    refine = refine_loss(img_field, pred_field, m_bound, w.gamma1, w.gamma2, w.lam)
    total = w.alpha * seg + w.beta * bound
    if refine_enabled:
        total = total + w.gamma * refine
    else:
        cos, mag, refine = cos.detach(), mag.detach(), refine.detach()
    return LossReport(seg=seg, bound=bound, cos=cos, mag=mag, refine=refine, total=total)


def compute_losses(output, image: torch.Tensor, seg_target: torch.Tensor, bound_target: torch.Tensor,
                   w: LossWeights | None = None, refine_enabled: bool = True,
                   use_bound_loss: bool = True) -> LossReport:
    """Losses for a model forward pass on a batch.

    ``image`` is ``N x 3 x H x W``; targets and the model's maps are
    ``N x 1 x H x W``.  The image field is treated as data (no gradient).
    """
    with torch.no_grad():
        img_field = image_gradient(image)
    img_field = GradientField(*(t.unsqueeze(1) for t in img_field))
    if refine_enabled:
        pred_field = prediction_gradient(output.confidence)
    else:
        with torch.no_grad():
            pred_field = prediction_gradient(output.confidence)
    pred_bound = output.attention if (use_bound_loss and output.attention is not None) else None
    return total_loss(output.confidence, seg_target, pred_bound, bound_target,
                      img_field, pred_field, bound_target, w, refine_enabled)
