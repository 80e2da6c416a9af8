import math

import pytest
import torch

from banet.gradients import GradientField, gradient_field, image_gradient, prediction_gradient
from banet.losses import (LossWeights, bce, cos_loss, mag_loss, refine_loss, temperature_sigmoid,
                          total_loss)
from banet.oracles import gradient_check, _random_problem

D = torch.float64


def px(v):
    return torch.tensor([[float(v)]], dtype=D)


def field(m, gx, gy):
    return GradientField(px(m), px(gx), px(gy))


def test_temperature_sigmoid_values():
    x = torch.zeros(3, 3)
    assert torch.all(temperature_sigmoid(x, 7.0) == 0.5)
    assert temperature_sigmoid(torch.tensor(4.0), 4.0).item() == pytest.approx(1 / (1 + math.exp(-1)))
    assert temperature_sigmoid(torch.tensor(2.0), 8.0) < temperature_sigmoid(torch.tensor(2.0), 2.0)
    assert torch.isfinite(temperature_sigmoid(torch.tensor([1e4, -1e4]), 1.0)).all()
    with pytest.raises(ValueError):
        temperature_sigmoid(x, 0.0)


def test_bce_values():
    t = torch.ones(4, 4, dtype=D)
    assert bce(torch.full_like(t, 0.5), t).item() == pytest.approx(math.log(2), abs=1e-12)
    assert bce(torch.full_like(t, 0.25), t).item() == pytest.approx(-math.log(0.25), abs=1e-12)
    target = (torch.rand(5, 5) > 0.5).double()
    assert bce(target.clone(), target).item() == pytest.approx(0, abs=1e-6)
    with pytest.raises(ValueError):
        bce(torch.zeros(2, 2), torch.zeros(3, 2))


def test_cos_loss_values():
    assert cos_loss(field(1, 1, 0), field(3, -1, 0)).item() == 0
    assert cos_loss(field(1, 1, 0), field(2, 0, 1)).item() == pytest.approx(2)
    assert cos_loss(field(1, 0.6, 0.8), field(0, 0, 0)).item() == 0


def test_mag_loss_values():
    assert mag_loss(field(1, 1, 0), field(1.5, 1, 0), 1.5).item() == 0
    assert mag_loss(field(2, 1, 0), field(1, 1, 0), 1.5).item() == pytest.approx(2.0)
    assert mag_loss(field(0, 0, 0), field(5, 1, 0), 1.5).item() == 0


def test_refine_single_pixel():
    img, pred = field(0.2, 1, 0), field(0.4, 0.6, 0.8)
    # cos = (1 - 0.6) * 0.4 = 0.16 ; mag = max(1.5 * 0.2 - 0.4, 0) = 0
    assert refine_loss(img, pred, px(1)).item() == pytest.approx(0.5 * 0.16)


def test_refine_aggregation():
    z = torch.zeros(1, 2, dtype=D)
    img = GradientField(z, z, z)
    pred = GradientField(z, z, z)
    assert refine_loss(img, pred, torch.zeros(1, 2, dtype=D)).item() == 0
    assert refine_loss(img, pred, torch.ones(1, 2, dtype=D)).item() == 0


def test_refine_mean_of_boundary_terms():
    # two boundary pixels: cos 0.4 / mag 0.2 at one, zeros at the other, one pixel outside
    img = GradientField(torch.tensor([[0.0, 1.0, 9.0]], dtype=D), torch.tensor([[1.0, 1.0, 1.0]], dtype=D),
                        torch.zeros(1, 3, dtype=D))
    pred = GradientField(torch.tensor([[0.4, 1.5, 0.0]], dtype=D), torch.tensor([[0.0, 1.0, 0.0]], dtype=D),
                         torch.tensor([[1.0, 0.0, 0.0]], dtype=D))
    mask = torch.tensor([[1.0, 1.0, 0.0]], dtype=D)
    cos = cos_loss(img, pred)
    mag = mag_loss(img, pred, 1.5)
    assert cos[0, 0].item() == pytest.approx(0.4) and mag[0, 0].item() == 0
    want = (0.5 * 0.4 + 0.5 * 0.0 + 0.0) / 2
    assert refine_loss(img, pred, mask).item() == pytest.approx(want)


def test_refine_cos_and_mag_terms_combined():
    # per-pixel cos term 0.4 and mag term 0.2 -> 0.5 * 0.4 + 0.5 * 0.2
    img = GradientField(px(0.4), px(1.0), px(0.0))
    pred = GradientField(px(0.4), px(0.0), px(1.0))
    assert cos_loss(img, pred).item() == pytest.approx(0.4)
    assert mag_loss(img, pred, 1.5).item() == pytest.approx(0.2)
    assert refine_loss(img, pred, px(1)).item() == pytest.approx(0.3)


def _zero_field(shape=(4, 4)):
    z = torch.zeros(shape, dtype=D)
    return GradientField(z, z, z)


def test_total_composition():
    t = (torch.rand(6, 6) > 0.5).double()
    rep = total_loss(t.clone(), t, t.clone(), t, _zero_field((6, 6)), _zero_field((6, 6)), torch.zeros(6, 6, dtype=D))
    assert rep.total.item() == pytest.approx(0, abs=1e-5)


@pytest.mark.parametrize("enabled,expected", [(True, 1.5), (False, 1.2)])
def test_total_weights(monkeypatch, enabled, expected):
    import banet.losses as L

    vals = iter([1.0, 2.0])
    monkeypatch.setattr(L, "bce", lambda p, t: torch.tensor(next(vals), dtype=D))
    monkeypatch.setattr(L, "refine_loss", lambda *a, **k: torch.tensor(3.0, dtype=D))
    f = _zero_field()
    rep = L.total_loss(None, None, torch.zeros(1), None, f, f, torch.zeros(4, 4, dtype=D), refine_enabled=enabled)
    assert rep.total.item() == pytest.approx(expected)
    assert rep.refine.item() == 3.0


def _problem(seed=0):
    img, pred, pbound, seg_t, bound_t, mask = _random_problem(seed)
    return image_gradient(img), pred, pbound, seg_t, bound_t, mask


def test_report_identities():
    w = LossWeights()
    for seed in range(5):
        fi, pred, pbound, seg_t, bound_t, mask = _problem(seed)
        rep = total_loss(pred, seg_t, pbound, bound_t, fi, prediction_gradient(pred), mask, w)
        assert rep.total.item() == pytest.approx(0.6 * rep.seg.item() + 0.3 * rep.bound.item() + 0.1 * rep.refine.item(), abs=1e-9)
        assert rep.refine.item() == pytest.approx(0.5 * rep.cos.item() + 0.5 * rep.mag.item(), abs=1e-9)
        for v in rep.as_dict().values():
            assert v >= 0


def test_gamma_scaling():
    fi, pred, pbound, seg_t, bound_t, mask = _problem(1)
    pf = prediction_gradient(pred)
    a = total_loss(pred, seg_t, pbound, bound_t, fi, pf, mask, LossWeights(gamma=0.1))
    b = total_loss(pred, seg_t, pbound, bound_t, fi, pf, mask, LossWeights(gamma=0.2))
    base = 0.6 * a.seg + 0.3 * a.bound
    assert (b.total - base).item() == pytest.approx(2 * (a.total - base).item(), rel=1e-12)


def test_refine_locality():
    g = torch.Generator().manual_seed(5)
    fi, pred, *_ = _problem(2)
    mask = torch.zeros(6, 6, dtype=D)
    mask[1:4, 1:4] = 1
    # gradients at masked pixels depend on neighbours within 1 px (Sobel) and on min/max
    base = refine_loss(fi, gradient_field(pred), mask)
    for i, j in [(5, 5), (0, 5), (5, 0)]:
        p = pred.clone()
        p[i, j] = 0.5 + 0.01 * torch.rand((), generator=g, dtype=D)
        assert refine_loss(fi, gradient_field(p), mask).item() == base.item()


@pytest.mark.parametrize("name", ["bce", "cos_loss", "mag_loss", "refine_loss", "total_loss"])
def test_finite_difference_gradients(name):
    assert gradient_check(name, trials=3) < 1e-4


def test_phase_gating_gradients_identical():
    from banet.losses import compute_losses
    from banet.model import BANet, ModelConfig

    model = BANet(ModelConfig())
    x = torch.rand(2, 3, 64, 64)
    seg = (torch.rand(2, 1, 64, 64) > 0.5).float()
    bound = (torch.rand(2, 1, 64, 64) > 0.5).float()
    w = LossWeights()

    def grads(with_refine_report):
        model.zero_grad()
        out = model(x)
        if with_refine_report:
            total = compute_losses(out, x, seg, bound, w, refine_enabled=False).total
        else:
            total = w.alpha * bce(out.confidence, seg) + w.beta * bce(out.attention, bound)
        total.backward()
        return [p.grad.clone() for p in model.parameters()]

    for a, b in zip(grads(True), grads(False)):
        assert torch.equal(a, b)
