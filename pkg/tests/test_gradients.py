import numpy as np
import pytest
import torch

from banet.gradients import GradientField, field_from_components, gradient_field, image_gradient, sobel
from banet.oracles import SOBEL_X, SOBEL_Y, autograd_grad, brute_cross_correlation, finite_difference_grad, relative_error


def test_constant_map_is_zero():
    gx, gy = sobel(torch.full((6, 9), 3.7, dtype=torch.float64))
    assert (gx == 0).all() and (gy == 0).all()
    f = gradient_field(torch.full((6, 9), 3.7, dtype=torch.float64))
    assert (f.magnitude == 0).all() and (f.gx == 0).all() and (f.gy == 0).all()


def test_horizontal_ramp():
    x = torch.arange(8, dtype=torch.float64).repeat(6, 1)
    gx, gy = sobel(x)
    assert torch.all(gx[:, 1:-1] == -8)
    assert torch.all(gy == 0)
    # replicated border halves the step at the edges
    assert torch.all(gx[:, 0] == -4) and torch.all(gx[:, -1] == -4)


def test_matches_brute_force(rng):
    for _ in range(100):
        m = rng.random((8, 8))
        gx, gy = sobel(torch.from_numpy(m))
        assert np.abs(gx.numpy()[1:-1, 1:-1] - brute_cross_correlation(m, SOBEL_X)[1:-1, 1:-1]).max() <= 1e-12
        assert np.abs(gy.numpy()[1:-1, 1:-1] - brute_cross_correlation(m, SOBEL_Y)[1:-1, 1:-1]).max() <= 1e-12


def test_transpose_swaps_components(rng):
    m = torch.from_numpy(rng.random((8, 8)))
    gx, gy = sobel(m)
    tx, ty = sobel(m.T)
    assert torch.allclose(tx, gy.T, atol=1e-12)
    assert torch.allclose(ty, gx.T, atol=1e-12)


def test_batched_shapes():
    x = torch.rand(2, 1, 10, 12, dtype=torch.float64)
    gx, gy = sobel(x)
    assert gx.shape == x.shape
    gx0, _ = sobel(x[1, 0])
    assert torch.equal(gx[1, 0], gx0)


def test_too_small():
    with pytest.raises(ValueError):
        sobel(torch.zeros(2, 5))


def test_pythagorean_pixel():
    f = field_from_components(torch.tensor([[3.0]], dtype=torch.float64), torch.tensor([[4.0]], dtype=torch.float64))
    assert f.magnitude.item() == 5.0
    assert f.gx.item() == pytest.approx(0.6) and f.gy.item() == pytest.approx(0.8)
    assert f.direction.shape == (1, 1, 2)


def test_field_matches_per_pixel_oracle(rng):
    m = rng.random((8, 8))
    f = gradient_field(torch.from_numpy(m))
    gx = brute_cross_correlation(m, SOBEL_X)
    gy = brute_cross_correlation(m, SOBEL_Y)
    for i in range(1, 7):
        for j in range(1, 7):
            mag = np.hypot(gx[i, j], gy[i, j])
            assert f.magnitude[i, j].item() == pytest.approx(mag, abs=1e-12)
            assert f.gx[i, j].item() == pytest.approx(gx[i, j] / mag, abs=1e-12)
            assert f.gy[i, j].item() == pytest.approx(gy[i, j] / mag, abs=1e-12)


def test_unit_norm_contract(rng):
    for _ in range(20):
        m = torch.from_numpy(rng.random((9, 11)) * (rng.random((9, 11)) > 0.5))
        f = gradient_field(m)
        norm = torch.sqrt(f.gx ** 2 + f.gy ** 2)
        live = f.magnitude > 1e-8
        assert torch.all((norm[live] - 1).abs() <= 1e-6)
        assert torch.all(norm[~live] == 0)
        assert torch.all(f.magnitude >= 0)


def _rgb(arr):
    return torch.from_numpy(np.repeat(np.asarray(arr, dtype=np.float64)[None], 3, axis=0))


def test_image_gradient_constant():
    f = image_gradient(torch.full((3, 8, 8), 0.4, dtype=torch.float64))
    assert (f.magnitude == 0).all()


def test_image_gradient_vertical_seam():
    img = np.zeros((8, 8))
    img[:, 4:] = 1
    f = image_gradient(_rgb(img))
    seam = f.magnitude[:, 3:5]
    assert torch.all(seam == f.magnitude.max())
    assert torch.all(f.magnitude[:, :3] == 0) and torch.all(f.magnitude[:, 5:] == 0)
    assert torch.all(f.gx[:, 3:5].abs() == 1) and torch.all(f.gy[:, 3:5] == 0)


def test_image_gradient_scale_invariance(rng):
    img = torch.from_numpy(rng.random((3, 10, 10)))
    a, b = image_gradient(img), image_gradient(0.5 * img)
    c = image_gradient(3 * img + 0.2)
    for u, v, w in zip(a, b, c):
        assert torch.allclose(u, v, atol=1e-12)
        assert torch.allclose(u, w, atol=1e-10)


def test_magnitude_and_direction_differentiable():
    g = torch.Generator().manual_seed(3)
    for _ in range(5):
        x = torch.rand(5, 5, generator=g, dtype=torch.float64)
        w = torch.rand(5, 5, generator=g, dtype=torch.float64)

        def f(t):
            fld = gradient_field(t)
            return (fld.magnitude * w).sum() + (fld.gx * w).sum() - (fld.gy * w.T).sum()

        assert relative_error(autograd_grad(f, x), finite_difference_grad(f, x.clone())) < 1e-4


def test_flat_region_has_finite_gradient():
    x = torch.zeros(6, 6, dtype=torch.float64, requires_grad=True)
    f = gradient_field(x)
    (f.magnitude.sum() + f.gx.sum()).backward()
    assert torch.isfinite(x.grad).all()
