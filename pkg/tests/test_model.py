import pytest
import torch
import torch.nn as nn

from banet.losses import LossWeights, compute_losses
from banet.model import BANet, FeatureFusion, MiningBranch, ModelConfig, count_parameters, parameter_megabytes

from conftest import square_mask


def _batch(n=2, size=64, seed=0):
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(n, 3, size, size, generator=g)
    seg = torch.from_numpy(square_mask(size, size // 4, 3 * size // 4))[None, None].repeat(n, 1, 1, 1)
    return x, seg


@pytest.mark.parametrize("size", [32, 64, 96])
def test_output_shapes(size):
    model = BANet().eval()
    out = model(torch.rand(2, 3, size, size))
    assert out.confidence.shape == (2, 1, size, size)
    assert out.attention.shape == (2, 1, size, size)
    assert out.attention_logits.shape == (2, 1, size, size)
    assert 0 <= out.confidence.min() and out.confidence.max() <= 1


def test_rectangular_input():
    out = BANet().eval()(torch.rand(1, 3, 64, 128))
    assert out.confidence.shape == (1, 1, 64, 128)


@pytest.mark.parametrize("size", [(50, 64), (64, 70)])
def test_indivisible_size_rejected(size):
    with pytest.raises(ValueError, match="divisible by 32"):
        BANet()(torch.rand(1, 3, *size))


def test_no_attention_variant():
    model = BANet(ModelConfig(use_attention=False)).eval()
    out = model(torch.rand(1, 3, 64, 64))
    assert out.attention is None and out.confidence.shape == (1, 1, 64, 64)
    assert model.mining.in_channels == 3
    assert BANet().mining.in_channels == 4


def test_mining_channel_check():
    m = MiningBranch(4, 8, 2)
    with pytest.raises(ValueError):
        m(torch.rand(1, 3, 32, 32))
    with pytest.raises(ValueError):
        m(torch.rand(1, 3, 32, 32), torch.rand(1, 1, 16, 16))
    assert m(torch.rand(1, 3, 32, 32), torch.rand(1, 1, 32, 32)).shape == (1, 8, 32, 32)


def test_every_parameter_gets_gradient():
    model = BANet()
    names = {n for n, _ in model.named_parameters()}
    touched = set()
    for seed in range(5):
        torch.manual_seed(seed)
        x, seg = _batch(seed=seed)
        model.zero_grad()
        out = model(x)
        rep = compute_losses(out, x, seg, seg.clone(), LossWeights(), refine_enabled=True)
        rep.total.backward()
        touched |= {n for n, p in model.named_parameters() if p.grad is not None and p.grad.abs().sum() > 0}
    assert touched == names


def test_eval_determinism():
    model = BANet().eval()
    x = torch.rand(2, 3, 64, 64)
    with torch.no_grad():
        a, b = model(x), model(x)
    assert torch.equal(a.confidence, b.confidence) and torch.equal(a.attention, b.attention)


def test_batch_permutation_equivariant():
    model = BANet().eval()
    x = torch.rand(3, 3, 64, 64)
    perm = torch.tensor([2, 0, 1])
    with torch.no_grad():
        a = model(x).confidence
        b = model(x[perm]).confidence
    assert torch.allclose(a[perm], b, atol=1e-6)


def test_attention_feeds_mining_branch():
    model = BANet().eval()
    x = torch.rand(1, 3, 64, 64)
    with torch.no_grad():
        high = model.semantic(x)
        _, att = model.attention_head(high, (64, 64))
        a = model.mining(x, att)
        b = model.mining(x, 1 - att)
    assert not torch.equal(a, b)


def test_zero_projection_gives_half_attention():
    model = BANet().eval()
    nn.init.zeros_(model.attention_head.proj.weight)
    nn.init.zeros_(model.attention_head.proj.bias)
    with torch.no_grad():
        out = model(torch.rand(1, 3, 64, 64))
    assert torch.all(out.attention == 0.5)


def test_fusion_weights_range():
    ffm = FeatureFusion(24, 32)
    feat = ffm.conv(torch.rand(2, 24, 16, 16))
    w = ffm.channel_weights(feat)
    assert w.shape == (2, 32, 1, 1)
    assert torch.all((w > 0) & (w < 1))
    with pytest.raises(ValueError):
        ffm(torch.rand(1, 8, 16, 16), torch.rand(1, 8, 16, 16))


def test_parameter_counts():
    assert count_parameters(nn.Conv2d(4, 8, 3)) == 296
    small = count_parameters(ModelConfig.banet64())
    big = count_parameters(ModelConfig.banet512())
    assert 300_000 <= small <= 1_000_000
    assert big > 10 * small
    assert parameter_megabytes(2**18) == 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(stage_channels=(32, 64))
    with pytest.raises(ValueError):
        ModelConfig(stage_channels=(32, 64, 64, 128))
    with pytest.raises(ValueError):
        ModelConfig(temperature=0)
    with pytest.raises(ValueError):
        ModelConfig.named("banet9000")
    assert ModelConfig(**ModelConfig.banet512().to_dict()) == ModelConfig.banet512()
