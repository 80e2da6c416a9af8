import numpy as np
import pytest
import torch


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


def square_mask(n=16, lo=4, hi=12):
    m = np.zeros((n, n), dtype=np.float32)
    m[lo:hi, lo:hi] = 1
    return m


def _tiny():
    from banet.model import ModelConfig

    return ModelConfig(stage_channels=(8, 16, 16, 16), bottlenecks_per_stage=(1, 1, 1, 1), max_channels=16,
                       stem_channels=8, mining_channels=8, mining_layers=1, fusion_channels=8)


TINY = _tiny()
