import math

import pytest
import torch
import torch.nn as nn

from banet.data import PortraitDataset
from banet.model import BANet
from banet.synthetic import SyntheticSpec, make_arrays
from banet.trainer import (CheckpointError, NonFiniteLossError, TrainConfig, Trainer, load_checkpoint,
                           lr_schedule, make_optimizer, model_from_checkpoint, save_checkpoint, start_finetune)

from conftest import TINY


@pytest.fixture(scope="module")
def dataset():
    imgs, masks = make_arrays(SyntheticSpec(n_images=4, size=64, seed=1))
    return PortraitDataset.from_arrays(imgs, masks, size=64)


def _cfg(**kw):
    base = dict(iterations=20, batch_size=2, seed=0, lr_max=0.05)
    base.update(kw)
    return TrainConfig(**base)


def test_schedule_shape():
    cfg = TrainConfig(iterations=1000, warmup_iterations=100)
    lrs = [lr_schedule(i, cfg) for i in range(1000)]
    assert lrs[0] == 0.0
    assert lrs[100] == pytest.approx(0.1)
    assert lrs[50] == pytest.approx(0.05)
    assert all(a < b for a, b in zip(lrs[:100], lrs[1:101]))
    assert all(a > b for a, b in zip(lrs[100:-1], lrs[101:]))
    assert max(lrs) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        lr_schedule(1000, cfg)


@pytest.mark.parametrize("decay", ["cosine", "step"])
def test_other_decays(decay):
    cfg = TrainConfig(iterations=300, warmup_iterations=30, decay=decay)
    lrs = [lr_schedule(i, cfg) for i in range(300)]
    assert lrs[30] == pytest.approx(0.1)
    assert all(a >= b for a, b in zip(lrs[30:-1], lrs[31:]))


def test_default_warmup_is_five_percent():
    assert TrainConfig(iterations=40000).warmup_iterations == 2000


def test_train_config_validation():
    for bad in [dict(lr_max=0), dict(momentum=1.0), dict(phase="polish"), dict(decay="exp"),
                dict(iterations=10, warmup_iterations=10), dict(batch_size=0)]:
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_plain_sgd_update():
    lin = nn.Linear(3, 1)
    cfg = TrainConfig(momentum=0.0, weight_decay=0.0, lr_max=0.1)
    opt = make_optimizer(lin, cfg)
    before = [p.detach().clone() for p in lin.parameters()]
    lin(torch.ones(2, 3)).sum().backward()
    grads = [p.grad.clone() for p in lin.parameters()]
    opt.step()
    for b, g, p in zip(before, grads, lin.parameters()):
        assert torch.allclose(p.detach(), b - 0.1 * g)


def test_weight_decay_shrinks():
    lin = nn.Linear(3, 1)
    cfg = TrainConfig(momentum=0.0, weight_decay=0.01, lr_max=0.1)
    opt = make_optimizer(lin, cfg)
    before = lin.weight.detach().clone()
    for p in lin.parameters():
        p.grad = torch.zeros_like(p)
    opt.step()
    assert torch.allclose(lin.weight.detach(), before * (1 - 0.1 * 0.01))


def test_pretrain_never_updates_from_refine(dataset):
    torch.manual_seed(0)
    tr = Trainer(BANet(TINY), dataset, _cfg(phase="pretrain"))
    batch = tr.stream.batch_at(0)
    rep = tr.losses(batch)
    assert not rep.refine.requires_grad
    assert rep.total.item() == pytest.approx(0.6 * rep.seg.item() + 0.3 * rep.bound.item(), rel=1e-6)


def test_smoke_loss_decreases(dataset):
    torch.manual_seed(0)
    tr = Trainer(BANet(TINY), dataset, _cfg(iterations=60, warmup_iterations=3, phase="finetune"))
    hist = tr.train()
    totals = [h["total"] for h in hist]
    first, last = sum(totals[:5]) / 5, sum(totals[-5:]) / 5
    assert last < first
    assert all(math.isfinite(t) for t in totals)


def test_resume_matches_uninterrupted(dataset, tmp_path):
    cfg = _cfg(iterations=8, warmup_iterations=2, phase="finetune")
    torch.manual_seed(0)
    full = Trainer(BANet(TINY), dataset, cfg)
    full.train()
    torch.manual_seed(0)
    part = Trainer(BANet(TINY), dataset, cfg)
    part.train(4)
    ckpt = part.save(tmp_path / "mid.pt")
    resumed = Trainer.resume(ckpt, dataset, cfg)
    resumed.train()
    assert part.history + resumed.history == full.history
    for a, b in zip(full.model.state_dict().values(), resumed.model.state_dict().values()):
        assert torch.equal(a, b)


def test_resume_config_mismatch(dataset, tmp_path):
    tr = Trainer(BANet(TINY), dataset, _cfg())
    ckpt = tr.save(tmp_path / "c.pt")
    with pytest.raises(CheckpointError, match="batch_size"):
        Trainer.resume(ckpt, dataset, _cfg(batch_size=3))


def test_corrupted_checkpoint(tmp_path):
    path = save_checkpoint(tmp_path / "c.pt", {"a": torch.arange(5)})
    assert torch.equal(load_checkpoint(path)["a"], torch.arange(5))
    outer = torch.load(path, weights_only=False)
    payload = bytearray(outer["payload"])
    payload[len(payload) // 2] ^= 0xFF
    outer["payload"] = bytes(payload)
    torch.save(outer, path)
    with pytest.raises(CheckpointError, match="integrity"):
        load_checkpoint(path)
    (tmp_path / "junk.pt").write_bytes(b"junk")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.pt")


def test_non_finite_abort(dataset, tmp_path):
    model = BANet(TINY)
    with torch.no_grad():
        model.head.bias.fill_(float("nan"))
    tr = Trainer(model, dataset, _cfg(), run_dir=tmp_path)
    with pytest.raises(NonFiniteLossError) as err:
        tr.step()
    assert err.value.snapshot is not None and err.value.snapshot.exists()
    assert tr.iteration == 0


def test_finetune_starts_fresh(dataset, tmp_path):
    torch.manual_seed(0)
    pre = Trainer(BANet(TINY), dataset, _cfg(iterations=3, warmup_iterations=1))
    pre.train()
    ckpt = pre.save(tmp_path / "pre.pt")
    ft = start_finetune(ckpt, dataset, _cfg(iterations=3, warmup_iterations=1, phase="finetune"))
    assert ft.iteration == 0 and not ft.optimizer.state
    for a, b in zip(pre.model.state_dict().values(), ft.model.state_dict().values()):
        assert torch.equal(a, b)
    with pytest.raises(ValueError):
        start_finetune(ckpt, dataset, _cfg())


def test_run_dir_outputs(dataset, tmp_path):
    tr = Trainer(BANet(TINY), dataset, _cfg(iterations=4, warmup_iterations=1, checkpoint_every=2), run_dir=tmp_path)
    tr.train()
    assert len((tmp_path / "train_log.jsonl").read_text().splitlines()) == 4
    assert (tmp_path / "ckpt_000002.pt").exists() and (tmp_path / "final.pt").exists()
    model = model_from_checkpoint(tmp_path / "final.pt")
    assert model.cfg == TINY
