"""
Training on synthetic portraits
===============================

A short two-phase run on generated head-and-shoulders images.  The first
phase trains segmentation and attention; the second adds the refine loss
on top of the pretrained weights with a fresh optimizer.
"""

import tempfile
from pathlib import Path

import torch

from banet.data import AugmentSpec, PortraitDataset
from banet.evaluator import evaluate
from banet.model import BANet, ModelConfig, count_parameters
from banet.synthetic import SyntheticSpec, make_arrays
from banet.trainer import TrainConfig, Trainer, start_finetune

torch.manual_seed(0)
imgs, masks = make_arrays(SyntheticSpec(n_images=8, size=64, seed=0))
data = PortraitDataset.from_arrays(imgs, masks, size=64, augment_spec=AugmentSpec(rotation_range=(-15, 15)))

model = BANet(ModelConfig.banet64())
print("parameters:", count_parameters(model))

run = Path(tempfile.mkdtemp())

# Phase one: segmentation and boundary attention only.
pre = Trainer(model, data, TrainConfig(iterations=60, batch_size=4, phase="pretrain"), run_dir=run / "pre")
for rec in pre.train():
    if rec["iteration"] % 20 == 0:
        print("pretrain %3d  lr %.3f  total %.4f" % (rec["iteration"], rec["lr"], rec["total"]))

# Phase two: the refine loss joins the objective.
ft = start_finetune(run / "pre" / "final.pt", data, TrainConfig(iterations=60, batch_size=4, phase="finetune"),
                    run_dir=run / "ft")
for rec in ft.train():
    if rec["iteration"] % 20 == 0:
        print("finetune %3d  refine %.4f  total %.4f" % (rec["iteration"], rec["refine"], rec["total"]))

report = evaluate(ft.model, data, resolution=64, warmup=1)
print("mIoU on the training images: %.3f" % report.miou)
print("checkpoints in", run)
