"""
Three-way ablation
==================

The same data and seed train three variants: no attention branch, with
attention, and with attention plus the refine loss.  At this scale the
numbers only show the harness working; they say nothing about the
full-size comparison.
"""

from banet.data import PortraitDataset
from banet.evaluator import ablation_markdown, ablation_run
from banet.model import ModelConfig
from banet.synthetic import SyntheticSpec, make_arrays
from banet.trainer import TrainConfig

train_imgs, train_masks = make_arrays(SyntheticSpec(n_images=8, size=64, seed=1))
test_imgs, test_masks = make_arrays(SyntheticSpec(n_images=4, size=64, seed=2))
train = PortraitDataset.from_arrays(train_imgs, train_masks, size=64)
test = PortraitDataset.from_arrays(test_imgs, test_masks, size=64)

rows = ablation_run(train, test, ModelConfig.banet64(), TrainConfig(iterations=40, batch_size=4), warmup=1)
print(ablation_markdown(rows))
for r in rows:
    print("%-18s params %7d  fps %.1f" % (r["model"], r["param_count"], r["fps"]))
