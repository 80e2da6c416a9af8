"""Dataset ingestion, online augmentation, padding and batch assembly.

Two on-disk layouts are understood:

``folder_pairs``
    ``root/images/<stem>.{png,jpg,jpeg}`` with ``root/masks/<stem>.png``.
``pfcn_like``
    one flat directory holding ``<stem>.{png,jpg,jpeg}`` and
    ``<stem>_matte.png`` side by side (the PFCN+ portrait release).

Every random draw comes from a generator seeded by ``(seed, epoch, index)``
so a sample, a batch and a whole epoch stream can be rebuilt from the
iteration counter alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from scipy import ndimage

from .boundary import DEFAULT_WIDTH, make_boundary_target
from .imaging import load_image, load_mask, resize_bilinear, resize_mask

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
LAYOUTS = ("folder_pairs", "pfcn_like")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class SampleRef:
    source_id: str
    image_path: Path
    mask_path: Path


@dataclass
class Sample:
    image: np.ndarray
    seg_target: np.ndarray
    boundary_target: np.ndarray
    source_id: str = ""


@dataclass(frozen=True)
class AugmentSpec:
    rotation_range: tuple[float, float] = (-45.0, 45.0)
    flip_prob: float = 0.5
    lightness_range: tuple[float, float] = (0.7, 1.3)
    enabled: bool = True

    def __post_init__(self):
        lo, hi = self.rotation_range
        if lo > hi:
            raise ValueError("rotation_range must be (low, high)")
        lo, hi = self.lightness_range
        if not 0 < lo <= hi:
            raise ValueError("lightness_range must be positive (low, high)")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError("flip_prob must be in [0, 1]")


@dataclass(frozen=True)
class AugmentParams:
    angle: float = 0.0
    flip: bool = False
    lightness: float = 1.0


@dataclass(frozen=True)
class Padding:
    height: int
    width: int
    bottom: int
    right: int

    def crop(self, arr):
        """Crop an array or tensor back to the unpadded size (last two axes
        for tensors, first two for ``H x W [x C]`` arrays)."""
        if isinstance(arr, torch.Tensor):
            return arr[..., : self.height, : self.width]
        return arr[: self.height, : self.width]


def scan_dataset(root, layout: str = "folder_pairs") -> list[SampleRef]:
    """Pair images with masks; returns refs sorted by stem."""
    root = Path(root)
    if layout not in LAYOUTS:
        raise DatasetError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    refs = []
    if layout == "folder_pairs":
        img_dir, mask_dir = root / "images", root / "masks"
        images = sorted(p for p in img_dir.glob("*") if p.suffix.lower() in IMAGE_SUFFIXES) if img_dir.is_dir() else []
        for p in images:
            mask = mask_dir / f"{p.stem}.png"
            if not mask.exists():
                raise DatasetError(f"image {p.stem!r} has no mask (expected {mask})")
            refs.append(SampleRef(p.stem, p, mask))
    else:
        images = sorted(
            p for p in root.glob("*")
            if p.suffix.lower() in IMAGE_SUFFIXES and not p.stem.endswith("_matte")
        )
        for p in images:
            mask = root / f"{p.stem}_matte.png"
            if not mask.exists():
                raise DatasetError(f"image {p.stem!r} has no mask (expected {mask})")
            refs.append(SampleRef(p.stem, p, mask))
    if not refs:
        raise DatasetError(f"empty dataset: no images found under {root} ({layout})")
    refs.sort(key=lambda r: r.source_id)
    return refs


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(epoch), int(index)])


def draw_augment(spec: AugmentSpec, rng: np.random.Generator) -> AugmentParams:
    if not spec.enabled:
        return AugmentParams()
    angle = float(rng.uniform(*spec.rotation_range))
    flip = bool(rng.random() < spec.flip_prob)
    lightness = float(rng.uniform(*spec.lightness_range))
    return AugmentParams(angle, flip, lightness)


def apply_augment(sample: Sample, params: AugmentParams, width: float = DEFAULT_WIDTH) -> Sample:
    """Apply one drawn transform.  The boundary target is rebuilt from the
    transformed segmentation target rather than transformed itself."""
    if params == AugmentParams():
        return sample
    img, seg = sample.image, sample.seg_target
    if params.flip:
        img, seg = img[:, ::-1], seg[:, ::-1]
    if params.angle != 0.0:
        img = ndimage.rotate(img, params.angle, axes=(1, 0), reshape=False, order=1, mode="reflect")
        seg = ndimage.rotate(seg.astype(np.float32), params.angle, axes=(1, 0), reshape=False, order=0,
                             mode="constant", cval=0.0)
    seg = (seg > 0.5).astype(np.float32)
    if params.lightness != 1.0:
        img = img * params.lightness
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return Sample(np.ascontiguousarray(img), np.ascontiguousarray(seg), make_boundary_target(seg, width),
                  sample.source_id)


def augment(sample: Sample, spec: AugmentSpec, rng: np.random.Generator, width: float = DEFAULT_WIDTH) -> Sample:
    if not spec.enabled:
        return sample
    return apply_augment(sample, draw_augment(spec, rng), width)


def pad_to_multiple(sample: Sample, multiple: int = 32) -> tuple[Sample, Padding]:
    """Pad bottom/right up to a multiple: reflect for the image, zeros for masks."""
    h, w = sample.seg_target.shape
    ph, pw = (-h) % multiple, (-w) % multiple
    pad = Padding(h, w, ph, pw)
    if ph == 0 and pw == 0:
        return sample, pad
    return replace(
        sample,
        image=pad_image(sample.image, multiple),
        seg_target=np.pad(sample.seg_target, ((0, ph), (0, pw))),
        boundary_target=np.pad(sample.boundary_target, ((0, ph), (0, pw))),
    ), pad


def pad_image(img: np.ndarray, multiple: int = 32) -> np.ndarray:
    h, w = img.shape[:2]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return img
    # 'reflect' needs pad < size; 'symmetric' covers tiny inputs
    mode = "reflect" if ph < h and pw < w else "symmetric"
    return np.pad(img, ((0, ph), (0, pw), (0, 0)), mode=mode)


class PortraitDataset:
    """Indexable set of training samples.

    ``size`` resizes every image and mask to ``size x size`` (the training
    protocol uses a fixed 512x512 resize); ``None`` keeps native sizes and
    pads to a multiple of 32 instead.
    """

    def __init__(self, loaders: Sequence[Callable[[], tuple[np.ndarray, np.ndarray, str]]],
                 size: int | None = 512, augment_spec: AugmentSpec | None = None,
                 width: float = DEFAULT_WIDTH, seed: int = 0, cache: bool = True):
        if not loaders:
            raise DatasetError("empty dataset")
        if size is not None and size % 32:
            raise ValueError(f"size must be a multiple of 32, got {size}")
        self._loaders = list(loaders)
        self.size = size
        self.augment_spec = augment_spec or AugmentSpec(enabled=False)
        self.width = width
        self.seed = seed
        self._cache: dict[int, Sample] | None = {} if cache else None

    @classmethod
    def from_folder(cls, root, layout: str = "folder_pairs", **kwargs) -> "PortraitDataset":
        return cls.from_refs(scan_dataset(root, layout), **kwargs)

    @classmethod
    def from_refs(cls, refs: Sequence[SampleRef], **kwargs) -> "PortraitDataset":
        def loader(ref):
            return lambda: (load_image(ref.image_path), load_mask(ref.mask_path), ref.source_id)

        return cls([loader(r) for r in refs], **kwargs)

    @classmethod
    def from_arrays(cls, images, masks, ids=None, **kwargs) -> "PortraitDataset":
        if len(images) != len(masks):
            raise DatasetError("images and masks differ in length")
        ids = ids or [f"{i:04d}" for i in range(len(images))]
        return cls([(lambda a=a, m=m, s=s: (a, m, s)) for a, m, s in zip(images, masks, ids)], **kwargs)

    def __len__(self):
        return len(self._loaders)

    def base_sample(self, index: int) -> Sample:
        """Resized (or padded), un-augmented sample."""
        if self._cache is not None and index in self._cache:
            return self._cache[index]
        img, mask, sid = self._loaders[index]()
        if img.shape[:2] != mask.shape:
            raise DatasetError(f"{sid}: image {img.shape[:2]} and mask {mask.shape} differ in size")
        if self.size is not None:
            img = resize_bilinear(img, self.size, self.size).astype(np.float32)
            mask = resize_mask(mask, self.size, self.size)
        sample = Sample(img, mask.astype(np.float32), make_boundary_target(mask, self.width), sid)
        if self.size is None:
            sample, _ = pad_to_multiple(sample)
        if self._cache is not None:
            self._cache[index] = sample
        return sample

    def get(self, index: int, epoch: int = 0) -> Sample:
        sample = self.base_sample(index)
        if not self.augment_spec.enabled:
            return sample
        return augment(sample, self.augment_spec, sample_rng(self.seed, epoch, index), self.width)

    def __getitem__(self, index: int) -> Sample:
        return self.get(index)


def make_batch(samples: Sequence[Sample]) -> dict:
    """Stack samples into ``N x C x H x W`` float32 tensors."""
    if not samples:
        raise DatasetError("cannot batch zero samples")
    shape = samples[0].seg_target.shape
    for s in samples:
        if s.seg_target.shape != shape:
            raise DatasetError(f"heterogeneous sample sizes in batch: {shape} vs {s.seg_target.shape}")
    image = torch.from_numpy(np.stack([s.image.transpose(2, 0, 1) for s in samples]).astype(np.float32))
    seg = torch.from_numpy(np.stack([s.seg_target for s in samples])[:, None].astype(np.float32))
    bound = torch.from_numpy(np.stack([s.boundary_target for s in samples])[:, None].astype(np.float32))
    return {"image": image, "seg": seg, "bound": bound, "ids": [s.source_id for s in samples]}


class BatchStream:
    """Seeded, epoch-shuffled batches addressable by iteration number.

    The last partial batch of an epoch is kept.
    """

    def __init__(self, dataset: PortraitDataset, batch_size: int = 16, seed: int = 0, shuffle: bool = True):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.shuffle = shuffle

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(len(self.dataset) / self.batch_size)

    def epoch_order(self, epoch: int) -> np.ndarray:
        n = len(self.dataset)
        if not self.shuffle:
            return np.arange(n)
        return np.random.default_rng([int(self.seed), int(epoch), 0x5EED]).permutation(n)

    def epoch_indices(self, epoch: int) -> list[np.ndarray]:
        order = self.epoch_order(epoch)
        return [order[i:i + self.batch_size] for i in range(0, len(order), self.batch_size)]

    def batch_at(self, iteration: int) -> dict:
        epoch, k = divmod(iteration, self.batches_per_epoch)
        idx = self.epoch_indices(epoch)[k]
        return make_batch([self.dataset.get(int(i), epoch) for i in idx])

    def epoch(self, epoch: int):
        for k in range(self.batches_per_epoch):
            yield self.batch_at(epoch * self.batches_per_epoch + k)
