"""L1 training with Adam, step learning-rate schedule, and patch sampling."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .imaging import DegradationSpec, crop_to_multiple, degrade, dihedral
from .layers import ParameterStore
from .tensor import DimensionError, Tensor, absolute, mean_all, sub, sum_all

logger = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    def __init__(self, step: int, lr: float, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step} (lr={lr:g})")
        self.step, self.lr, self.loss = step, lr, loss


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr_patch: int = 48
    lr0: float = 1e-4
    halve_every: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 1
    seed: int = 0
    scale: int = 4
    degradation: DegradationSpec = field(default_factory=DegradationSpec)
    augment: bool = True
    steps_per_epoch: int | None = None
    sum_loss: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_patch < 1:
            raise ValueError("lr_patch must be >= 1")


# ----------------------------------------------------------------------
# loss / optimizer / schedule
# ----------------------------------------------------------------------
def l1_loss(pred: Tensor, target: Tensor, reduction: str = "mean") -> Tensor:
    """Mean (or summed) absolute difference."""
    if pred.shape != target.shape:
        raise DimensionError(f"l1_loss: {pred.shape} vs {target.shape}")
    diff = absolute(sub(pred, target))
    if reduction == "sum":
        return sum_all(diff)
    return mean_all(diff)


def adam_step(
    store: ParameterStore,
    lr: float,
    t: int,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update over every parameter; zeroes gradients."""
    if t < 1:
        raise ValueError("adam_step: t must be >= 1")
    for name, p in store.items():
        if p.grad is None:
            raise RuntimeError(f"adam_step: no gradient for {name!r}")
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in store.items():
        g = p.grad
        m = store.m.get(name)
        v = store.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        store.m[name] = m.astype(p.data.dtype)
        store.v[name] = v.astype(p.data.dtype)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - update).astype(p.data.dtype)
        p.grad = None
    store.step = t


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    return cfg.lr0 * 0.5 ** (epoch // cfg.halve_every)


# ----------------------------------------------------------------------
# data
# ----------------------------------------------------------------------
@dataclass
class PairDataset:
    """HR images with their LR counterparts, both uint8 ``(H, W, 3)``."""

    names: list[str]
    hr: list[np.ndarray]
    lr: list[np.ndarray]
    scale: int

    @classmethod
    def from_hr(cls, images, spec: DegradationSpec, names: Sequence[str] | None = None, lr_images=None):
        """Build pairs by cropping each HR image to a multiple of the scale and degrading it.

        Pre-generated LR images (``lr_images[i]`` not None) are used as-is.
        """
        names = list(names) if names is not None else [f"img{i:04d}" for i in range(len(images))]
        hrs, lrs = [], []
        for i, img in enumerate(images):
            hr = crop_to_multiple(img, spec.scale)
            given = lr_images[i] if lr_images is not None else None
            if given is None:
                sub_spec = DegradationSpec(
                    spec.kind, spec.scale, spec.blur_size, spec.blur_sigma, spec.noise_sigma, spec.seed ^ i
                )
                given = degrade(hr, sub_spec)
            hrs.append(hr)
            lrs.append(given)
        return cls(names, hrs, lrs, spec.scale)

    def __len__(self) -> int:
        return len(self.hr)


@dataclass
class SampleBatch:
    lr: np.ndarray
    hr: np.ndarray
    provenance: list[tuple[int, tuple[int, int], int]]


def batch_rng(seed: int, batch_index: int) -> np.random.Generator:
    """Independent stream per batch, so prefetching order cannot change results."""
    return np.random.default_rng([seed, batch_index])


def sample_patch_batch(dataset: PairDataset, cfg: TrainConfig, rng: np.random.Generator) -> SampleBatch:
    """Draw aligned, identically augmented LR/HR patches.

    Returns float arrays in [0, 1] with layout ``[B, 3, p, p]`` and
    ``[B, 3, s*p, s*p]``.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    p, s = cfg.lr_patch, dataset.scale
    for name, lr in zip(dataset.names, dataset.lr):
        if lr.shape[0] < p or lr.shape[1] < p:
            raise ValueError(f"{name}: LR size {lr.shape[:2]} smaller than patch {p}")
    lrs, hrs, prov = [], [], []
    for _ in range(cfg.batch_size):
        i = int(rng.integers(len(dataset)))
        lr_img, hr_img = dataset.lr[i], dataset.hr[i]
        y = int(rng.integers(lr_img.shape[0] - p + 1))
        x = int(rng.integers(lr_img.shape[1] - p + 1))
        aug = int(rng.integers(8)) if cfg.augment else 0
        lr_crop = lr_img[y : y + p, x : x + p]
        hr_crop = hr_img[s * y : s * (y + p), s * x : s * (x + p)]
        lrs.append(dihedral(lr_crop, aug).transpose(2, 0, 1))
        hrs.append(dihedral(hr_crop, aug).transpose(2, 0, 1))
        prov.append((i, (y, x), aug))
    lr_arr = np.stack(lrs).astype(np.float64) / 255.0
    hr_arr = np.stack(hrs).astype(np.float64) / 255.0
    return SampleBatch(lr_arr, hr_arr, prov)


# ----------------------------------------------------------------------
# loop
# ----------------------------------------------------------------------
@dataclass
class TrainResult:
    model: object
    losses: list[float]
    records: list[tuple[int, int, float, float]]


def steps_per_epoch(dataset: PairDataset, cfg: TrainConfig) -> int:
    if cfg.steps_per_epoch is not None:
        return cfg.steps_per_epoch
    return max(1, math.ceil(len(dataset) / cfg.batch_size))


def train(
    model,
    dataset: PairDataset,
    cfg: TrainConfig,
    start_epoch: int = 0,
    on_step: Callable[[int, int, float, float], None] | None = None,
    on_epoch_end: Callable[[int], None] | None = None,
) -> TrainResult:
    """Run ``cfg.epochs`` epochs of sample / forward / L1 / backward / Adam.

    Step indices continue from ``start_epoch * steps_per_epoch`` so a resumed
    run draws the same batches as an uninterrupted one.
    """
    if model.scale != dataset.scale:
        raise ValueError(f"model scale {model.scale} != dataset scale {dataset.scale}")
    store = model.store
    n_steps = steps_per_epoch(dataset, cfg)
    losses: list[float] = []
    records = []
    reduction = "sum" if cfg.sum_loss else "mean"
    step = start_epoch * n_steps
    for epoch in range(start_epoch, cfg.epochs):
        lr = lr_at(epoch, cfg)
        for _ in range(n_steps):
            batch = sample_patch_batch(dataset, cfg, batch_rng(cfg.seed, step))
            pred = model(Tensor(batch.lr))
            loss = l1_loss(pred, Tensor(batch.hr), reduction)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(step, lr, value)
            store.zero_grad()
            loss.backward()
            adam_step(store, lr, step + 1, cfg.beta1, cfg.beta2, cfg.eps)
            losses.append(value)
            records.append((step, epoch, lr, value))
            if on_step is not None:
                on_step(step, epoch, lr, value)
            step += 1
        logger.info("epoch %d done, last loss %.6f", epoch, losses[-1] if losses else float("nan"))
        if on_epoch_end is not None:
            on_epoch_end(epoch)
    return TrainResult(model, losses, records)
