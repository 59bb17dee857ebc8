"""Desk-scale training loop: random crops, Adam, quarter-schedule learning-rate halving."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from .loss import FeatureExtractor, LossWeights, training_losses
from .network import PATCH, ModelConfig, SaMam
from .tensor import Adam

log = logging.getLogger(__name__)


@dataclass
class LossRecord:
    iter: int
    content: float
    style: float
    id1: float
    id2: float
    total: float


def random_crop(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Crop a (3, H, W) image to size x size, reflect-padding undersized sides."""
    if size % PATCH:
        raise ValueError(f"crop size {size} must be divisible by {PATCH}")
    _, h, w = img.shape
    ph, pw = max(0, size - h), max(0, size - w)
    if ph or pw:
        mode = "reflect" if h > 1 and w > 1 and ph < h and pw < w else "edge"
        img = np.pad(img, ((0, 0), (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)), mode=mode)
        _, h, w = img.shape
    r = int(rng.integers(0, h - size + 1))
    c = int(rng.integers(0, w - size + 1))
    return img[:, r : r + size, c : c + size]


def lr_at(step: int, base_lr: float, iters: int) -> float:
    """Halve every iters/4 steps (step counts from 0)."""
    period = max(1, iters // 4)
    return base_lr * 0.5 ** (step // period)


def train(
    cfg: ModelConfig,
    contents: Sequence[np.ndarray],
    styles: Sequence[np.ndarray],
    iters: int,
    batch: int = 2,
    lr: float = 1e-4,
    size: int = 32,
    seed: int = 0,
    weights: LossWeights = LossWeights(),
    extractor: FeatureExtractor | None = None,
    model: SaMam | None = None,
    on_step: Callable[[LossRecord], None] | None = None,
) -> tuple[SaMam, list[LossRecord]]:
    if not contents or not styles:
        raise ValueError("need at least one content and one style image")
    model = model or SaMam(cfg)
    fx = extractor or FeatureExtractor()
    opt = Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    records: list[LossRecord] = []
    for step in range(iters):
        opt.lr = lr_at(step, lr, iters)
        opt.zero_grad()
        sums = np.zeros(5)
        for _ in range(batch):
            c = random_crop(contents[int(rng.integers(len(contents)))], size, rng)
            s = random_crop(styles[int(rng.integers(len(styles)))], size, rng)
            parts = training_losses(model, c, s, fx)
            total = parts.total(weights) * (1.0 / batch)
            total.backward()
            sums += [p.item() for p in parts.as_tuple()] + [total.item() * batch]
        opt.step()
        rec = LossRecord(step + 1, *(float(v) for v in sums / batch))
        records.append(rec)
        if on_step:
            on_step(rec)
        log.debug("iter %d total %.4f", rec.iter, rec.total)
    return model, records


def smooth(values: Sequence[float], window: int = 20) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    v = np.asarray(values, dtype=float)
    c = np.cumsum(np.insert(v, 0, 0.0))
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)
