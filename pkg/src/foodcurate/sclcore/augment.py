"""Seeded stochastic augmentations and multiview batch assembly.

Each source sample spawns two augmented views (random crop-and-resize,
horizontal flip, brightness jitter).  Reproducibility contract: the view of
source index i under a given seed is a pure function of (seed, i, view slot),
independent of batch composition or call order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..imaging import PixelImage, quantize_u8, resize_bilinear
from .ops import SclError


@dataclass(frozen=True)
class AugmentationPair:
    """Parameter ranges for the two per-source view transforms.

    crop_scale is the area fraction kept by the random crop; identity
    augmentation is crop_scale=(1, 1), flip_prob=0, brightness=0.
    """

    crop_scale: tuple[float, float] = (0.6, 1.0)
    flip_prob: float = 0.5
    brightness: float = 0.2

    def __post_init__(self) -> None:
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise SclError(f"crop_scale must satisfy 0 < lo <= hi <= 1, got {self.crop_scale}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise SclError(f"flip_prob out of [0, 1]: {self.flip_prob}")
        if self.brightness < 0.0:
            raise SclError(f"brightness must be >= 0, got {self.brightness}")

    def apply(self, sample: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One augmented view of a (h, w, c) uint8 sample."""
        h, w = sample.shape[:2]
        out = sample
        # crop-and-resize: keep a random window of the chosen area fraction
        frac = rng.uniform(self.crop_scale[0], self.crop_scale[1])
        if frac < 1.0:
            side = np.sqrt(frac)
            ch = max(1, int(round(h * side)))
            cw = max(1, int(round(w * side)))
            y0 = int(rng.integers(0, h - ch + 1))
            x0 = int(rng.integers(0, w - cw + 1))
            window = out[y0 : y0 + ch, x0 : x0 + cw]
            out = resize_bilinear(PixelImage(np.ascontiguousarray(window)), w, h).pixels
        if self.flip_prob > 0.0 and rng.random() < self.flip_prob:
            out = out[:, ::-1]
        if self.brightness > 0.0:
            gain = 1.0 + rng.uniform(-self.brightness, self.brightness)
            out = quantize_u8(out.astype(np.float64) * gain)
        return np.ascontiguousarray(out)


@dataclass
class MultiviewBatch:
    """2N augmented views with per-view labels and the sibling-view pairing.

    pair is an involution without fixed points: pair[pair[i]] == i,
    pair[i] != i, and labels[i] == labels[pair[i]].
    """

    views: np.ndarray  # (2N, h, w, c) uint8
    labels: np.ndarray  # (2N,) int
    pair: np.ndarray  # (2N,) int

    def __post_init__(self) -> None:
        n = self.views.shape[0]
        if n == 0 or n % 2 != 0:
            raise SclError(f"multiview batch size must be a positive even number, got {n}")
        if self.labels.shape != (n,) or self.pair.shape != (n,):
            raise SclError("labels/pair length must match the number of views")
        idx = np.arange(n)
        if np.any(self.pair[self.pair] != idx) or np.any(self.pair == idx):
            raise SclError("pair must be a fixed-point-free involution")
        if np.any(self.labels != self.labels[self.pair]):
            raise SclError("paired views must share a label")

    @property
    def n_sources(self) -> int:
        return self.views.shape[0] // 2


def _view_rng(seed: int, source_index: int, view_slot: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(source_index, view_slot))
    return np.random.Generator(np.random.PCG64(ss))


def make_multiview_batch(
    samples: np.ndarray,
    labels: np.ndarray,
    aug: AugmentationPair,
    seed: int,
    source_indices: np.ndarray | None = None,
) -> MultiviewBatch:
    """Augment N sources into an interleaved 2N batch (views 2i and 2i+1 pair up).

    ``source_indices`` names each sample's stable index in the full dataset so
    per-view randomness does not depend on how sources were batched.
    """
    samples = np.asarray(samples)
    labels = np.asarray(labels)
    if samples.shape[0] == 0:
        raise SclError("cannot build a multiview batch from zero samples")
    if samples.shape[0] != labels.shape[0]:
        raise SclError("samples and labels disagree on N")
    if source_indices is None:
        source_indices = np.arange(samples.shape[0])
    n = samples.shape[0]
    views = np.empty((2 * n,) + samples.shape[1:], dtype=np.uint8)
    out_labels = np.empty(2 * n, dtype=labels.dtype)
    pair = np.empty(2 * n, dtype=np.int64)
    for i in range(n):
        src = int(source_indices[i])
        views[2 * i] = aug.apply(samples[i], _view_rng(seed, src, 0))
        views[2 * i + 1] = aug.apply(samples[i], _view_rng(seed, src, 1))
        out_labels[2 * i] = out_labels[2 * i + 1] = labels[i]
        pair[2 * i], pair[2 * i + 1] = 2 * i + 1, 2 * i
    return MultiviewBatch(views=views, labels=out_labels, pair=pair)
