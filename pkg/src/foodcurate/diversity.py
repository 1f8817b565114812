"""Dataset diversity metrics computed per food category.

Two complementary views:

* average-image compressed size: resize a category to a common square,
  average pixel-wise, encode losslessly; a more diverse category averages to
  a vaguer image that compresses smaller;
* mean pairwise embedding distance: (1 - cosine) / 2 between unit-norm
  embeddings, averaged over all (or a seeded sample of) unordered pairs, so
  values live in [0, 1] and larger means more diverse.

The embedder is pluggable; the trained contrastive encoder is the default
choice (see make_encoder_embedder).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .imaging import (
    DEFAULT_LOSSLESS_CODEC,
    PixelImage,
    encode_lossless,
    resize_bilinear,
)
from .manifest import ImageRecord, Manifest

AVERAGE_IMAGE_SIDE = 256

Embedder = Callable[[PixelImage], np.ndarray]


class DiversityError(ValueError):
    """Raised on empty categories and malformed embeddings."""


@dataclass
class CategoryDiversity:
    n_images: int
    jpeg_bytes: int | None = None
    mean_pairwise_distance: float | None = None


@dataclass
class DiversityReport:
    per_category: dict[int, CategoryDiversity] = field(default_factory=dict)
    dataset_mean_distance: float | None = None

    def to_dict(self) -> dict:
        return {
            "per_category": {
                str(cid): {
                    "n_images": c.n_images,
                    "jpeg_bytes": c.jpeg_bytes,
                    "mean_pairwise_distance": c.mean_pairwise_distance,
                }
                for cid, c in sorted(self.per_category.items())
            },
            "dataset_mean_distance": self.dataset_mean_distance,
        }


def jpeg_size_metric(
    images: Sequence[PixelImage],
    side: int = AVERAGE_IMAGE_SIDE,
    codec: str = DEFAULT_LOSSLESS_CODEC,
) -> int:
    """Lossless-encoded byte size of the category's average image (smaller = more diverse)."""
    if not images:
        raise DiversityError("category has no images")
    resized = [resize_bilinear(im, side, side) for im in images]
    shape = resized[0].pixels.shape
    acc = np.zeros(shape, dtype=np.float64)
    for im in resized:
        if im.pixels.shape != shape:
            raise DiversityError("mixed channel counts within one category")
        acc += im.pixels
    mean = PixelImage(
        np.clip(np.floor(acc / len(resized) + 0.5), 0, 255).astype(np.uint8)
    )
    return len(encode_lossless(mean, codec=codec))


def _embedding_matrix(images: Sequence[PixelImage], embedder: Embedder) -> np.ndarray:
    rows = []
    for im in images:
        v = np.asarray(embedder(im), dtype=np.float64).ravel()
        norm = float(np.linalg.norm(v))
        if not np.isfinite(norm) or abs(norm - 1.0) > 1e-6:
            raise DiversityError(f"embedder output norm {norm} is not 1 within 1e-6")
        rows.append(v)
    return np.asarray(rows)


def pairwise_distance_metric(
    images: Sequence[PixelImage],
    embedder: Embedder,
    sample_cap: int | None = None,
    seed: int = 0,
) -> float:
    """Mean (1 - cosine) / 2 over unordered embedding pairs, in [0, 1].

    With more pairs than sample_cap, a seeded uniform sample of sample_cap
    distinct pairs is averaged instead of the full set.
    """
    if len(images) < 2:
        raise DiversityError("pairwise distance needs at least two images")
    emb = _embedding_matrix(images, embedder)
    ii, jj = np.triu_indices(len(images), k=1)
    if sample_cap is not None:
        if sample_cap < 1:
            raise DiversityError(f"sample_cap must be >= 1, got {sample_cap}")
        if ii.size > sample_cap:
            pick = np.random.default_rng(seed).choice(ii.size, size=sample_cap, replace=False)
            ii, jj = ii[pick], jj[pick]
    cos = np.sum(emb[ii] * emb[jj], axis=1)
    d = np.clip((1.0 - cos) / 2.0, 0.0, 1.0)
    return float(d.mean())


def dataset_report(
    m: Manifest,
    image_provider: Callable[[ImageRecord], PixelImage],
    embedder: Embedder | None = None,
    with_jpeg: bool = True,
    with_distance: bool = True,
    sample_cap: int | None = 2000,
    seed: int = 0,
    side: int = AVERAGE_IMAGE_SIDE,
    codec: str = DEFAULT_LOSSLESS_CODEC,
) -> DiversityReport:
    """Per-category metrics plus the dataset-level mean of category distances.

    The dataset value is the unweighted mean over categories (each category
    counts once regardless of size).  Distance needs an embedder and at least
    two images per category; categories failing that are reported with the
    field absent.
    """
    if with_distance and embedder is None:
        raise DiversityError("distance metric requested without an embedder")
    groups: dict[int, list[ImageRecord]] = {}
    for r in m.active_records():
        groups.setdefault(r.category_id, []).append(r)
    report = DiversityReport()
    means = []
    for cid in sorted(groups):
        records = sorted(groups[cid], key=lambda r: r.id)
        images = [image_provider(r) for r in records]
        entry = CategoryDiversity(n_images=len(images))
        if with_jpeg:
            entry.jpeg_bytes = jpeg_size_metric(images, side=side, codec=codec)
        if with_distance and embedder is not None and len(images) >= 2:
            entry.mean_pairwise_distance = pairwise_distance_metric(
                images, embedder, sample_cap=sample_cap, seed=seed
            )
            means.append(entry.mean_pairwise_distance)
        report.per_category[cid] = entry
    if means:
        report.dataset_mean_distance = float(np.mean(means))
    return report


def make_encoder_embedder(encoder, input_side: int = 64) -> Embedder:
    """Adapt a trained encoder into an Embedder over arbitrary-size images."""
    from .sclcore.network import images_to_tensor

    def embed(img: PixelImage) -> np.ndarray:
        resized = resize_bilinear(img, input_side, input_side)
        p = resized.pixels
        if p.shape[2] == 1 and encoder.in_channels == 3:
            p = np.repeat(p, 3, axis=2)
        return encoder.embed(images_to_tensor(p[None]))[0]

    return embed
