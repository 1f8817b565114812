"""Shared synthetic-image and manifest fixtures."""

from __future__ import annotations

import io

import numpy as np
import pytest
from PIL import Image

from foodcurate.imaging import PixelImage
from foodcurate.manifest import CategoryRecord, ImageRecord, Manifest, StageReport


def solid_image(value: int, w: int = 40, h: int = 40, channels: int = 3) -> PixelImage:
    return PixelImage.from_array(np.full((h, w, channels), value, np.uint8))


def random_image(seed: int, w: int = 48, h: int = 48, channels: int = 3) -> PixelImage:
    rng = np.random.default_rng(seed)
    return PixelImage.from_array(rng.integers(0, 256, (h, w, channels), np.uint8))


def synth_photo(seed: int, side: int = 64) -> PixelImage:
    """Photo-like image: smooth gradients, a few shapes, film-grain texture."""
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side] / (side - 1)
    img = np.stack([60 + 120 * xx, 80 + 100 * yy, 150 - 90 * xx * yy], axis=2)
    for _ in range(4):
        cy, cx = r.uniform(0.2, 0.8, 2)
        ry, rx = r.uniform(0.08, 0.3, 2)
        mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1.0
        img[mask] = 0.35 * img[mask] + 0.65 * r.uniform(30, 225, 3)
    img += r.normal(0, 35, img.shape)
    return PixelImage.from_array(np.clip(img, 0, 255).astype(np.uint8))


def jpeg_bytes(img: PixelImage, quality: int = 92) -> bytes:
    arr = img.pixels[:, :, 0] if img.channels == 1 else img.pixels
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="JPEG", quality=quality)
    return buf.getvalue()


def png_bytes(img: PixelImage) -> bytes:
    arr = img.pixels[:, :, 0] if img.channels == 1 else img.pixels
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def texture_classes(
    n: int,
    seed: int,
    side: int = 64,
    amp: float = 32.0,
    freq: float = 6.0,
    orient_jitter: float = 15.0,
) -> tuple[np.ndarray, np.ndarray]:
    """3-class grating textures under dominant per-image color casts.

    Classes are horizontal stripes, vertical stripes, and cross-hatch; the
    cast plus pixel noise swamp the class signal for untrained features.
    """
    r = np.random.default_rng(seed)
    x = np.zeros((n, side, side, 3), np.uint8)
    y = np.asarray([i % 3 for i in range(n)])
    yy, xx = np.mgrid[0:side, 0:side] / side
    for i in range(n):
        base = r.uniform(60, 195, 3)
        ph1, ph2 = r.uniform(0, 1, 2)
        f = freq * r.uniform(0.9, 1.1)
        th = np.deg2rad(r.uniform(-orient_jitter, orient_jitter))
        u = np.cos(th) * xx + np.sin(th) * yy
        v = -np.sin(th) * xx + np.cos(th) * yy
        if y[i] == 0:
            pat = np.sin(2 * np.pi * (f * v + ph1))
        elif y[i] == 1:
            pat = np.sin(2 * np.pi * (f * u + ph1))
        else:
            pat = np.sin(2 * np.pi * (f * v + ph1)) * np.sin(2 * np.pi * (f * u + ph2))
        img = base[None, None, :] + amp * pat[:, :, None] + r.normal(0, 5, (side, side, 3))
        x[i] = np.clip(img, 0, 255)
    return x, y


def build_manifest(n_records: int = 6, seed: int = 0, n_categories: int = 2) -> Manifest:
    """Small valid manifest with some removed records and chained history."""
    rng = np.random.default_rng(seed)
    cats = [
        CategoryRecord(id=i, name=f"dish-{i}", group="group", synonyms=[f"alias{i}"])
        for i in range(n_categories)
    ]
    m = Manifest(dataset_name="unit", categories=cats)
    removed = 0
    for i in range(n_records):
        rec = ImageRecord(
            id=f"{i:016x}",
            category_id=int(rng.integers(0, n_categories)),
            source_path=f"/img/{i}.jpg",
            width=int(rng.integers(32, 200)),
            height=int(rng.integers(32, 200)),
            byte_size=int(rng.integers(1000, 90000)),
        )
        if i % 5 == 4:
            rec.mark_removed("format", "truncated")
            removed += 1
        m.records.append(rec)
    m.history.append(
        StageReport("ingest", n_records, n_records, 0, {})
    )
    m.history.append(
        StageReport(
            "format",
            n_records,
            n_records - removed,
            removed,
            {"truncated": removed} if removed else {},
        )
    )
    return m


@pytest.fixture
def tmp_manifest_path(tmp_path):
    return tmp_path / "dataset.jsonl"
