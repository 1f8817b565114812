"""Deterministic image primitives shared by every curation stage.

All operations are pure functions over explicit pixel buffers: decoding and
validation, grayscale conversion, bilinear resizing, per-pixel averaging, and
lossless encoding.  Determinism rules that matter downstream (fingerprints
must be stable across runs and machines):

* reals are quantized to 8 bits by rounding half-up, never banker's rounding;
* resizing samples at half-pixel centers, so a constant image stays constant;
* the lossless codec is fixed per run and round-trips bit-exactly.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

DEFAULT_MIN_SIDE = 32

REJECT_TRUNCATED = "truncated"
REJECT_UNDERSIZED = "undersized"
REJECT_UNDECODABLE = "undecodable"

#: Codecs usable with encode_lossless.  "jp2" is reversible (lossless) JPEG
#: 2000 and is the default; "png" and "webp" are alternative lossless formats.
LOSSLESS_CODECS = ("jp2", "png", "webp")
DEFAULT_LOSSLESS_CODEC = "jp2"


class ImagingError(ValueError):
    """Raised when an imaging precondition is violated."""


@dataclass(eq=False)
class PixelImage:
    """8-bit image, row-major ``(height, width, channels)`` with 1 or 3 channels."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        p = self.pixels
        if p.ndim != 3 or p.dtype != np.uint8:
            raise ImagingError(f"expected uint8 (h, w, c) array, got {p.dtype} {p.shape}")
        h, w, c = p.shape
        if c not in (1, 3):
            raise ImagingError(f"channels must be 1 or 3, got {c}")
        if h < 1 or w < 1:
            raise ImagingError(f"degenerate image shape {p.shape}")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "PixelImage":
        """Build from a (h, w) or (h, w, c) array, coercing to uint8 layout."""
        a = np.asarray(arr)
        if a.ndim == 2:
            a = a[:, :, None]
        return cls(np.ascontiguousarray(a, dtype=np.uint8))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def same_pixels(self, other: "PixelImage") -> bool:
        return self.pixels.shape == other.pixels.shape and np.array_equal(
            self.pixels, other.pixels
        )


@dataclass(eq=False)
class RealImage:
    """Double-precision image buffer used for averaging and transform math."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        p = self.pixels
        if p.ndim != 3 or p.dtype != np.float64:
            raise ImagingError(f"expected float64 (h, w, c) array, got {p.dtype} {p.shape}")
        if p.shape[2] not in (1, 3) or p.shape[0] < 1 or p.shape[1] < 1:
            raise ImagingError(f"bad RealImage shape {p.shape}")

    @classmethod
    def from_pixel_image(cls, img: PixelImage) -> "RealImage":
        return cls(img.pixels.astype(np.float64))

    def quantize(self) -> PixelImage:
        return PixelImage(quantize_u8(self.pixels))


@dataclass(frozen=True)
class Rejection:
    """Why an input file was refused; carried into manifest removal records."""

    reason: str
    detail: str = ""


def quantize_u8(values: np.ndarray) -> np.ndarray:
    """Round half-up and clamp to the 8-bit sample range."""
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) + 0.5), 0, 255).astype(
        np.uint8
    )


def decode_and_validate(data: bytes, min_side: int = DEFAULT_MIN_SIDE) -> PixelImage | Rejection:
    """Decode JPEG/PNG bytes, rejecting truncated, undersized, or unreadable files.

    Rejections are data, not exceptions: they feed removal accounting.
    Palette/alpha inputs are flattened to RGB; grayscale stays single-channel.
    """
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            if im.mode == "L":
                arr = np.asarray(im, dtype=np.uint8)[:, :, None]
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except UnidentifiedImageError:
        return Rejection(REJECT_UNDECODABLE, "format not recognized")
    except OSError as exc:
        return Rejection(REJECT_TRUNCATED, str(exc))
    except Exception as exc:  # defensive: codec bugs on hostile input
        return Rejection(REJECT_UNDECODABLE, f"{type(exc).__name__}: {exc}")
    h, w = arr.shape[:2]
    if w < min_side or h < min_side:
        return Rejection(REJECT_UNDERSIZED, f"{w}x{h} below minimum side {min_side}")
    return PixelImage(np.ascontiguousarray(arr))


def to_grayscale(img: PixelImage) -> PixelImage:
    """BT.601 luma (0.299 R + 0.587 G + 0.114 B), rounded half-up; identity on gray."""
    if img.channels == 1:
        return img
    p = img.pixels.astype(np.float64)
    luma = 0.299 * p[:, :, 0] + 0.587 * p[:, :, 1] + 0.114 * p[:, :, 2]
    return PixelImage(quantize_u8(luma)[:, :, None])


def _axis_samples(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Half-pixel-center mapping: output center x maps to (x + 0.5) * scale - 0.5.
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(img: PixelImage, width: int, height: int) -> PixelImage:
    """Bilinear resize with half-pixel centers; constants are preserved exactly."""
    if width < 1 or height < 1:
        raise ImagingError(f"target size {width}x{height} invalid")
    p = img.pixels.astype(np.float64)
    ylo, yhi, fy = _axis_samples(img.height, height)
    xlo, xhi, fx = _axis_samples(img.width, width)
    rows = p[ylo] + (p[yhi] - p[ylo]) * fy[:, None, None]
    out = rows[:, xlo] + (rows[:, xhi] - rows[:, xlo]) * fx[None, :, None]
    return PixelImage(quantize_u8(out))


def average_image(imgs: list[PixelImage]) -> PixelImage:
    """Per-pixel arithmetic mean of same-shaped images, rounded half-up."""
    if not imgs:
        raise ImagingError("average_image needs at least one image")
    shape = imgs[0].pixels.shape
    acc = np.zeros(shape, dtype=np.float64)
    for im in imgs:
        if im.pixels.shape != shape:
            raise ImagingError(
                f"shape mismatch: {im.pixels.shape} vs {shape}; resize inputs first"
            )
        acc += im.pixels
    return RealImage(acc / len(imgs)).quantize()


def encode_lossless(img: PixelImage, codec: str = DEFAULT_LOSSLESS_CODEC) -> bytes:
    """Encode with a deterministic lossless codec; decode(encode(x)) == x bit-exactly.

    The default is reversible JPEG 2000.  Byte sizes are only comparable
    within a single codec, so pick one per run.
    """
    if codec not in LOSSLESS_CODECS:
        raise ImagingError(f"unknown codec {codec!r}; expected one of {LOSSLESS_CODECS}")
    arr = img.pixels[:, :, 0] if img.channels == 1 else img.pixels
    pil = Image.fromarray(arr)
    buf = io.BytesIO()
    if codec == "jp2":
        pil.save(buf, format="JPEG2000", irreversible=False)
    elif codec == "png":
        pil.save(buf, format="PNG", compress_level=9, optimize=False)
    else:
        pil.save(buf, format="WEBP", lossless=True)
    return buf.getvalue()


def decode_image(data: bytes) -> PixelImage:
    """Decode without the size gate; raises instead of returning a rejection."""
    out = decode_and_validate(data, min_side=1)
    if isinstance(out, Rejection):
        raise ImagingError(f"decode failed: {out.reason} ({out.detail})")
    return out
