"""Near-duplicate detection from three 64-bit image fingerprints.

Each image gets an average hash (mean threshold on an 8x8 reduction), a
difference hash (horizontal gradient signs on a 9x8 reduction), and a
spectral hash (median threshold on the low-frequency 8x8 block of a 32x32
DCT).  The three are concatenated into a 192-bit fingerprint; images whose
fingerprints lie within a Hamming-distance threshold are clustered with a
union-find pass and all but one keeper per cluster are dropped.

Bit order everywhere is row-major, most-significant bit first, so the hex
serialization is stable across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .imaging import PixelImage, resize_bilinear, to_grayscale

if TYPE_CHECKING:  # records are duck-typed: need .id/.category_id/.hash etc.
    from .manifest import ImageRecord

#: Default near-duplicate threshold out of 192 bits; 0 means exact-hash only.
DEFAULT_THRESHOLD = 10

_MAX64 = (1 << 64) - 1


class DedupError(ValueError):
    """Raised for missing hashes or mixed-category cluster input."""


@dataclass(frozen=True)
class HashTriple:
    """Concatenated average/spectral/difference hashes, each exactly 64 bits."""

    ahash: int
    phash: int
    dhash: int

    def __post_init__(self) -> None:
        for name in ("ahash", "phash", "dhash"):
            v = getattr(self, name)
            if not 0 <= v <= _MAX64:
                raise DedupError(f"{name} out of 64-bit range: {v}")

    def to_hex(self) -> str:
        return f"{self.ahash:016x}{self.phash:016x}{self.dhash:016x}"

    @classmethod
    def from_hex(cls, s: str) -> "HashTriple":
        if len(s) != 48:
            raise DedupError(f"hash hex must be 48 chars, got {len(s)}")
        return cls(int(s[0:16], 16), int(s[16:32], 16), int(s[32:48], 16))


@dataclass
class DuplicateCluster:
    """A same-category group of mutually similar images and its chosen keeper."""

    member_ids: list[str]
    keeper_id: str


def _bits_to_u64(bits: np.ndarray) -> int:
    """Pack a flat boolean array of 64 bits, first bit most significant."""
    packed = np.packbits(bits.astype(np.uint8))
    return int.from_bytes(packed.tobytes(), "big")


def _gray_resized(img: PixelImage, w: int, h: int) -> np.ndarray:
    return resize_bilinear(to_grayscale(img), w, h).pixels[:, :, 0].astype(np.float64)


def average_hash(img: PixelImage) -> int:
    """Bit i is set iff sample i of the 8x8 grayscale reduction strictly exceeds the mean."""
    g = _gray_resized(img, 8, 8)
    return _bits_to_u64((g > g.mean()).ravel())


def difference_hash(img: PixelImage) -> int:
    """Bit (row, x) is set iff pixel (row, x+1) strictly exceeds (row, x) on a 9x8 reduction."""
    g = _gray_resized(img, 9, 8)  # 9 wide, 8 tall
    return _bits_to_u64((g[:, 1:] > g[:, :-1]).ravel())


def _dct_matrix(n: int) -> np.ndarray:
    # Orthonormal DCT-II basis: row k = s_k * cos(pi * (2j + 1) * k / (2n)).
    k = np.arange(n, dtype=np.float64)[:, None]
    j = np.arange(n, dtype=np.float64)[None, :]
    m = np.cos(np.pi * (2.0 * j + 1.0) * k / (2.0 * n))
    m[0, :] *= np.sqrt(1.0 / n)
    m[1:, :] *= np.sqrt(2.0 / n)
    return m


_DCT32 = _dct_matrix(32)


# Coefficients this close to zero are rounding dust from the basis products;
# snapping them keeps flat images at mathematically exact zeros.
_DCT_SNAP = 1e-8


def perceptual_hash(img: PixelImage) -> int:
    """Median-threshold bits over the top-left 8x8 block of an orthonormal 2-D DCT.

    The DC coefficient is excluded from the median and its bit is pinned to 0,
    so a constant image hashes to zero.
    """
    g = _gray_resized(img, 32, 32)
    spectrum = _DCT32 @ g @ _DCT32.T
    block = spectrum[:8, :8].ravel()
    block[np.abs(block) < _DCT_SNAP] = 0.0
    median = float(np.median(block[1:]))
    bits = block > median
    bits[0] = False
    return _bits_to_u64(bits)


def hash_triple(img: PixelImage) -> HashTriple:
    return HashTriple(average_hash(img), perceptual_hash(img), difference_hash(img))


def hamming(a: HashTriple, b: HashTriple) -> int:
    """Number of differing bits across the full 192-bit concatenation."""
    return (
        (a.ahash ^ b.ahash).bit_count()
        + (a.phash ^ b.phash).bit_count()
        + (a.dhash ^ b.dhash).bit_count()
    )


class UnionFind:
    """Disjoint sets with path compression and union by size."""

    def __init__(self, n: int) -> None:
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, u: int) -> int:
        root = u
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[u] != root:
            self.parent[u], u = root, self.parent[u]
        return root

    def union(self, u: int, v: int) -> None:
        ru, rv = self.find(u), self.find(v)
        if ru == rv:
            return
        if self.size[ru] < self.size[rv]:
            ru, rv = rv, ru
        self.parent[rv] = ru
        self.size[ru] += self.size[rv]


def select_keeper(members: Sequence["ImageRecord"]) -> str:
    """Keeper is the largest image: pixel area, then byte size, then smallest id."""
    if len(members) < 2:
        raise DedupError("keeper selection needs at least two members")
    best = sorted(
        members, key=lambda r: (-(r.width * r.height), -r.byte_size, r.id)
    )[0]
    return best.id


def find_duplicate_clusters(
    records: Sequence["ImageRecord"], threshold: int = DEFAULT_THRESHOLD
) -> list[DuplicateCluster]:
    """Connected components of the within-category similarity graph.

    Two records are linked when their fingerprints differ in at most
    ``threshold`` of 192 bits; components of size >= 2 come back as clusters.
    All records must belong to one category and carry hashes.
    """
    if threshold < 0:
        raise DedupError(f"threshold must be >= 0, got {threshold}")
    if not records:
        return []
    categories = {r.category_id for r in records}
    if len(categories) > 1:
        raise DedupError(f"records span categories {sorted(categories)}")
    triples = []
    for r in records:
        if r.hash is None:
            raise DedupError(f"record {r.id!r} has no hash")
        triples.append(r.hash)

    uf = UnionFind(len(records))
    for i in range(len(records)):
        for j in range(i + 1, len(records)):
            if hamming(triples[i], triples[j]) <= threshold:
                uf.union(i, j)

    groups: dict[int, list[int]] = {}
    for i in range(len(records)):
        groups.setdefault(uf.find(i), []).append(i)

    clusters = []
    for idxs in groups.values():
        if len(idxs) < 2:
            continue
        members = [records[i] for i in idxs]
        clusters.append(
            DuplicateCluster(
                member_ids=sorted(r.id for r in members),
                keeper_id=select_keeper(members),
            )
        )
    clusters.sort(key=lambda c: c.member_ids[0])
    return clusters


def max_pairwise_distance(records: Iterable["ImageRecord"]) -> int:
    """Largest Hamming distance among a cluster's members, for reporting."""
    triples = [r.hash for r in records]
    worst = 0
    for i in range(len(triples)):
        for j in range(i + 1, len(triples)):
            worst = max(worst, hamming(triples[i], triples[j]))
    return worst
