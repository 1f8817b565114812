"""Checkpoint files: versioned binary header plus raw little-endian doubles.

Layout: 8-byte magic, u32 little-endian header length, UTF-8 JSON header
(version, model structure, tensor names/shapes in order), then each tensor's
float64 little-endian C-order bytes concatenated.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .network import Encoder, LinearHead, ProjectionHead

MAGIC = b"SCLCKPT1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _write(path: Path, header: dict, tensors: list[tuple[str, np.ndarray]]) -> None:
    header = dict(header)
    header["version"] = FORMAT_VERSION
    header["tensors"] = [{"name": n, "shape": list(t.shape)} for n, t in tensors]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.array(len(blob), dtype="<u4").tobytes())
        f.write(blob)
        for _, t in tensors:
            f.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def _read(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    hlen = int(np.frombuffer(data[8:12], dtype="<u4")[0])
    header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')!r}")
    offset = 12 + hlen
    tensors: dict[str, np.ndarray] = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        tensors[spec["name"]] = arr.reshape(shape).astype(np.float64)
        offset += count * 8
    if offset != len(data):
        raise CheckpointError(f"{path}: trailing bytes after tensors")
    return header, tensors


def save_model(
    path: str | Path,
    encoder: Encoder,
    projector: ProjectionHead | None = None,
    head: LinearHead | None = None,
    extra: dict | None = None,
) -> None:
    structure = {
        "encoder": {
            "in_channels": encoder.in_channels,
            "conv_channels": list(encoder.conv_channels),
            "embed_dim": encoder.embed_dim,
            "stem_pools": encoder.stem_pools,
        }
    }
    tensors = [(p.name, p.value) for p in encoder.params()]
    tensors += list(encoder.buffers())
    if projector is not None:
        structure["projector"] = {
            "embed_dim": projector.embed_dim,
            "hidden_dim": projector.hidden_dim,
            "proj_dim": projector.proj_dim,
        }
        tensors += [(p.name, p.value) for p in projector.params()]
    if head is not None:
        structure["head"] = {"embed_dim": head.embed_dim, "n_classes": head.n_classes}
        tensors += [(p.name, p.value) for p in head.params()]
    _write(Path(path), {"structure": structure, "extra": extra or {}}, tensors)


def load_model(
    path: str | Path,
) -> tuple[Encoder, ProjectionHead | None, LinearHead | None, dict]:
    header, tensors = _read(Path(path))
    structure = header["structure"]
    enc_meta = structure["encoder"]
    encoder = Encoder(
        in_channels=enc_meta["in_channels"],
        conv_channels=tuple(enc_meta["conv_channels"]),
        embed_dim=enc_meta["embed_dim"],
        stem_pools=enc_meta.get("stem_pools", 1),
    )
    projector = None
    if "projector" in structure:
        p = structure["projector"]
        projector = ProjectionHead(
            embed_dim=p["embed_dim"], hidden_dim=p["hidden_dim"], proj_dim=p["proj_dim"]
        )
    head = None
    if "head" in structure:
        h = structure["head"]
        head = LinearHead(embed_dim=h["embed_dim"], n_classes=h["n_classes"])
    modules = [encoder] + [m for m in (projector, head) if m is not None]
    for module in modules:
        for param in module.params():
            if param.name not in tensors:
                raise CheckpointError(f"{path}: missing tensor {param.name!r}")
            stored = tensors[param.name]
            if stored.shape != param.value.shape:
                raise CheckpointError(
                    f"{path}: tensor {param.name!r} shape {stored.shape} !="
                    f" {param.value.shape}"
                )
            param.value[...] = stored
    for name, buf in encoder.buffers():
        if name in tensors:
            buf[...] = tensors[name]
    return encoder, projector, head, header.get("extra", {})
