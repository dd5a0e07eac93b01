"""PNCK checkpoint container: JSON metadata plus named float64 blobs.

Layout, all little-endian: magic "PNCK", u32 version=1, u32 metadata
length, metadata JSON (utf-8), u32 blob count, then per blob a u32 name
length, the utf-8 name, u32 ndim, u32 dims, and the row-major float64
payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

__all__ = ["config_from_meta", "load_checkpoint", "load_gap_classifier",
           "load_head", "meta_for_config", "save_checkpoint",
           "save_gap_classifier", "save_head"]

PNCK_MAGIC = b"PNCK"
PNCK_VERSION = 1


def save_checkpoint(path, meta: dict, arrays: dict) -> None:
    chunks = [struct.pack("<4sI", PNCK_MAGIC, PNCK_VERSION)]
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(meta_bytes)))
    chunks.append(meta_bytes)
    chunks.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(
                f"{self.path}: truncated at byte {len(self.raw)}, needed "
                f"{self.pos + n - len(self.raw)} more bytes"
            )
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path):
    """Returns (meta, arrays) with arrays as float64 ndarrays."""
    reader = _Reader(Path(path).read_bytes(), path)
    magic = reader.take(4)
    if magic != PNCK_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {PNCK_MAGIC!r}")
    version = reader.u32()
    if version != PNCK_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    meta = json.loads(reader.take(reader.u32()).decode("utf-8"))
    arrays = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        ndim = reader.u32()
        shape = struct.unpack(f"<{ndim}I", reader.take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(reader.take(8 * count), dtype="<f8")
        arrays[name] = data.astype(np.float64).reshape(shape)
    if reader.pos != len(reader.raw):
        raise FormatError(
            f"{path}: {len(reader.raw) - reader.pos} trailing bytes"
        )
    return meta, arrays


def meta_for_config(kind: str, config, **extra) -> dict:
    from dataclasses import asdict

    meta = {"kind": kind, "config": asdict(config)}
    meta.update(extra)
    return meta


def config_from_meta(meta: dict):
    from .config import TrainConfig

    raw = dict(meta["config"])
    raw["lr_drop_epochs"] = tuple(raw.get("lr_drop_epochs", ()))
    return TrainConfig(**raw)


def save_head(path, params, config, **extra) -> None:
    save_checkpoint(path, meta_for_config("partnet_head", config, **extra),
                    params.as_dict())


def load_head(path):
    """Returns (params, config, meta) for a scoring-head checkpoint."""
    from .head import HeadParams

    meta, arrays = load_checkpoint(path)
    if meta.get("kind") != "partnet_head":
        raise FormatError(f"{path}: not a scoring-head checkpoint")
    return HeadParams(**arrays), config_from_meta(meta), meta


def save_gap_classifier(path, model, config, kind: str = "gap_classifier",
                        **extra) -> None:
    save_checkpoint(path, meta_for_config(kind, config, **extra),
                    {"w": model.weight, "b": model.bias})


def load_gap_classifier(path):
    """Returns (model, config, meta) for a GAP-classifier checkpoint."""
    from .classifier import GapClassifier

    meta, arrays = load_checkpoint(path)
    if meta.get("kind") not in ("gap_classifier", "part_classifier"):
        raise FormatError(f"{path}: not a classifier checkpoint")
    return (GapClassifier(weight=arrays["w"], bias=arrays["b"]),
            config_from_meta(meta), meta)
