"""Feature-map samples: synthetic generation and the PNFM file format.

The synthetic task is the desk-scale stand-in for a real fine-grained
dataset: class identity lives only in a small high-activation patch
planted on a class-specific subset of channels, so region-level models
must localize the patch to win. PNFM is the little-endian binary format
used to exchange feature maps with external exporters.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .tensor import SeededRng

__all__ = ["FeatureMap", "Sample", "SyntheticTaskSpec", "gen_synthetic",
           "ingest_features", "read_pnfm", "write_pnfm"]

PNFM_MAGIC = b"PNFM"
PNFM_VERSION = 1
PATCH_AMPLITUDE = 1.0


@dataclass
class FeatureMap:
    """(N, W, H) activations plus the image stride of one feature cell."""

    data: np.ndarray
    stride: int = 16

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise DataError(f"feature map must be (N, W, H), got {self.data.shape}")
        if self.stride < 1:
            raise DataError(f"stride must be >= 1, got {self.stride}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]


@dataclass
class Sample:
    """One training/evaluation example.

    ``patch_box`` is the planted ground-truth box of synthetic samples
    (inclusive feature-cell corners); loaded real data leaves it None.
    """

    feature_map: FeatureMap
    label: int
    source: str | None = None
    patch_box: tuple | None = None


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Knobs of the planted-patch task; channel sets per class are disjoint."""

    classes: int
    channels: int
    width: int
    height: int
    patch_size: int = 5
    signal_channels_per_class: int = 2
    noise_level: float = 0.5
    samples_per_class: int = 10
    stride: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.patch_size < 1 or self.patch_size > min(self.width, self.height):
            raise ConfigError(
                f"patch {self.patch_size} does not fit a "
                f"{self.width}x{self.height} map"
            )
        if self.classes * self.signal_channels_per_class > self.channels:
            raise ConfigError(
                f"{self.classes} classes x {self.signal_channels_per_class} "
                f"signal channels need more than {self.channels} channels"
            )
        if self.noise_level < 0.0:
            raise ConfigError(f"noise level must be >= 0, got {self.noise_level}")

    def signal_channels(self, label: int):
        lo = label * self.signal_channels_per_class
        return range(lo, lo + self.signal_channels_per_class)


def _patch_bump(size: int) -> np.ndarray:
    """Patch template peaking at its center cell so the argmax is unique."""
    if size == 1:
        return np.array([[PATCH_AMPLITUDE]])
    center = (size - 1) // 2
    xs = np.arange(size)
    cheb = np.maximum(np.abs(xs[:, None] - center), np.abs(xs[None, :] - center))
    return PATCH_AMPLITUDE * (1.0 - 0.5 * cheb / cheb.max())


def gen_synthetic(spec: SyntheticTaskSpec):
    """Deterministic planted-patch dataset, ``samples_per_class`` per class.

    Background noise is a per-channel DC level in [0, noise_level/2)
    drawn per sample plus independent per-cell jitter in the same range,
    so all background values stay below noise_level. The DC component
    makes global channel averages uninformative while leaving peak
    positions and within-channel contrast untouched. The sample's class
    adds a center-peaked patch of amplitude 1 at a random location on
    that class's signal channels; at noise level 0 the per-channel
    argmax of each signal channel is exactly the patch center.
    """
    rng = SeededRng(spec.seed)
    bump = _patch_bump(spec.patch_size)
    half = 0.5 * spec.noise_level
    samples = []
    for label in range(spec.classes):
        for _ in range(spec.samples_per_class):
            data = rng.uniform(0.0, half,
                               (spec.channels, spec.width, spec.height))
            data += rng.uniform(0.0, half, (spec.channels, 1, 1))
            px = int(rng.integers(0, spec.width - spec.patch_size + 1)[0])
            py = int(rng.integers(0, spec.height - spec.patch_size + 1)[0])
            for ch in spec.signal_channels(label):
                data[ch, px : px + spec.patch_size, py : py + spec.patch_size] += bump
            box = (px, py, px + spec.patch_size - 1, py + spec.patch_size - 1)
            samples.append(Sample(feature_map=FeatureMap(data, stride=spec.stride),
                                  label=label, patch_box=box))
    return samples


def write_pnfm(sample: Sample, path) -> None:
    """Serialize one sample; values are stored as little-endian float32."""
    fm = sample.feature_map
    header = struct.pack("<4sIIIIII", PNFM_MAGIC, PNFM_VERSION, fm.channels,
                         fm.width, fm.height, fm.stride, sample.label)
    payload = fm.data.astype("<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_pnfm(path) -> Sample:
    """Load one PNFM sample, promoting values to float64."""
    raw = Path(path).read_bytes()
    header_size = struct.calcsize("<4sIIIIII")
    if len(raw) < header_size:
        raise FormatError(
            f"{path}: header truncated, need {header_size} bytes, "
            f"got {len(raw)}"
        )
    magic, version, n, w, h, stride, label = struct.unpack(
        "<4sIIIIII", raw[:header_size])
    if magic != PNFM_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {PNFM_MAGIC!r}")
    if version != PNFM_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = header_size + 4 * n * w * h
    if len(raw) < expected:
        raise FormatError(
            f"{path}: payload truncated at byte {len(raw)}, "
            f"missing {expected - len(raw)} bytes of {expected}"
        )
    if len(raw) > expected:
        raise FormatError(
            f"{path}: {len(raw) - expected} trailing bytes after "
            f"{expected}-byte payload"
        )
    values = np.frombuffer(raw, dtype="<f4", offset=header_size)
    data = values.astype(np.float64).reshape(n, w, h)
    return Sample(feature_map=FeatureMap(data, stride=stride), label=label,
                  source=str(path))


def ingest_features(path):
    """Load a PNFM file, or every ``*.pnfm`` file of a directory (sorted)."""
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.pnfm"))
        if not files:
            raise FormatError(f"{path}: no .pnfm files found")
        return [read_pnfm(f) for f in files]
    if not p.exists():
        raise FormatError(f"{path}: no such file or directory")
    return [read_pnfm(p)]
