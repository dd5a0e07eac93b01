"""Discretized part proposals over backbone feature maps.

A feature map is an (N, W, H) float64 array; axis 1 is x (width), axis 2
is y (height), and spatial positions are flattened row-major as
``p = x * H + y``. Each channel votes for the position of its spatial
maximum; per-cell maxima of the resulting histogram become anchor
positions, and a fixed menu of boxes is emitted around every anchor.
All tie-breaks take the lowest row-major index so proposal lists are
byte-identical across runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, UsageError

__all__ = [
    "AnchorSpec",
    "PeakHistogram",
    "Proposal",
    "generate_proposals",
    "peak_histogram",
    "proposals_for_map",
    "select_cell_anchors",
    "subsample_anchor_spec",
    "write_proposals_jsonl",
]

DEFAULT_RATIOS = ((1, 1), (1, 2), (2, 1))


@dataclass(frozen=True)
class PeakHistogram:
    """Per-position counts of channel-wise peak votes (row-major over x, y)."""

    counts: np.ndarray  # (W*H,) int64
    width: int
    height: int


@dataclass(frozen=True)
class Proposal:
    """Inclusive box [x0, x1] x [y0, y1] in feature-map cells, with provenance."""

    x0: int
    y0: int
    x1: int
    y1: int
    cell_index: int
    anchor_index: int

    def area(self) -> int:
        return (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)

    def image_box(self, stride: int):
        """Pixel-coordinate box: feature cells scaled by the map stride."""
        return (
            self.x0 * stride,
            self.y0 * stride,
            (self.x1 + 1) * stride - 1,
            (self.y1 + 1) * stride - 1,
        )


def _nearest_odd(value: float) -> int:
    """Nearest odd integer >= 1; ties between two odd numbers go down."""
    lower = int(math.floor(value))
    lo = lower if lower % 2 == 1 else lower - 1
    hi = lo + 2
    pick = lo if (value - lo) <= (hi - value) else hi
    return max(pick, 1)


class AnchorSpec:
    """A fixed menu of (size, ratio) anchor boxes emitted at every anchor.

    ``entries`` is an ordered tuple of (size, (rw, rh)) pairs. The default
    menu holds 28 boxes: side 3 at ratio 1:1 only, then sides 5..21 in
    steps of 2 at ratios 1:1, 1:2 and 2:1. A ratio rw:rh rescales the
    square box area-preservingly (width size*sqrt(rw/rh), height
    size*sqrt(rh/rw)), each extent rounded to the nearest odd integer so
    the box center stays on its anchor cell.
    """

    def __init__(self, entries):
        self.entries = tuple((int(s), (int(r[0]), int(r[1]))) for s, r in entries)
        if not self.entries:
            raise ConfigError("anchor spec has no boxes")

    @classmethod
    def default(cls) -> "AnchorSpec":
        entries = [(3, (1, 1))]
        for size in range(5, 22, 2):
            for ratio in DEFAULT_RATIOS:
                entries.append((size, ratio))
        return cls(entries)

    @property
    def sizes(self):
        return tuple(sorted({s for s, _ in self.entries}))

    @property
    def ratios(self):
        return tuple(sorted({r for _, r in self.entries}))

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, AnchorSpec) and self.entries == other.entries

    def extents(self):
        """(width, height) integer extents for every entry, in order."""
        out = []
        for size, (rw, rh) in self.entries:
            scale = math.sqrt(rw / rh)
            out.append((_nearest_odd(size * scale), _nearest_odd(size / scale)))
        return out


def peak_histogram(feature_map: np.ndarray) -> PeakHistogram:
    """Count, per spatial position, the channels whose maximum sits there.

    Per-channel ties are broken by the lowest row-major index, so the
    histogram is invariant to positive rescaling of any channel and sums
    to the channel count N.
    """
    f = np.asarray(feature_map, dtype=np.float64)
    if f.ndim != 3:
        raise ShapeError(f"feature map must be (N, W, H), got {f.shape}")
    n, w, h = f.shape
    if n < 1 or w < 1 or h < 1:
        raise UsageError(f"empty feature map {f.shape}")
    winners = f.reshape(n, w * h).argmax(axis=1)  # argmax takes the first maximum
    counts = np.bincount(winners, minlength=w * h).astype(np.int64)
    return PeakHistogram(counts=counts, width=w, height=h)


def _cell_bounds(extent: int, cells: int):
    """Contiguous cell spans; remainder positions join the last cell."""
    base = extent // cells
    bounds = []
    for i in range(cells):
        lo = i * base
        hi = (i + 1) * base if i < cells - 1 else extent
        bounds.append((lo, hi))
    return bounds


def select_cell_anchors(hist: PeakHistogram, cells: int):
    """One anchor per cell of an ``cells x cells`` partition of the map.

    Returns cells**2 positions (x, y) in row-major cell order; within each
    cell the position with the maximum count wins, ties broken by the
    lowest row-major index.
    """
    if cells < 1:
        raise ConfigError(f"cell grid must be >= 1, got {cells}")
    w, h = hist.width, hist.height
    if cells > w or cells > h:
        raise ConfigError(f"cell grid {cells} exceeds map size {w}x{h}")
    grid = hist.counts.reshape(w, h)
    anchors = []
    for cx_lo, cx_hi in _cell_bounds(w, cells):
        for cy_lo, cy_hi in _cell_bounds(h, cells):
            sub = grid[cx_lo:cx_hi, cy_lo:cy_hi]
            flat = int(sub.argmax())  # first maximum == lowest row-major index
            dx, dy = divmod(flat, sub.shape[1])
            anchors.append((cx_lo + dx, cy_lo + dy))
    return anchors


def generate_proposals(anchors, spec: AnchorSpec, width: int, height: int):
    """Emit every spec box centered on every anchor, clipped to the map.

    Output order is anchor-major then entry-major, so the proposal count
    is exactly len(anchors) * len(spec). Clipping keeps corners inside
    [0, W) x [0, H); boxes never collapse below one cell because anchors
    are in bounds.
    """
    extents = spec.extents()
    proposals = []
    for cell_index, (ax, ay) in enumerate(anchors):
        if not (0 <= ax < width and 0 <= ay < height):
            raise UsageError(f"anchor ({ax}, {ay}) outside {width}x{height} map")
        for anchor_index, (bw, bh) in enumerate(extents):
            x0 = max(ax - (bw - 1) // 2, 0)
            x1 = min(ax + (bw - 1) // 2, width - 1)
            y0 = max(ay - (bh - 1) // 2, 0)
            y1 = min(ay + (bh - 1) // 2, height - 1)
            if x1 < x0:  # safety clamp, unreachable for in-bounds anchors
                x0 = x1 = min(max(ax, 0), width - 1)
            if y1 < y0:
                y0 = y1 = min(max(ay, 0), height - 1)
            proposals.append(
                Proposal(x0=x0, y0=y0, x1=x1, y1=y1,
                         cell_index=cell_index, anchor_index=anchor_index)
            )
    return proposals


def subsample_anchor_spec(spec: AnchorSpec, k_target: int) -> AnchorSpec:
    """Keep ``k_target`` boxes spread uniformly over the area-ranked menu.

    Boxes are sorted by extent area (stable, so equal areas keep menu
    order) and rank ``floor((2i + 1) * K / (2 * k))`` is kept for
    i = 0..k-1. Supported targets are 3, 7, 14 and the identity 28.
    """
    supported = (3, 7, 14, 28)
    if k_target not in supported:
        raise ConfigError(f"unsupported proposal count {k_target}; pick from {supported}")
    if k_target == len(spec):
        return spec
    if k_target > len(spec):
        raise ConfigError(f"cannot subsample {k_target} boxes from {len(spec)}")
    extents = spec.extents()
    order = sorted(range(len(spec)), key=lambda i: (extents[i][0] * extents[i][1], i))
    total = len(spec)
    picks = [order[((2 * i + 1) * total) // (2 * k_target)] for i in range(k_target)]
    return AnchorSpec([spec.entries[i] for i in sorted(picks)])


def proposals_for_map(feature_map: np.ndarray, cells: int, spec: AnchorSpec):
    """Full proposal pass: histogram, per-cell anchors, box generation."""
    hist = peak_histogram(feature_map)
    anchors = select_cell_anchors(hist, cells)
    return generate_proposals(anchors, spec, hist.width, hist.height)


def write_proposals_jsonl(proposals, stride: int, path) -> None:
    """One JSON object per proposal: feature box, image box, provenance."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in proposals:
            ix0, iy0, ix1, iy1 = p.image_box(stride)
            fh.write(json.dumps({
                "feature_box": [p.x0, p.y0, p.x1, p.y1],
                "image_box": [ix0, iy0, ix1, iy1],
                "cell_index": p.cell_index,
                "anchor_index": p.anchor_index,
            }) + "\n")
