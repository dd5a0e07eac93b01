"""Max-pooling of proposal regions to a fixed grid, with gradient routing.

Pooling caches the winning source index of every output bin so the
backward pass can scatter upstream gradients exactly where the forward
maxima came from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dpp import Proposal
from .errors import ShapeError, UsageError

__all__ = ["RoiFeature", "roi_max_pool", "roi_max_pool_grad"]


@dataclass
class RoiFeature:
    """Pooled (N, m, m) values plus, per bin, the flat source index (x*H + y)."""

    values: np.ndarray  # (N, m, m) float64
    argmax_index: np.ndarray  # (N, m, m) int64, flat over the source W*H grid

    def vector(self) -> np.ndarray:
        """Row-major flattening used as the per-proposal feature vector."""
        return self.values.reshape(-1)


def _bin_spans(extent: int, bins: int):
    """Near-equal contiguous spans; empty spans widen to one source cell."""
    spans = []
    for b in range(bins):
        lo = (b * extent) // bins
        hi = ((b + 1) * extent) // bins
        lo = min(lo, extent - 1)
        hi = min(max(hi, lo + 1), extent)
        spans.append((lo, hi))
    return spans


def roi_max_pool(feature_map: np.ndarray, proposal: Proposal, bins: int) -> RoiFeature:
    """Channel-wise max over an m x m split of the proposal's box.

    Ties at the bin maximum take the lowest row-major source index.
    """
    f = np.asarray(feature_map, dtype=np.float64)
    if f.ndim != 3:
        raise ShapeError(f"feature map must be (N, W, H), got {f.shape}")
    if bins < 1:
        raise UsageError(f"pooling grid must be >= 1, got {bins}")
    n, w, h = f.shape
    if not (0 <= proposal.x0 <= proposal.x1 < w and 0 <= proposal.y0 <= proposal.y1 < h):
        raise UsageError(f"proposal {proposal} outside {w}x{h} map")
    x_spans = _bin_spans(proposal.x1 - proposal.x0 + 1, bins)
    y_spans = _bin_spans(proposal.y1 - proposal.y0 + 1, bins)
    values = np.empty((n, bins, bins))
    argmax = np.empty((n, bins, bins), dtype=np.int64)
    for bx, (xl, xh) in enumerate(x_spans):
        for by, (yl, yh) in enumerate(y_spans):
            window = f[:, proposal.x0 + xl : proposal.x0 + xh,
                       proposal.y0 + yl : proposal.y0 + yh]
            flat = window.reshape(n, -1)
            # row-major order inside the window matches row-major order of
            # the map restricted to the window, so argmax ties resolve to
            # the lowest flat source index
            win = flat.argmax(axis=1)
            values[:, bx, by] = flat[np.arange(n), win]
            wy = window.shape[2]
            sx = proposal.x0 + xl + win // wy
            sy = proposal.y0 + yl + win % wy
            argmax[:, bx, by] = sx * h + sy
    return RoiFeature(values=values, argmax_index=argmax)


def roi_max_pool_grad(upstream: np.ndarray, cache: RoiFeature, map_shape) -> np.ndarray:
    """Scatter upstream gradients onto the cached argmax positions.

    Positions selected by several bins accumulate by summation; all other
    positions stay zero.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != cache.values.shape:
        raise UsageError(
            f"upstream {upstream.shape} does not match cached pooling output "
            f"{cache.values.shape}"
        )
    n, w, h = map_shape
    if cache.values.shape[0] != n:
        raise UsageError(
            f"cache has {cache.values.shape[0]} channels, map has {n}"
        )
    grad = np.zeros((n, w * h))
    for ch in range(n):
        np.add.at(grad[ch], cache.argmax_index[ch].reshape(-1),
                  upstream[ch].reshape(-1))
    return grad.reshape(n, w, h)
