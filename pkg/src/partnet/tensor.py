"""Dense float64 kernels and the deterministic RNG used everywhere else.

All public kernels are pure functions over C-contiguous float64 numpy
arrays (row-major layout, which also fixes the byte order of every file
format in this package). Each kernel validates shapes, raises
:class:`~partnet.errors.NumericError` if a non-finite value would leak
out, and has a matching backward rule that consumes the cached forward
values.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError, UsageError

__all__ = [
    "SeededRng",
    "as_tensor",
    "central_difference",
    "fc_forward",
    "fc_grad",
    "matmul",
    "matmul_grad",
    "relu",
    "relu_grad",
    "softmax_rows",
    "softmax_rows_grad",
]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

# BLAS kernels use fused multiply-adds, so products of tiny matrices would
# not be bit-reproducible against a plain scalar reference. Below this edge
# length matmul uses a fixed k-ascending accumulation instead.
_EXACT_MATMUL_LIMIT = 8


def as_tensor(data, shape=None) -> np.ndarray:
    """Coerce ``data`` to a C-contiguous float64 array, optionally reshaped."""
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    return arr


def _require_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericError(f"{op} produced non-finite values")
    return arr


class SeededRng:
    """Deterministic counter-based generator (SplitMix64).

    Draw ``n`` consumes counters ``c+1 .. c+n``; output ``i`` is
    ``mix(seed + (c+i) * 0x9E3779B97F4A7C15)`` with the SplitMix64
    finalizer ``z ^= z>>30; z *= 0xBF58476D1CE4E5B9; z ^= z>>27;
    z *= 0x94D049BB133111EB; z ^= z>>31`` over wrapping 64-bit
    arithmetic. Identical seeds therefore reproduce identical streams
    on every platform, and streams can be computed out of order.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter)

    def _raw(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
            z = np.uint64(self.seed) + idx * _GOLDEN
            z = (z ^ (z >> np.uint64(30))) * _MIX1
            z = (z ^ (z >> np.uint64(27))) * _MIX2
            z = z ^ (z >> np.uint64(31))
        self.counter += n
        return z

    def split(self, tag: int) -> "SeededRng":
        """Independent child stream; the child seed is mix(seed ^ tag)."""
        with np.errstate(over="ignore"):
            z = (np.uint64(self.seed) ^ np.uint64(tag)) + _GOLDEN
            z = (z ^ (z >> np.uint64(30))) * _MIX1
            z = (z ^ (z >> np.uint64(27))) * _MIX2
            z = z ^ (z >> np.uint64(31))
        return SeededRng(int(z))

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=()) -> np.ndarray:
        """Uniform draws in [low, high); 53-bit mantissas from the raw stream."""
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        out = low + (high - low) * u
        return out.reshape(shape) if shape else float(out[0])

    def normal(self, shape=()) -> np.ndarray:
        """Standard normal draws via the Box-Muller transform."""
        n = int(np.prod(shape)) if shape else 1
        half = (n + 1) // 2
        u1 = (self._raw(half) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        u2 = (self._raw(half) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        r = np.sqrt(-2.0 * np.log1p(-u1))  # u1 < 1 so log1p(-u1) is finite
        theta = 2.0 * np.pi * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return out.reshape(shape) if shape else float(out[0])

    def integers(self, low: int, high: int, n: int = 1) -> np.ndarray:
        """Integers in [low, high) by 64-bit modulo (bias < 2^-50 at desk scale)."""
        if high <= low:
            raise UsageError(f"empty integer range [{low}, {high})")
        span = np.uint64(high - low)
        return (low + (self._raw(n) % span).astype(np.int64)).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n) driven by this stream."""
        order = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = int(self.integers(0, i + 1)[0])
            order[i], order[j] = order[j], order[i]
        return order


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product a @ b for 2-D float64 operands.

    Small products (all edges <= 8) accumulate over k in ascending order
    with separate multiply and add, so they reproduce a scalar
    triple-loop reference bit for bit; larger products go through BLAS.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    p, q = a.shape
    r = b.shape[1]
    with np.errstate(over="ignore", invalid="ignore"):  # checked below
        if max(p, q, r) <= _EXACT_MATMUL_LIMIT:
            out = np.zeros((p, r))
            for k in range(q):
                out += a[:, k : k + 1] * b[k : k + 1, :]
        else:
            out = a @ b
    return _require_finite(out, "matmul")


def matmul_grad(upstream: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Backward of matmul: returns (dA, dB) given d(out)."""
    upstream = as_tensor(upstream)
    if upstream.shape != (a.shape[0], b.shape[1]):
        raise UsageError(
            f"matmul_grad upstream {upstream.shape} does not match "
            f"forward output {(a.shape[0], b.shape[1])}"
        )
    return matmul(upstream, b.T), matmul(a.T, upstream)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by subtracting each row's maximum."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-D input, got {x.shape}")
    if not np.isfinite(x).all():
        raise NumericError("softmax_rows requires finite input")
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return _require_finite(e / e.sum(axis=1, keepdims=True), "softmax_rows")


def softmax_rows_grad(upstream: np.ndarray, softmax_out: np.ndarray) -> np.ndarray:
    """Backward of softmax_rows given the cached forward output."""
    upstream = as_tensor(upstream)
    s = as_tensor(softmax_out)
    if upstream.shape != s.shape:
        raise UsageError(
            f"softmax_rows_grad shapes differ: {upstream.shape} vs {s.shape}"
        )
    inner = (upstream * s).sum(axis=1, keepdims=True)
    return _require_finite(s * (upstream - inner), "softmax_rows_grad")


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(as_tensor(x), 0.0)


def relu_grad(upstream: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Passes upstream where x > 0, zero elsewhere (subgradient 0 at x = 0)."""
    upstream = as_tensor(upstream)
    x = as_tensor(x)
    if upstream.shape != x.shape:
        raise UsageError(f"relu_grad shapes differ: {upstream.shape} vs {x.shape}")
    return upstream * (x > 0.0)


def fc_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map W @ x + b with b broadcast over the columns of x."""
    x = as_tensor(x)
    weight = as_tensor(weight)
    bias = as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 2 or bias.ndim != 1:
        raise ShapeError(
            f"fc_forward expects 2-D x/W and 1-D b, got {x.shape}, "
            f"{weight.shape}, {bias.shape}"
        )
    if weight.shape[1] != x.shape[0] or weight.shape[0] != bias.shape[0]:
        raise ShapeError(
            f"fc_forward shapes incompatible: W {weight.shape}, x {x.shape}, "
            f"b {bias.shape}"
        )
    return _require_finite(matmul(weight, x) + bias[:, None], "fc_forward")


def fc_grad(upstream: np.ndarray, x: np.ndarray, weight: np.ndarray):
    """Backward of fc_forward: returns (dW, db, dx)."""
    upstream = as_tensor(upstream)
    if upstream.shape != (weight.shape[0], x.shape[1]):
        raise UsageError(
            f"fc_grad upstream {upstream.shape} does not match output "
            f"{(weight.shape[0], x.shape[1])}"
        )
    d_weight = matmul(upstream, as_tensor(x).T)
    d_bias = upstream.sum(axis=1)
    d_x = matmul(as_tensor(weight).T, upstream)
    return d_weight, d_bias, d_x


def central_difference(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Numeric gradient of a scalar function by central differences.

    Shared harness for every gradient check in the test suite: perturbs
    one coordinate of a copy of ``x`` at a time, so ``fn`` must be pure.
    """
    x = as_tensor(x).copy()
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = fn(x)
        flat[i] = orig - h
        lo = fn(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad
