"""Dense float64 kernels with numerically stable reductions.

Matrices are 2-D ``numpy.float64`` arrays in row-major order, feature
vectors are 1-D arrays. Every public function returns finite values or
raises.
"""

from typing import Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

Array = NDArray[np.float64]

# Clamp bound for cosine similarities of unit vectors.
_COS_LIMIT = 1.0


class ShapeError(ValueError):
    """Raised when operand shapes do not line up."""


class NonFiniteError(FloatingPointError):
    """Raised when a computation produces NaN or infinity."""


def as_matrix(values: ArrayLike, name: str = "matrix") -> Array:
    """Coerce to a 2-D float64 array and validate finiteness."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    _require_finite(arr, name)
    return arr


def as_vector(values: ArrayLike, name: str = "vector") -> Array:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def _require_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite entries")


class SeededRng:
    """Deterministic random source.

    Backed by numpy's PCG64 bit generator, whose output stream for a given
    seed is fixed across platforms and numpy releases.
    """

    algorithm = "PCG64"

    def __init__(self, seed: int):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low: float, high: float, size=None) -> Union[float, Array]:
        return self._gen.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None) -> Union[float, Array]:
        return self._gen.normal(loc, scale, size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> NDArray[np.int64]:
        """Fisher-Yates shuffle of ``range(n)``."""
        return self._gen.permutation(n)

    def unit_vectors(self, count: int, dim: int) -> Array:
        """Rows drawn uniformly from the unit sphere."""
        while True:
            raw = self._gen.normal(size=(count, dim))
            norms = np.linalg.norm(raw, axis=1)
            if np.all(norms > 0):
                return raw / norms[:, None]


def matmul(a: ArrayLike, b: ArrayLike) -> Array:
    """Matrix product with shape and finiteness checks."""
    left = as_matrix(a, "left operand")
    right = as_matrix(b, "right operand")
    if left.shape[1] != right.shape[0]:
        raise ShapeError(
            f"cannot multiply {left.shape[0]}x{left.shape[1]} by {right.shape[0]}x{right.shape[1]}"
        )
    product = left @ right
    _require_finite(product, "matmul result")
    return product


def l2_normalize(v: ArrayLike) -> Array:
    """Scale a vector to unit Euclidean norm. Zero vectors are rejected."""
    vec = as_vector(v)
    _require_finite(vec, "vector")
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return vec / norm


def l2_normalize_rows(m: ArrayLike) -> Array:
    """Row-wise ``l2_normalize``."""
    mat = as_matrix(m)
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("cannot normalize a zero row")
    return mat / norms[:, None]


def log_sum_exp(x: ArrayLike, axis: Optional[int] = None) -> Union[float, Array]:
    """``max(x) + log(sum(exp(x - max(x))))``; overflow-free for finite input."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("log_sum_exp of an empty input")
    _require_finite(arr, "log_sum_exp input")
    peak = np.max(arr, axis=axis, keepdims=True)
    total = np.log(np.sum(np.exp(arr - peak), axis=axis, keepdims=True)) + peak
    if axis is None:
        return float(total.reshape(()))
    return np.squeeze(total, axis=axis)


def log_softmax(logits: ArrayLike, temperature: float = 1.0) -> Array:
    """Log-probabilities along the last axis; never -inf for finite input."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    scaled = np.asarray(logits, dtype=np.float64) / temperature
    if scaled.size == 0:
        raise ValueError("softmax of an empty input")
    _require_finite(scaled, "logits")
    shifted = scaled - np.max(scaled, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def stable_softmax(logits: ArrayLike, temperature: float = 1.0) -> Array:
    """Softmax along the last axis via max subtraction.

    Accepts a vector or a matrix (row-wise). Entries underflow to exactly
    zero only when a logit trails the maximum by more than ~700 * temperature.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    scaled = np.asarray(logits, dtype=np.float64) / temperature
    if scaled.size == 0:
        raise ValueError("softmax of an empty input")
    _require_finite(scaled, "logits")
    exps = np.exp(scaled - np.max(scaled, axis=-1, keepdims=True))
    return exps / np.sum(exps, axis=-1, keepdims=True)


def cosine_similarity(a: ArrayLike, b: ArrayLike) -> float:
    """Dot product of two unit vectors, clamped to [-1, 1]."""
    left = as_vector(a, "a")
    right = as_vector(b, "b")
    if left.shape != right.shape:
        raise ShapeError(f"dimension mismatch: {left.shape[0]} vs {right.shape[0]}")
    return float(np.clip(left @ right, -_COS_LIMIT, _COS_LIMIT))


def cosine_matrix(queries: ArrayLike, keys: ArrayLike) -> Array:
    """Pairwise clamped dot products between unit-norm rows."""
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    k = np.atleast_2d(np.asarray(keys, dtype=np.float64))
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"dimension mismatch: {q.shape[1]} vs {k.shape[1]}")
    return np.clip(q @ k.T, -_COS_LIMIT, _COS_LIMIT)
