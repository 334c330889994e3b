"""Dense math primitives shared by the network, trainer and baseline.

Matrices and vectors are plain ``float64`` numpy arrays. The public helpers
here validate shapes and finiteness; the hot loops in :mod:`drnn_har.network`
and :mod:`drnn_har.training` call numpy directly on already-validated arrays.
"""

from __future__ import annotations

import numpy as np

LOG_FLOOR = 1e-12
INIT_LOW = -0.1
INIT_HIGH = 0.1

ACTIVATIONS = ("tanh", "logistic", "relu")


def _as_finite(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_matrix(values, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    m = _as_finite(values, "matrix")
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if rows is not None and m.shape[0] != rows:
        raise ValueError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ValueError(f"expected {cols} columns, got {m.shape[1]}")
    return m


def as_vector(values, length: int | None = None) -> np.ndarray:
    v = _as_finite(values, "vector")
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    if length is not None and v.size != length:
        raise ValueError(f"expected vector of length {length}, got {v.size}")
    return v


def mat_vec(m, v) -> np.ndarray:
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.size:
        raise ValueError(
            f"dimension mismatch: matrix is {m.shape[0]}x{m.shape[1]}, vector has length {v.size}"
        )
    return m @ v


def sigmoid(u: np.ndarray) -> np.ndarray:
    # exp(-|u|) never overflows; both branches agree with 1/(1+e^-u)
    e = np.exp(-np.abs(u))
    return np.where(u >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def apply_activation(kind: str, v) -> np.ndarray:
    v = _as_finite(v, "activation input")
    if kind == "tanh":
        return np.tanh(v)
    if kind == "logistic":
        return sigmoid(v)
    if kind == "relu":
        return np.maximum(v, 0.0)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def softmax(v, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    v = _as_finite(v, "softmax input")
    return _softmax(v, axis)


def _softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(y, d) -> float:
    """``-sum(d * log(y))`` with ``log`` floored at :data:`LOG_FLOOR`."""
    y = _as_finite(y, "probabilities")
    d = _as_finite(d, "target")
    if y.shape != d.shape:
        raise ValueError(f"length mismatch: y has shape {y.shape}, d has shape {d.shape}")
    return float(-np.sum(d * np.log(np.maximum(y, LOG_FLOOR))))


def l2_norm(arrays) -> float:
    """Euclidean norm over the concatenation of every array in ``arrays``."""
    if isinstance(arrays, np.ndarray):
        arrays = [arrays]
    total = 0.0
    for a in arrays:
        a = np.asarray(a, dtype=np.float64)
        total += float(np.dot(a.ravel(), a.ravel()))
    return float(np.sqrt(total))


class Rng:
    """Seeded random stream.

    Backed by numpy's PCG64 bit generator (O'Neill's permuted congruential
    generator, 128-bit state), seeded directly with a 64-bit unsigned integer.
    Only the ``random()``/``integers()``/``permutation()`` draws are used, so
    a seed pins the stream regardless of platform.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def random(self, size=None):
        return self._gen.random(size)

    def integers(self, low: int, high: int, size=None):
        """Uniform integer(s) in ``[low, high]`` inclusive; an int unless ``size`` is given."""
        if size is None:
            return int(self._gen.integers(low, high, endpoint=True))
        return self._gen.integers(low, high, size=size, endpoint=True)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def normal(self, scale: float, size) -> np.ndarray:
        return self._gen.normal(0.0, scale, size)

    def spawn(self) -> "Rng":
        return Rng(int(self._gen.integers(0, 2**63)))


def uniform_init(rng: Rng, rows: int, cols: int) -> np.ndarray:
    """Matrix with entries uniform on ``[-0.1, 0.1)``."""
    if rows < 1 or cols < 1:
        raise ValueError(f"dimensions must be positive, got {rows}x{cols}")
    u = rng.random((rows, cols))
    return INIT_LOW + (INIT_HIGH - INIT_LOW) * u
