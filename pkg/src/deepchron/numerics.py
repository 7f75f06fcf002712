"""Shared numeric primitives: checked matmul, stable activations, seeded RNG, statistics.

Dense matrices are plain float64 numpy arrays. Everything here is pure except
:class:`Rng`, which is single-owner.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Operand dimensions do not line up."""


class DegenerateVarianceError(ValueError):
    """A series (or pooled group) has zero variance."""


def as_matrix(values, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Coerce to a finite 2-D float64 array, optionally checking its shape."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if rows == 1 else arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    if rows is not None and arr.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise ShapeError(f"expected {cols} cols, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix has non-finite entries")
    return arr


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects two 2-D matrices")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.float64)


def sigmoid(x):
    """Logistic function, overflow-free for any finite input."""
    out = expit(np.asarray(x, dtype=np.float64))
    return out if out.ndim else float(out)


def tanh_act(x):
    out = np.tanh(np.asarray(x, dtype=np.float64))
    return out if out.ndim else float(out)


def softmax(logits) -> np.ndarray:
    """Row-wise softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def pearson(x, y) -> float:
    """Pearson correlation with population normalization.

    Raises DegenerateVarianceError if either series is constant; callers
    decide what to substitute.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"series lengths differ: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("pearson needs at least 2 observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(np.mean(dx * dx))
    sy = np.sqrt(np.mean(dy * dy))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateVarianceError("zero variance series")
    r = np.mean(dx * dy) / (sx * sy)
    return float(np.clip(r, -1.0, 1.0))


def two_sample_t(group_a, group_b) -> float:
    """Pooled-variance (Student) two-sample t statistic, mean(a) - mean(b) over its SE."""
    a = np.asarray(group_a, dtype=np.float64).ravel()
    b = np.asarray(group_b, dtype=np.float64).ravel()
    if a.size < 2 or b.size < 2:
        raise ValueError("each group needs at least 2 observations")
    na, nb = a.size, b.size
    ss = np.sum((a - a.mean()) ** 2) + np.sum((b - b.mean()) ** 2)
    pooled = ss / (na + nb - 2)
    if pooled == 0.0:
        raise DegenerateVarianceError("zero pooled variance")
    se = np.sqrt(pooled * (1.0 / na + 1.0 / nb))
    return float((a.mean() - b.mean()) / se)


def two_sample_t_columns(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized pooled t over feature columns; NaN where the pooled variance is zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = a.shape[0], b.shape[0]
    if na < 2 or nb < 2:
        raise ValueError("each group needs at least 2 observations")
    ss = ((a - a.mean(0)) ** 2).sum(0) + ((b - b.mean(0)) ** 2).sum(0)
    pooled = ss / (na + nb - 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (a.mean(0) - b.mean(0)) / np.sqrt(pooled * (1.0 / na + 1.0 / nb))
    t[pooled <= 0.0] = np.nan
    return t


class Rng:
    """Seeded generator keyed by (seed, stream).

    PCG64 seeded through SeedSequence, so draws are identical across platforms.
    Parallel work should take child generators with distinct stream ids.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, stream: int) -> "Rng":
        # mixes parent stream into the child's id so siblings of siblings differ
        return Rng(self.seed, (self.stream * 1_000_003 + int(stream) + 1) & 0xFFFFFFFFFFFFFFFF)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def choice(self, a, size=None, replace=True, p=None):
        return self.gen.choice(a, size=size, replace=replace, p=p)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream})"
