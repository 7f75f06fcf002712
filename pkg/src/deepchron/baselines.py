"""Non-deep competitors: static FC, status occurrence and dFC variability, each feeding a linear SVM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .chronnectome import DFCSequence
from .numerics import Rng, two_sample_t_columns


class ConfigurationError(ValueError):
    pass


class DegeneracyError(ValueError):
    pass


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        sd = x.std(axis=0)
        sd[sd == 0] = 1.0
        return cls(x.mean(axis=0), sd)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale


@dataclass
class LinearSvmModel:
    weights: np.ndarray
    bias: float
    l2_coeff: float

    def decision(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weights + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Labels in {0, 1}; ties at zero go to the positive class."""
        return (self.decision(x) >= 0).astype(int)


def hinge_objective(w, b, x, y, l2_coeff) -> float:
    margins = y * (x @ w + b)
    return float(np.mean(np.maximum(0.0, 1.0 - margins)) + 0.5 * l2_coeff * np.dot(w, w))


def svm_train(features, labels, l2_coeff: float = 0.01, epochs: int = 2000, seed: int = 0,
              batch_size: int | None = None) -> LinearSvmModel:
    """Primal subgradient descent on mean hinge loss + l2/2 ||w||^2 (bias unpenalized).

    Step size 1/(l2 * t). Full-batch by default; with ``batch_size`` the
    examples are visited in seeded shuffled minibatches. Returns the final iterate.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("features must be n x d with one label per row")
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ValueError("labels must be -1 or +1")
    if np.unique(y).size < 2:
        raise ConfigurationError("svm_train needs both classes")
    if l2_coeff <= 0:
        raise ValueError("l2_coeff must be positive")
    n, d = x.shape
    w = np.zeros(d)
    b = 0.0
    rng = Rng(seed)
    step = 0
    for _ in range(epochs):
        if batch_size is None:
            batches = [np.arange(n)]
        else:
            order = rng.permutation(n)
            batches = [order[s:s + batch_size] for s in range(0, n, batch_size)]
        for idx in batches:
            step += 1
            eta = 1.0 / (l2_coeff * step)
            xb, yb = x[idx], y[idx]
            active = yb * (xb @ w + b) < 1.0
            gw = l2_coeff * w - (yb[active] @ xb[active]) / idx.size
            gb = -yb[active].sum() / idx.size
            w = w - eta * gw
            b = b - eta * gb
    return LinearSvmModel(w, float(b), l2_coeff)


# --- k-means statuses ---------------------------------------------------------------

@dataclass
class StatusModel:
    centroids: np.ndarray
    inertia: float = np.nan
    inertia_trace: tuple = ()

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def assign(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest centroid; argmin picks the lowest index on ties."""
    return np.argmin(_sq_dists(np.asarray(x, dtype=np.float64), centroids), axis=1)


def _kmeans_pp(x: np.ndarray, k: int, rng: Rng) -> np.ndarray:
    n = x.shape[0]
    centers = [x[int(rng.integers(n))]]
    d2 = _sq_dists(x, centers[0][None])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            raise DegeneracyError("fewer distinct rows than clusters")
        idx = int(rng.choice(n, p=d2 / total))
        centers.append(x[idx])
        d2 = np.minimum(d2, _sq_dists(x, x[idx][None])[:, 0])
    return np.array(centers)


def kmeans_fit(rows, k: int = 5, seed: int = 0, max_iter: int = 300) -> StatusModel:
    """k-means++ seeding followed by Lloyd iterations until the assignment stops changing."""
    x = np.asarray(rows, dtype=np.float64)
    if k < 2:
        raise ValueError("k must be at least 2")
    if x.shape[0] < k or np.unique(x, axis=0).shape[0] < k:
        raise DegeneracyError(f"need at least {k} distinct rows")
    rng = Rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    labels = assign(x, centroids)
    trace = []
    for _ in range(max_iter):
        for j in range(k):
            members = labels == j
            if members.any():
                centroids[j] = x[members].mean(axis=0)
            else:
                # reseed to the point farthest from its current centroid
                far = int(np.argmax(((x - centroids[labels]) ** 2).sum(1)))
                centroids[j] = x[far]
                labels[far] = j
        d = _sq_dists(x, centroids)
        new_labels = np.argmin(d, axis=1)
        trace.append(float(d[np.arange(x.shape[0]), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return StatusModel(centroids, trace[-1], tuple(trace))


def status_features(dfc: DFCSequence | np.ndarray, model: StatusModel) -> np.ndarray:
    """Fraction of windows whose nearest centroid is each status."""
    rows = dfc.rows if isinstance(dfc, DFCSequence) else np.asarray(dfc)
    counts = np.bincount(assign(rows, model.centroids), minlength=model.k)
    return counts / rows.shape[0]


def variability_features(dfc: DFCSequence | np.ndarray) -> np.ndarray:
    """Root-mean-square deviation of every link's series about its own mean."""
    rows = dfc.rows if isinstance(dfc, DFCSequence) else np.asarray(dfc, dtype=np.float64)
    if rows.shape[0] < 2:
        raise ValueError("variability needs at least two windows")
    centered = rows - rows.mean(axis=0)
    return np.sqrt(np.mean(centered * centered, axis=0))


def select_by_ttest(features, labels, alpha: float = 0.05) -> np.ndarray:
    """Indices of features whose pooled two-sample |t| exceeds the two-sided normal critical value.

    Zero-variance features are skipped. If nothing survives, the single
    largest-|t| feature is kept (or feature 0 if every feature is degenerate).
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    classes = np.unique(y)
    if classes.size != 2:
        raise ConfigurationError("t-test selection needs exactly two classes")
    t = two_sample_t_columns(x[y == classes[1]], x[y == classes[0]])
    crit = norm.ppf(1.0 - alpha / 2.0)
    abs_t = np.abs(t)
    valid = np.isfinite(abs_t)
    keep = np.flatnonzero(valid & (abs_t > crit))
    if keep.size:
        return keep
    if not valid.any():
        return np.array([0])
    return np.array([int(np.nanargmax(abs_t))])
