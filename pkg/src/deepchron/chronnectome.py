"""Sliding-window dynamic functional connectivity.

A scan's ROI signals (M x N) are cut into rectangular windows, each window is
turned into an M x M Pearson matrix, and the strict upper triangle of every
matrix becomes one row of the dFC sequence (T x M(M-1)/2).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class InsufficientDataError(ValueError):
    """The series is shorter than the requested window or crop."""


@dataclass(frozen=True)
class BoldTimeSeries:
    subject_id: str
    scan_id: str
    signals: np.ndarray  # M ROIs x N volumes
    tr_seconds: float = 3.0

    def __post_init__(self):
        sig = np.asarray(self.signals, dtype=np.float64)
        if sig.ndim != 2 or sig.shape[0] < 2 or sig.shape[1] < 2:
            raise ValueError(f"signals must be M x N with M, N >= 2; got {sig.shape}")
        if not np.all(np.isfinite(sig)):
            raise ValueError("signals contain non-finite values")
        if self.tr_seconds <= 0:
            raise ValueError("tr_seconds must be positive")
        object.__setattr__(self, "signals", sig)

    @property
    def num_rois(self) -> int:
        return self.signals.shape[0]

    @property
    def num_volumes(self) -> int:
        return self.signals.shape[1]


@dataclass(frozen=True)
class WindowSpec:
    length_volumes: int = 30
    stride_volumes: int = 2

    def __post_init__(self):
        if self.length_volumes < 1 or self.stride_volumes < 1:
            raise ValueError("window length and stride must be positive")


@dataclass
class FCMatrix:
    values: np.ndarray
    degenerate_rois: tuple[int, ...] = ()


@dataclass
class DFCSequence:
    subject_id: str
    scan_id: str
    rows: np.ndarray  # T x D
    num_rois: int
    # (window index, roi index) pairs where the ROI was constant inside the window
    degenerate: list[tuple[int, int]] = field(default_factory=list)

    @property
    def num_windows(self) -> int:
        return self.rows.shape[0]

    @property
    def link_dim(self) -> int:
        return self.rows.shape[1]


def num_links(num_rois: int) -> int:
    return num_rois * (num_rois - 1) // 2


def sliding_windows(num_volumes: int, spec: WindowSpec) -> list[tuple[int, int]]:
    """Half-open [start, stop) ranges with starts 0, S, 2S, ... that fit inside N volumes."""
    if num_volumes < spec.length_volumes:
        raise InsufficientDataError(
            f"{num_volumes} volumes is shorter than the {spec.length_volumes}-volume window"
        )
    count = (num_volumes - spec.length_volumes) // spec.stride_volumes + 1
    return [
        (k * spec.stride_volumes, k * spec.stride_volumes + spec.length_volumes)
        for k in range(count)
    ]


def _corr_matrix(block: np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
    centered = block - block.mean(axis=1, keepdims=True)
    sd = np.sqrt(np.mean(centered * centered, axis=1))
    bad = sd == 0.0
    z = np.zeros_like(centered)
    z[~bad] = centered[~bad] / sd[~bad, None]
    r = (z @ z.T) / block.shape[1]
    r = np.clip(r, -1.0, 1.0)
    # symmetrize exactly; matmul rounding is not guaranteed symmetric
    r = 0.5 * (r + r.T)
    np.fill_diagonal(r, 1.0)
    return r, tuple(int(i) for i in np.flatnonzero(bad))


def window_fc(ts: BoldTimeSeries, window: tuple[int, int]) -> FCMatrix:
    """Pearson FC over one window.

    A ROI that is constant inside the window gets zero off-diagonal entries and
    is listed in ``degenerate_rois``.
    """
    start, stop = window
    if not (0 <= start < stop <= ts.num_volumes):
        raise ValueError(f"window {window} outside [0, {ts.num_volumes})")
    if stop - start < 2:
        raise InsufficientDataError("a window needs at least 2 volumes")
    values, bad = _corr_matrix(ts.signals[:, start:stop])
    return FCMatrix(values, bad)


def vectorize_upper(fc: FCMatrix | np.ndarray) -> np.ndarray:
    """Strict upper triangle, row-major: (0,1), (0,2), ..., (0,M-1), (1,2), ..."""
    values = fc.values if isinstance(fc, FCMatrix) else np.asarray(fc)
    iu = np.triu_indices(values.shape[0], k=1)
    return values[iu].copy()


def unvectorize_upper(vec: np.ndarray, num_rois: int) -> np.ndarray:
    """Inverse of :func:`vectorize_upper`; diagonal set to 1."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.size != num_links(num_rois):
        raise ValueError(f"expected {num_links(num_rois)} links, got {vec.size}")
    out = np.eye(num_rois)
    iu = np.triu_indices(num_rois, k=1)
    out[iu] = vec
    out[(iu[1], iu[0])] = vec
    return out


def compute_dfc(ts: BoldTimeSeries, spec: WindowSpec = WindowSpec()) -> DFCSequence:
    windows = sliding_windows(ts.num_volumes, spec)
    iu = np.triu_indices(ts.num_rois, k=1)
    rows = np.empty((len(windows), iu[0].size))
    degenerate = []
    for t, (start, stop) in enumerate(windows):
        r, bad = _corr_matrix(ts.signals[:, start:stop])
        rows[t] = r[iu]
        degenerate.extend((t, roi) for roi in bad)
    return DFCSequence(ts.subject_id, ts.scan_id, rows, ts.num_rois, degenerate)


def static_fc(ts: BoldTimeSeries) -> np.ndarray:
    return vectorize_upper(window_fc(ts, (0, ts.num_volumes)))


# --- file formats -----------------------------------------------------------

def read_scan_csv(path, subject_id: str = "", scan_id: str = "", tr_seconds: float = 3.0) -> BoldTimeSeries:
    """Read a scan CSV with header ``roi_0,...,roi_{M-1}`` and one row per volume."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = [f"roi_{i}" for i in range(len(header))]
        if header != expected:
            raise ValueError(f"{path}: header must be roi_0..roi_{len(header) - 1}")
        data = [[float(v) for v in row] for row in reader if row]
    signals = np.asarray(data, dtype=np.float64).T
    return BoldTimeSeries(subject_id or path.stem, scan_id or path.stem, signals, tr_seconds)


def write_scan_csv(path, ts: BoldTimeSeries) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"roi_{i}" for i in range(ts.num_rois)])
        for col in ts.signals.T:
            writer.writerow([repr(float(v)) for v in col])


def write_dfc_csv(path, dfc: DFCSequence) -> None:
    """Write ``w,link_0,...,link_{D-1}`` with one row per window."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["w"] + [f"link_{d}" for d in range(dfc.link_dim)])
        for t, row in enumerate(dfc.rows):
            writer.writerow([t] + [repr(float(v)) for v in row])


def read_dfc_csv(path, subject_id: str = "", scan_id: str = "") -> DFCSequence:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "w":
            raise ValueError(f"{path}: first column must be 'w'")
        rows = [[float(v) for v in row[1:]] for row in reader if row]
    arr = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)
    d = arr.shape[1]
    m = int(round((1 + np.sqrt(1 + 8 * d)) / 2))
    if num_links(m) != d:
        raise ValueError(f"{path}: {d} link columns is not M(M-1)/2 for any M")
    return DFCSequence(subject_id or path.stem, scan_id or path.stem, arr, m)
