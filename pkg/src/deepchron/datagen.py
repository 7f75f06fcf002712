"""Synthetic BOLD-like corpora with planted connectivity statuses.

Each class owns a Markov chain over k statuses. A scan follows its class's
chain volume by volume (geometric dwell) and each volume is drawn from the
current status's correlation template plus isotropic noise.

Two presets:

* order-coded: the classes cycle through the statuses in opposite directions
  and share the uniform stationary distribution, so occupancy carries no
  class information; only the order of statuses does.
* occupancy-coded: the classes share the jump structure but one class dwells
  longer in status 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chronnectome import BoldTimeSeries, write_scan_csv
from .numerics import Rng


class DegeneracyError(RuntimeError):
    pass


@dataclass
class SyntheticSpec:
    num_rois: int = 16
    num_volumes: int = 136
    num_statuses: int = 3
    # one row-stochastic k x k matrix per class; index = class label
    transitions: list = field(default_factory=list)
    dwell_volumes: float = 20.0
    noise_sigma: float = 0.3
    subjects_per_class: int = 100
    scans_per_subject: int = 1
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        self.transitions = [np.asarray(t, dtype=np.float64) for t in self.transitions]
        if self.num_rois < 4 or self.num_statuses < 2:
            raise ValueError("need M >= 4 ROIs and k >= 2 statuses")
        for t in self.transitions:
            if t.shape != (self.num_statuses, self.num_statuses):
                raise ValueError(f"transition matrix shape {t.shape} != k x k")
            if np.any(t < 0) or np.max(np.abs(t.sum(axis=1) - 1.0)) > 1e-12:
                raise ValueError("transition matrices must be row-stochastic")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "num_rois": self.num_rois,
            "num_volumes": self.num_volumes,
            "num_statuses": self.num_statuses,
            "transitions": [t.tolist() for t in self.transitions],
            "dwell_volumes": self.dwell_volumes,
            "noise_sigma": self.noise_sigma,
            "subjects_per_class": self.subjects_per_class,
            "scans_per_subject": self.scans_per_subject,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticSpec":
        return cls(**obj)


def is_positive_definite(c: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(c)
    except np.linalg.LinAlgError:
        return False
    return True


def _block_template(m: int, rng: Rng) -> np.ndarray:
    """Two signed blocks on one shared factor: positive within a block, negative across.

    Every link carries a strong correlation, which keeps windowed estimates
    far from zero and the statuses well separated in dFC space.
    """
    signs = np.ones(m)
    signs[rng.permutation(m)[: int(rng.integers(2, m - 1))]] = -1.0
    loading = rng.uniform(0.75, 0.95, size=m) * signs
    c = np.outer(loading, loading)
    np.fill_diagonal(c, 1.0)
    return c


def make_status_library(num_rois: int, k: int, rng: Rng, min_distance: float = 0.5,
                        max_tries: int = 1000) -> list[np.ndarray]:
    """k block-structured correlation matrices, pairwise Frobenius distance >= min_distance."""
    if num_rois < 4 or k < 2:
        raise ValueError("need M >= 4 and k >= 2")
    library: list[np.ndarray] = []
    tries = 0
    while len(library) < k:
        tries += 1
        if tries > max_tries:
            raise DegeneracyError(f"could not draw {k} distinct templates in {max_tries} tries")
        c = _block_template(num_rois, rng)
        if not is_positive_definite(c):
            continue
        if all(np.linalg.norm(c - other) >= min_distance for other in library):
            library.append(c)
    return library


def stationary_distribution(p: np.ndarray) -> np.ndarray:
    """Left eigenvector of a row-stochastic matrix for eigenvalue 1, normalized to sum 1."""
    vals, vecs = np.linalg.eig(np.asarray(p, dtype=np.float64).T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    return v / v.sum()


def sample_status_path(p: np.ndarray, n: int, rng: Rng) -> np.ndarray:
    k = p.shape[0]
    cdf = np.cumsum(p, axis=1)
    draws = rng.uniform(size=n)
    path = np.empty(n, dtype=int)
    s = int(rng.choice(k, p=stationary_distribution(p)))
    for v in range(n):
        if v > 0:
            s = min(int(np.searchsorted(cdf[s], draws[v], side="right")), k - 1)
        path[v] = s
    return path


def synth_scan(spec: SyntheticSpec, label: int, rng: Rng, library: list[np.ndarray],
               subject_id: str = "s", scan_id: str = "s_0") -> BoldTimeSeries:
    path = sample_status_path(spec.transitions[label], spec.num_volumes, rng)
    factors = [np.linalg.cholesky(c) for c in library]
    z = rng.normal(size=(spec.num_volumes, spec.num_rois))
    noise = rng.normal(scale=spec.noise_sigma, size=(spec.num_rois, spec.num_volumes)) \
        if spec.noise_sigma > 0 else 0.0
    signals = np.empty((spec.num_rois, spec.num_volumes))
    for s, lower in enumerate(factors):
        cols = np.flatnonzero(path == s)
        signals[:, cols] = lower @ z[cols].T
    return BoldTimeSeries(subject_id, scan_id, signals + noise)


def _stay(dwell: float) -> float:
    if dwell < 1:
        raise ValueError("mean dwell must be at least one volume")
    return 1.0 - 1.0 / dwell


def cyclic_transition(k: int, dwell: float) -> np.ndarray:
    """Stay with p = 1 - 1/dwell, otherwise advance i -> i+1 (mod k)."""
    p_stay = _stay(dwell)
    t = np.zeros((k, k))
    for i in range(k):
        t[i, i] = p_stay
        t[i, (i + 1) % k] = 1.0 - p_stay
    return t


def order_coded_spec(num_rois: int = 16, k: int = 3, **kw) -> SyntheticSpec:
    """Class 0 cycles 0->1->2->..., class 1 the reverse; equal stationary occupancy."""
    if k < 3:
        raise ValueError("order coding needs k >= 3")
    dwell = kw.pop("dwell_volumes", 20.0)
    forward = cyclic_transition(k, dwell)
    return SyntheticSpec(num_rois=num_rois, num_statuses=k, transitions=[forward, forward.T.copy()],
                         dwell_volumes=dwell, name="order-coded", **kw)


def occupancy_coded_spec(num_rois: int = 16, k: int = 3, dwell_factor: float = 4.0,
                         **kw) -> SyntheticSpec:
    """Uniform jumps for both classes; class 1 stays dwell_factor times longer in status 0."""
    if k < 2:
        raise ValueError("need k >= 2")
    dwell = kw.pop("dwell_volumes", 10.0)

    def chain(dwell0):
        t = np.zeros((k, k))
        for i in range(k):
            stay = _stay(dwell0 if i == 0 else dwell)
            t[i] = (1.0 - stay) / (k - 1)
            t[i, i] = stay
        return t

    return SyntheticSpec(num_rois=num_rois, num_statuses=k,
                         transitions=[chain(dwell), chain(dwell * dwell_factor)],
                         dwell_volumes=dwell, name="occupancy-coded", **kw)


PRESETS = {"order-coded": order_coded_spec, "occupancy-coded": occupancy_coded_spec}


@dataclass
class SyntheticSubject:
    subject_id: str
    label: int
    scans: list[BoldTimeSeries]


def generate_corpus(spec: SyntheticSpec) -> list[SyntheticSubject]:
    """All subjects, class 0 first; bit-reproducible from the spec (including its seed)."""
    root = Rng(spec.seed)
    library = make_status_library(spec.num_rois, spec.num_statuses, root.child(0))
    subjects = []
    idx = 0
    for label in range(len(spec.transitions)):
        for _ in range(spec.subjects_per_class):
            sid = f"sub{idx:04d}"
            srng = root.child(1000 + idx)
            scans = [synth_scan(spec, label, srng.child(j), library, sid, f"{sid}_scan{j}")
                     for j in range(spec.scans_per_subject)]
            subjects.append(SyntheticSubject(sid, label, scans))
            idx += 1
    return subjects


def write_corpus(spec: SyntheticSpec, subjects: list[SyntheticSubject], out_dir) -> Path:
    """Scan CSVs under ``out_dir/scans`` plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    (out / "scans").mkdir(parents=True, exist_ok=True)
    entries = []
    for subj in subjects:
        paths = []
        for ts in subj.scans:
            rel = Path("scans") / f"{ts.scan_id}.csv"
            write_scan_csv(out / rel, ts)
            paths.append(rel.as_posix())
        entries.append({"id": subj.subject_id, "label": subj.label, "scans": paths})
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"subjects": entries, "spec_echo": spec.to_json()},
                                   indent=1, sort_keys=True))
    return manifest
