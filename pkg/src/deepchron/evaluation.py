"""Crop augmentation, subject-grouped cross-validation, majority voting and metrics.

MCI (label 1) is the positive class throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .chronnectome import BoldTimeSeries, DFCSequence, InsufficientDataError
from .numerics import Rng

NC, MCI = 0, 1
METRIC_NAMES = ("acc", "sen", "spe", "f1", "auc")


class ConfigurationError(ValueError):
    pass


@dataclass
class Sample:
    subject_id: str
    scan_id: str
    crop_index: int
    data: np.ndarray  # crop_len x D
    label: int


@dataclass
class SubjectRecord:
    subject_id: str
    label: int
    dfcs: list[DFCSequence]
    scans: list[BoldTimeSeries] = field(default_factory=list)


def augment(dfc: DFCSequence, label: int, crop_len: int = 30, stride: int = 1) -> list[Sample]:
    """Contiguous crops of ``crop_len`` windows starting at 0, stride, 2*stride, ..."""
    t_len = dfc.num_windows
    if t_len < crop_len:
        raise InsufficientDataError(f"{t_len} windows is shorter than the {crop_len}-window crop")
    return [
        Sample(dfc.subject_id, dfc.scan_id, j, dfc.rows[start:start + crop_len], label)
        for j, start in enumerate(range(0, t_len - crop_len + 1, stride))
    ]


# --- folds ------------------------------------------------------------------------

@dataclass
class Fold:
    train: list[str]
    val: list[str]
    test: list[str]


@dataclass
class FoldPlan:
    folds: list[Fold]
    seed: int

    def audit(self) -> list[tuple[int, str]]:
        """(fold, subject) pairs that show up in more than one phase; empty when clean."""
        leaks = []
        for i, f in enumerate(self.folds):
            seen: dict[str, int] = {}
            for sid in [*f.train, *f.val, *f.test]:
                seen[sid] = seen.get(sid, 0) + 1
            leaks.extend((i, sid) for sid, c in seen.items() if c > 1)
        return leaks

    def to_json(self) -> dict:
        return {"seed": self.seed,
                "folds": [{"train": f.train, "val": f.val, "test": f.test} for f in self.folds]}


def make_folds(subject_labels: dict[str, int], k: int = 5, val_fraction: float = 0.10,
               seed: int = 0) -> FoldPlan:
    """Class-stratified subject partition into k test folds, plus a stratified validation subset.

    Each class's subjects are shuffled and dealt round-robin into the folds.
    Within each fold's remaining subjects, ``val_fraction`` of every class
    (at least one) becomes validation.
    """
    rng = Rng(seed)
    by_class: dict[int, list[str]] = {}
    for sid in sorted(subject_labels):
        by_class.setdefault(int(subject_labels[sid]), []).append(sid)
    for label, members in by_class.items():
        if len(members) < k:
            raise ConfigurationError(f"class {label} has {len(members)} subjects, fewer than k={k}")
    test_sets: list[list[str]] = [[] for _ in range(k)]
    offset = 0
    for label in sorted(by_class):
        members = by_class[label]
        order = rng.child(label).permutation(len(members))
        for j, idx in enumerate(order):
            # continue the deal where the previous class stopped to balance fold sizes
            test_sets[(offset + j) % k].append(members[idx])
        offset += len(members)
    folds = []
    for i in range(k):
        test = sorted(test_sets[i])
        test_set = set(test)
        val: list[str] = []
        train: list[str] = []
        vrng = rng.child(1000 + i)
        for label in sorted(by_class):
            rest = [s for s in by_class[label] if s not in test_set]
            n_val = max(1, int(round(val_fraction * len(rest)))) if len(rest) > 1 else 0
            perm = vrng.permutation(len(rest))
            val.extend(rest[j] for j in perm[:n_val])
            train.extend(rest[j] for j in perm[n_val:])
        folds.append(Fold(sorted(train), sorted(val), test))
    return FoldPlan(folds, seed)


# --- voting and metrics ----------------------------------------------------------------

def majority_vote(crop_probs) -> tuple[int, float]:
    """Subject label from crop argmax votes; score = mean positive-class probability.

    A tied vote goes to the class favoured by the mean positive probability
    (>= 0.5 -> positive).
    """
    probs = np.asarray(crop_probs, dtype=np.float64).reshape(-1, 2)
    if probs.shape[0] == 0:
        raise ValueError("no crop predictions")
    votes = np.argmax(probs, axis=1)
    pos = int(votes.sum())
    neg = votes.size - pos
    score = float(probs[:, 1].mean())
    if pos != neg:
        return int(pos > neg), score
    return int(score >= 0.5), score


@dataclass
class Confusion:
    acc: float
    sen: float
    spe: float
    f1: float
    tp: int
    tn: int
    fp: int
    fn: int
    undefined: tuple[str, ...] = ()


def confusion_metrics(predicted, truth) -> Confusion:
    pred = np.asarray(predicted, dtype=int)
    true = np.asarray(truth, dtype=int)
    if pred.size == 0 or pred.shape != true.shape:
        raise ValueError("predictions and labels must be non-empty and equal length")
    tp = int(np.sum((pred == 1) & (true == 1)))
    tn = int(np.sum((pred == 0) & (true == 0)))
    fp = int(np.sum((pred == 1) & (true == 0)))
    fn = int(np.sum((pred == 0) & (true == 1)))
    undefined = []

    def ratio(num, den, name):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    sen = ratio(tp, tp + fn, "sen")
    spe = ratio(tn, tn + fp, "spe")
    prec = ratio(tp, tp + fp, "precision")
    f1 = ratio(2 * prec * sen, prec + sen, "f1")
    return Confusion((tp + tn) / pred.size, sen, spe, f1, tp, tn, fp, fn, tuple(undefined))


def mann_whitney_auc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), over all positive/negative pairs."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    pos, neg = s[y == 1], s[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise ConfigurationError("AUC needs both classes")
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((greater + 0.5 * ties) / (pos.size * neg.size))


def roc_curve(scores, labels) -> list[tuple[float, float, float]]:
    """(fpr, tpr, threshold) from (0, 0, +inf) to (1, 1, min score); predict positive if score >= threshold."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ConfigurationError("ROC needs both classes")
    points = [(0.0, 0.0, float("inf"))]
    for thr in np.unique(s)[::-1]:
        above = s >= thr
        tpr = np.sum(above & (y == 1)) / n_pos
        fpr = np.sum(above & (y == 0)) / n_neg
        points.append((float(fpr), float(tpr), float(thr)))
    return points


def trapezoid_auc(points) -> float:
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


def roc_auc(scores, labels) -> tuple[float, list[tuple[float, float, float]]]:
    """Rank-based AUC (exact under monotone score transforms) and the ROC points."""
    auc = mann_whitney_auc(scores, labels)
    points = roc_curve(scores, labels)
    trap = trapezoid_auc(points)
    if abs(trap - auc) > 1e-12:
        raise AssertionError(f"trapezoidal AUC {trap!r} disagrees with Mann-Whitney {auc!r}")
    return auc, points


# --- protocol ----------------------------------------------------------------------------

@dataclass
class MetricsReport:
    method: str
    per_fold: list[dict]
    mean: dict
    std: dict
    roc: list[tuple[float, float, float]]  # pooled over all test subjects
    predictions: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"method": self.method, "per_fold": self.per_fold, "mean": self.mean,
                "std": self.std, "roc": [list(p) for p in self.roc],
                "predictions": self.predictions}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1)


def fold_metrics(pred_labels, scores, truth) -> dict:
    conf = confusion_metrics(pred_labels, truth)
    out = {"acc": conf.acc, "sen": conf.sen, "spe": conf.spe, "f1": conf.f1,
           "n": len(truth), "undefined": list(conf.undefined)}
    if len(set(int(t) for t in truth)) == 2:
        out["auc"], _ = roc_auc(scores, truth)
    else:
        out["auc"] = float("nan")
        out["undefined"].append("auc")
    return out


def run_protocol(dataset: list[SubjectRecord], method, plan: FoldPlan, seed: int = 0,
                 on_fold=None) -> MetricsReport:
    """Fit ``method`` per fold on train/val subjects, score the test subjects, aggregate.

    ``method`` provides ``name``, ``fit(train, val, seed)`` and
    ``predict(subjects) -> list[(label, score)]``.
    """
    by_id = {s.subject_id: s for s in dataset}
    per_fold = []
    all_scores, all_truth, preds = [], [], []
    for i, fold in enumerate(plan.folds):
        train = [by_id[s] for s in fold.train]
        val = [by_id[s] for s in fold.val]
        test = [by_id[s] for s in fold.test]
        method.fit(train, val, seed=seed * 1000 + i)
        out = method.predict(test)
        labels = [lab for lab, _ in out]
        scores = [sc for _, sc in out]
        truth = [s.label for s in test]
        m = fold_metrics(labels, scores, truth)
        m["fold"] = i
        per_fold.append(m)
        all_scores.extend(scores)
        all_truth.extend(truth)
        preds.extend({"fold": i, "subject": s.subject_id, "label": int(lab), "score": float(sc),
                      "truth": int(s.label)} for s, (lab, sc) in zip(test, out))
        if on_fold is not None:
            on_fold(i, m)
    mean = {k: float(np.mean([f[k] for f in per_fold])) for k in METRIC_NAMES}
    std = {k: float(np.std([f[k] for f in per_fold])) for k in METRIC_NAMES}
    _, roc = roc_auc(all_scores, all_truth)
    return MetricsReport(method.name, per_fold, mean, std, roc, preds)
