"""Classifiers wrapped for :func:`deepchron.evaluation.run_protocol`.

Every method exposes ``name``, ``fit(train, val, seed)`` and
``predict(subjects) -> [(label, score)]``. Deep models vote over crops; the
baselines score each un-augmented scan and average the scores per subject.
"""

from __future__ import annotations

import numpy as np

from . import baselines as bl
from .chronnectome import static_fc
from .evaluation import SubjectRecord, augment, majority_vote
from .numerics import Rng
from .recurrent_nets import ModelConfig
from .training import TrainConfig, predict_proba
from .training import train as train_model

# Table row order, top to bottom
METHOD_ORDER = ("sfc-svm", "dfc-variability", "dfc-status", "full-lstm",
                "stacked-full-bilstm", "bilstm-last", "full-bilstm")
LSTM_METHODS = ("full-lstm", "stacked-full-bilstm", "bilstm-last", "full-bilstm")


def display_name(method: str, hidden: int = 32) -> str:
    return {
        "sfc-svm": "Static FC + SVM",
        "dfc-variability": "dFC-variability",
        "dfc-status": "dFC-status",
        "full-lstm": f"Full-LSTM{hidden}",
        "stacked-full-bilstm": f"Full-BiLSTM{hidden}-Stack",
        "bilstm-last": f"BiLSTM{hidden}-Last",
        "full-bilstm": f"Full-BiLSTM{hidden}",
    }.get(method, method)


class LstmMethod:
    def __init__(self, variant: str, train_cfg: TrainConfig = TrainConfig(), hidden_dim: int = 32,
                 crop_len: int = 30, crop_stride: int = 1, log_fn=None):
        self.name = variant
        self.variant = variant
        self.train_cfg = train_cfg
        self.hidden_dim = hidden_dim
        self.crop_len = crop_len
        self.crop_stride = crop_stride
        self.log_fn = log_fn
        self.params = None
        self.report = None

    def _samples(self, subjects: list[SubjectRecord]):
        out = []
        for s in subjects:
            for dfc in s.dfcs:
                out.extend(augment(dfc, s.label, self.crop_len, self.crop_stride))
        return out

    def fit(self, train, val, seed: int = 0):
        tr = self._samples(train)
        va = self._samples(val)
        cfg = ModelConfig(input_dim=tr[0].data.shape[1], variant=self.variant,
                          hidden_dim=self.hidden_dim, seq_len=self.crop_len,
                          dropout_rate=self.train_cfg.dropout_rate,
                          l1_coeff=self.train_cfg.l1_coeff)
        tcfg = TrainConfig(**{**self.train_cfg.__dict__, "seed": self.train_cfg.seed * 7919 + seed})
        self.report, self.params = train_model(cfg, tr, va, tcfg, log_fn=self.log_fn)
        return self

    def predict(self, subjects):
        out = []
        for s in subjects:
            crops = np.stack([c.data for dfc in s.dfcs
                              for c in augment(dfc, s.label, self.crop_len, self.crop_stride)])
            out.append(majority_vote(predict_proba(self.params, crops)))
        return out


class _SvmOnFeatures:
    """Shared plumbing: scan features -> (selection) -> z-score -> linear SVM."""

    l2_coeff = 0.01
    epochs = 2000

    def scan_features(self, subject: SubjectRecord) -> list[np.ndarray]:
        raise NotImplementedError

    def prepare(self, train, seed):
        pass

    def fit(self, train, val, seed: int = 0):
        # baselines have no early stopping, so validation subjects join the training set
        subjects = list(train) + list(val)
        self.prepare(subjects, seed)
        feats, labels = [], []
        for s in subjects:
            for f in self.scan_features(s):
                feats.append(f)
                labels.append(s.label)
        x = np.asarray(feats)
        y = np.asarray(labels)
        self.selected = self.select(x, y)
        x = x[:, self.selected]
        self.scaler = bl.Standardizer.fit(x)
        self.svm = bl.svm_train(self.scaler.transform(x), np.where(y == 1, 1.0, -1.0),
                                self.l2_coeff, self.epochs, seed)
        return self

    def select(self, x, y):
        return np.arange(x.shape[1])

    def predict(self, subjects):
        out = []
        for s in subjects:
            x = np.asarray(self.scan_features(s))[:, self.selected]
            score = float(np.mean(self.svm.decision(self.scaler.transform(x))))
            out.append((int(score >= 0.0), score))
        return out


class StaticFcSvm(_SvmOnFeatures):
    name = "sfc-svm"

    def scan_features(self, subject):
        if not subject.scans:
            raise ValueError(f"{subject.subject_id}: static FC needs the raw scan signals")
        return [static_fc(ts) for ts in subject.scans]


class StatusSvm(_SvmOnFeatures):
    name = "dfc-status"

    def __init__(self, k: int = 5):
        self.k = k

    def prepare(self, train, seed):
        rows = np.concatenate([d.rows for s in train for d in s.dfcs])
        self.status_model = bl.kmeans_fit(rows, self.k, seed)

    def scan_features(self, subject):
        return [bl.status_features(d, self.status_model) for d in subject.dfcs]


class VariabilitySvm(_SvmOnFeatures):
    name = "dfc-variability"

    def __init__(self, alpha: float = 0.05):
        self.alpha = alpha

    def scan_features(self, subject):
        return [bl.variability_features(d) for d in subject.dfcs]

    def select(self, x, y):
        return bl.select_by_ttest(x, y, self.alpha)


class OracleMethod:
    """Returns the true labels; a harness sanity check."""

    name = "oracle"

    def fit(self, train, val, seed: int = 0):
        return self

    def predict(self, subjects):
        return [(s.label, float(s.label)) for s in subjects]


class CoinFlipMethod:
    """Uniformly random scores; the chance-level reference."""

    name = "coin-flip"

    def __init__(self, seed: int = 0):
        self.rng = Rng(seed)

    def fit(self, train, val, seed: int = 0):
        return self

    def predict(self, subjects):
        scores = self.rng.uniform(size=len(subjects))
        return [(int(sc >= 0.5), float(sc)) for sc in scores]


def build_method(name: str, train_cfg: TrainConfig = TrainConfig(), hidden_dim: int = 32,
                 k_status: int = 5, log_fn=None):
    if name in LSTM_METHODS:
        return LstmMethod(name, train_cfg, hidden_dim, log_fn=log_fn)
    if name == "sfc-svm":
        return StaticFcSvm()
    if name == "dfc-status":
        return StatusSvm(k_status)
    if name == "dfc-variability":
        return VariabilitySvm()
    if name == "oracle":
        return OracleMethod()
    raise ValueError(f"unknown method {name!r}")
