"""SGD training with weighted cross-entropy, per-update learning-rate decay, L1 and early stopping."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .numerics import Rng
from .recurrent_nets import (
    ModelConfig,
    ModelParams,
    copy_params,
    init_params,
    is_bias,
    model_backward,
    model_forward,
    named_arrays,
)

PROB_FLOOR = 1e-12


class NonFiniteGradientError(FloatingPointError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.001
    decay_rate: float = 1e-6
    batch_size: int = 32
    max_epochs: int = 200
    patience_epochs: int = 20
    l1_coeff: float = 0.0005
    dropout_rate: float = 0.5
    class_weights: tuple[float, ...] | None = None  # None: inverse class frequency of the train split
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience_epochs < 1:
            raise ConfigurationError("lr0, batch_size, max_epochs and patience_epochs must be positive")
        if self.decay_rate < 0 or self.l1_coeff < 0:
            raise ConfigurationError("decay_rate and l1_coeff must be nonnegative")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")
        if self.class_weights is not None and any(w <= 0 for w in self.class_weights):
            raise ConfigurationError("class weights must be positive")


@dataclass
class TrainReport:
    epochs_run: int
    train_losses: list[float]
    val_losses: list[float]
    lrs: list[float]
    stop_reason: str  # "patience" | "max_epochs"
    best_epoch: int  # 1-based
    best_val_loss: float
    class_weights: list[float]
    updates: int = 0
    log: list[dict] = field(default_factory=list, repr=False)


def weighted_cross_entropy(probs, label: int, weights) -> float:
    p = max(float(np.asarray(probs)[label]), PROB_FLOOR)
    return -float(weights[label]) * np.log(p)


def batch_loss_and_grad(probs: np.ndarray, labels: np.ndarray, weights: np.ndarray):
    """Mean weighted CE over a batch and its gradient w.r.t. the logits."""
    n = labels.shape[0]
    w = weights[labels]
    picked = np.maximum(probs[np.arange(n), labels], PROB_FLOOR)
    loss = float(np.mean(-w * np.log(picked)))
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits *= (w / n)[:, None]
    return loss, dlogits


def lr_schedule(lr_prev: float, decay_rate: float, update_index: int) -> float:
    """lr_t = lr_{t-1} / (1 + decay_rate * t), t counting parameter updates from 1."""
    if update_index < 1:
        raise ValueError("update_index starts at 1")
    return lr_prev / (1.0 + decay_rate * update_index)


def sgd_step(params: ModelParams, grads: ModelParams, lr: float, l1_coeff: float) -> ModelParams:
    """In-place theta -= lr * (g + l1 * sign(theta)); biases are not L1-penalized."""
    pairs = list(zip(named_arrays(params), named_arrays(grads)))
    for (name, theta), (_, g) in pairs:
        if theta.shape != g.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {theta.shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise NonFiniteGradientError(f"{name}: {bad} non-finite gradient entries at lr={lr:g}")
    for (name, theta), (_, g) in pairs:
        if l1_coeff > 0 and not is_bias(name):
            theta -= lr * (g + l1_coeff * np.sign(theta))
        else:
            theta -= lr * g
    params.version += 1
    return params


def default_class_weights(labels, num_classes: int = 2) -> np.ndarray:
    """n_total / (n_classes * n_class_k)."""
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=num_classes).astype(float)
    if np.any(counts == 0):
        raise ConfigurationError("every class must be present in the training split")
    return counts.sum() / (num_classes * counts)


class EarlyStopping:
    """Tracks the best validation loss; signals a stop after `patience` epochs without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
        return epoch - self.best_epoch >= self.patience


def stack_samples(samples) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.data for s in samples]).astype(np.float64, copy=False)
    y = np.asarray([s.label for s in samples], dtype=int)
    return x, y


def predict_proba(params: ModelParams, x: np.ndarray, batch: int = 256) -> np.ndarray:
    out = []
    for start in range(0, x.shape[0], batch):
        probs, _ = model_forward(x[start:start + batch], params)
        out.append(probs)
    return np.concatenate(out) if out else np.zeros((0, params.config.num_classes))


def dataset_loss(params: ModelParams, x: np.ndarray, y: np.ndarray, weights: np.ndarray) -> float:
    probs = predict_proba(params, x)
    loss, _ = batch_loss_and_grad(probs, y, weights)
    return loss


def train(model_config: ModelConfig, train_samples, val_samples, cfg: TrainConfig,
          log_fn=None) -> tuple[TrainReport, ModelParams]:
    """Fit a model; returns the report and the minimum-validation-loss parameters.

    ``train_samples``/``val_samples`` are objects with ``data`` (T x D),
    ``label`` and ``subject_id``; the two splits must not share subjects.
    """
    if not train_samples or not val_samples:
        raise ConfigurationError("train and validation splits must be non-empty")
    shared = {s.subject_id for s in train_samples} & {s.subject_id for s in val_samples}
    if shared:
        raise ConfigurationError(f"subjects in both train and validation: {sorted(shared)[:5]}")
    x_tr, y_tr = stack_samples(train_samples)
    x_va, y_va = stack_samples(val_samples)
    if cfg.class_weights is None:
        weights = default_class_weights(y_tr, model_config.num_classes)
    else:
        weights = np.asarray(cfg.class_weights, dtype=np.float64)

    rng = Rng(cfg.seed)
    params = init_params(model_config, rng.child(0))
    shuffle_rng = rng.child(1)
    dropout_rng = rng.child(2)
    keep = 1.0 - cfg.dropout_rate
    width = model_config.head_width

    stopper = EarlyStopping(cfg.patience_epochs)
    best = copy_params(params)
    lr = cfg.lr0
    updates = 0
    train_losses, val_losses, lrs, log = [], [], [], []
    stop_reason = "max_epochs"
    n = x_tr.shape[0]
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            mask = None
            if cfg.dropout_rate > 0:
                mask = (dropout_rng.uniform(size=(idx.size, width)) < keep) / keep
            probs, cache = model_forward(x_tr[idx], params, mask, training=True)
            loss, dlogits = batch_loss_and_grad(probs, y_tr[idx], weights)
            grads = model_backward(cache, dlogits, params)
            updates += 1
            lr = lr_schedule(lr, cfg.decay_rate, updates)
            sgd_step(params, grads, lr, cfg.l1_coeff)
            total += loss * idx.size
        train_loss = total / n
        val_loss = dataset_loss(params, x_va, y_va, weights)
        train_losses.append(train_loss)
        val_losses.append(val_loss)
        lrs.append(lr)
        entry = {"epoch": epoch, "lr": lr, "train_loss": train_loss, "val_loss": val_loss}
        log.append(entry)
        if log_fn is not None:
            log_fn(entry)
        if val_loss < stopper.best_loss:
            best = copy_params(params)
        if stopper.update(epoch, val_loss):
            stop_reason = "patience"
            break
    report = TrainReport(
        epochs_run=len(val_losses), train_losses=train_losses, val_losses=val_losses, lrs=lrs,
        stop_reason=stop_reason, best_epoch=stopper.best_epoch, best_val_loss=stopper.best_loss,
        class_weights=weights.tolist(), updates=updates, log=log,
    )
    return report, best


def format_log_line(entry: dict) -> str:
    return json.dumps(entry, sort_keys=True)


def config_echo(cfg: TrainConfig) -> dict:
    out = asdict(cfg)
    out["class_weights"] = None if cfg.class_weights is None else list(cfg.class_weights)
    return out
