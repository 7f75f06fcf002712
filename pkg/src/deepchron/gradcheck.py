"""Central finite-difference verification of the hand-written BPTT gradients."""

from __future__ import annotations

import zlib

import numpy as np

from .numerics import Rng
from .recurrent_nets import ModelConfig, init_params, model_backward, model_forward, named_arrays
from .training import batch_loss_and_grad

# Entries whose true gradient is below this magnitude are compared on an
# absolute scale; finite differences cannot resolve them relatively.
GRAD_FLOOR = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = GRAD_FLOOR) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradcheck(variant: str, hidden: int = 8, input_dim: int = 12, seq_len: int = 5,
              batch: int = 3, seed: int = 0, eps: float = 1e-5, corrupt: bool = False) -> dict:
    """Max relative error per parameter tensor for one random instance.

    The loss is the batch-mean weighted cross-entropy with a fixed dropout
    mask, so the head's dropout path is exercised too. ``corrupt`` perturbs
    one analytic entry (negative control).
    """
    cfg = ModelConfig(input_dim=input_dim, variant=variant, hidden_dim=hidden, seq_len=seq_len)
    rng = Rng(seed)
    params = init_params(cfg, rng.child(0))
    # push biases off their init values so every bias gradient path is generic
    for name, arr in named_arrays(params):
        arr += rng.child(zlib.crc32(name.encode()) % 10_000).normal(scale=0.1, size=arr.shape)
    data = rng.child(1)
    x = data.normal(size=(batch, seq_len, input_dim))
    labels = data.integers(0, 2, size=batch)
    weights = np.array([1.3, 0.7])
    mask = (data.uniform(size=(batch, cfg.head_width)) < 0.5) / 0.5

    def loss() -> float:
        probs, _ = model_forward(x, params, mask, training=True)
        return batch_loss_and_grad(probs, labels, weights)[0]

    probs, cache = model_forward(x, params, mask, training=True)
    _, dlogits = batch_loss_and_grad(probs, labels, weights)
    grads = model_backward(cache, dlogits, params)
    if corrupt:
        g = named_arrays(grads)[0][1]
        g.flat[0] += 0.01 + 0.1 * abs(g.flat[0])

    report = {}
    for (name, theta), (_, g) in zip(named_arrays(params), named_arrays(grads)):
        numeric = np.zeros_like(theta)
        for idx in np.ndindex(theta.shape):
            old = theta[idx]
            theta[idx] = old + eps
            up = loss()
            theta[idx] = old - eps
            down = loss()
            theta[idx] = old
            numeric[idx] = (up - down) / (2 * eps)
        report[name] = relative_error(g, numeric)
    return report
