"""From-scratch LSTM / BiLSTM classifiers with hand-written backpropagation through time.

Shapes: inputs are ``(batch, T, D)`` (a single ``(T, D)`` sequence is accepted
and promoted to a batch of one). All arithmetic is float64.

Four architectures share one head (dense layer + 2-way softmax):

* ``full-bilstm``: every BiLSTM output y_1..y_T is concatenated into the head.
* ``full-lstm``: same, with a uni-directional LSTM (its hidden states feed the head).
* ``bilstm-last``: only y_T feeds the head.
* ``stacked-full-bilstm``: two BiLSTM layers, the second reading the first's outputs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.special import expit

from .numerics import Rng, ShapeError, softmax

VARIANTS = ("full-bilstm", "full-lstm", "bilstm-last", "stacked-full-bilstm")
GATES = ("i", "f", "o", "c")


class ContractViolation(RuntimeError):
    """An API precondition that is not a plain shape problem was broken."""


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    variant: str = "full-bilstm"
    hidden_dim: int = 32
    seq_len: int = 30
    num_classes: int = 2
    dropout_rate: float = 0.5
    l1_coeff: float = 0.0005

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.input_dim < 1 or self.hidden_dim < 1 or self.seq_len < 1:
            raise ValueError("input_dim, hidden_dim and seq_len must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.l1_coeff < 0:
            raise ValueError("l1_coeff must be nonnegative")

    @property
    def bidirectional(self) -> bool:
        return self.variant != "full-lstm"

    @property
    def num_layers(self) -> int:
        return 2 if self.variant == "stacked-full-bilstm" else 1

    @property
    def head_width(self) -> int:
        if self.variant == "bilstm-last":
            return self.hidden_dim
        return self.seq_len * self.hidden_dim


@dataclass
class LstmParams:
    W_xi: np.ndarray
    W_hi: np.ndarray
    W_xf: np.ndarray
    W_hf: np.ndarray
    W_xo: np.ndarray
    W_ho: np.ndarray
    W_xc: np.ndarray
    W_hc: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.W_xi.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W_xi.shape[0]

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Gate blocks stacked in (i, f, o, c) order: (4H x D, 4H x H, 4H)."""
        wx = np.concatenate([self.W_xi, self.W_xf, self.W_xo, self.W_xc])
        wh = np.concatenate([self.W_hi, self.W_hf, self.W_ho, self.W_hc])
        b = np.concatenate([self.b_i, self.b_f, self.b_o, self.b_c])
        return wx, wh, b

    @classmethod
    def from_stacked(cls, wx, wh, b) -> "LstmParams":
        h = wx.shape[0] // 4
        parts = {}
        for k, g in enumerate(GATES):
            sl = slice(k * h, (k + 1) * h)
            parts[f"W_x{g}"] = wx[sl]
            parts[f"W_h{g}"] = wh[sl]
            parts[f"b_{g}"] = b[sl]
        return cls(**parts)

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmParams":
        h, d = hidden_dim, input_dim
        return cls.from_stacked(np.zeros((4 * h, d)), np.zeros((4 * h, h)), np.zeros(4 * h))


@dataclass
class BiLstmParams:
    forward: LstmParams
    backward: LstmParams
    W_fy: np.ndarray
    W_by: np.ndarray
    b_y: np.ndarray

    @property
    def output_dim(self) -> int:
        return self.W_fy.shape[0]


@dataclass
class HeadParams:
    W_dense: np.ndarray
    b_dense: np.ndarray


@dataclass
class ModelParams:
    config: ModelConfig
    layers: list  # [LstmParams] for full-lstm, else BiLstmParams per layer
    head: HeadParams
    # bumped by every in-place update so stale forward caches can be detected
    version: int = field(default=0, compare=False)


def named_arrays(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    """Every parameter tensor with a stable dotted name, in a fixed order."""
    out = []

    def lstm(prefix, p):
        for f in fields(LstmParams):
            out.append((f"{prefix}.{f.name}", getattr(p, f.name)))

    for li, layer in enumerate(params.layers):
        if isinstance(layer, LstmParams):
            lstm(f"layer{li}", layer)
        else:
            lstm(f"layer{li}.forward", layer.forward)
            lstm(f"layer{li}.backward", layer.backward)
            out.append((f"layer{li}.W_fy", layer.W_fy))
            out.append((f"layer{li}.W_by", layer.W_by))
            out.append((f"layer{li}.b_y", layer.b_y))
    out.append(("head.W_dense", params.head.W_dense))
    out.append(("head.b_dense", params.head.b_dense))
    return out


def is_bias(name: str) -> bool:
    return name.rsplit(".", 1)[-1].startswith("b_")


# --- single LSTM ------------------------------------------------------------

def lstm_step(x_t, h_prev, c_prev, p: LstmParams):
    """One LSTM cell update; returns (h_t, c_t)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape[-1] != p.input_dim or np.shape(h_prev)[-1] != p.hidden_dim:
        raise ShapeError("lstm_step input or state width does not match params")
    i = expit(x_t @ p.W_xi.T + h_prev @ p.W_hi.T + p.b_i)
    f = expit(x_t @ p.W_xf.T + h_prev @ p.W_hf.T + p.b_f)
    o = expit(x_t @ p.W_xo.T + h_prev @ p.W_ho.T + p.b_o)
    g = np.tanh(x_t @ p.W_xc.T + h_prev @ p.W_hc.T + p.b_c)
    c_t = i * g + f * c_prev
    h_t = o * np.tanh(c_t)
    return h_t, c_t


def _as_batch(seq) -> tuple[np.ndarray, bool]:
    x = np.asarray(seq, dtype=np.float64)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ShapeError(f"expected (T, D) or (B, T, D) input, got shape {x.shape}")
    return x, False


def _lstm_fwd(x: np.ndarray, p: LstmParams):
    b_sz, t_len, d = x.shape
    if d != p.input_dim:
        raise ShapeError(f"input width {d} != LSTM input_dim {p.input_dim}")
    if t_len < 1:
        raise ShapeError("sequence must have at least one step")
    h_dim = p.hidden_dim
    s3 = 3 * h_dim
    wx, wh, b = p.stacked()
    # time-major buffers keep every per-step slice contiguous
    xt = np.ascontiguousarray(x.transpose(1, 0, 2))
    zx = (xt.reshape(-1, d) @ wx.T + b).reshape(t_len, b_sz, 4 * h_dim)
    acts = np.empty((t_len, b_sz, 4 * h_dim))
    cs = np.empty((t_len, b_sz, h_dim))
    tcs = np.empty_like(cs)
    hs = np.empty_like(cs)
    h = np.zeros((b_sz, h_dim))
    c = np.zeros((b_sz, h_dim))
    wh_t = np.ascontiguousarray(wh.T)
    for t in range(t_len):
        z = zx[t] + h @ wh_t
        a = acts[t]
        sig = a[:, :s3]
        # sigmoid via tanh: stable and several times faster than expit here
        np.multiply(z[:, :s3], 0.5, out=sig)
        np.tanh(sig, out=sig)
        sig *= 0.5
        sig += 0.5
        np.tanh(z[:, s3:], out=a[:, s3:])
        c = a[:, :h_dim] * a[:, s3:] + a[:, h_dim:2 * h_dim] * c
        tc = np.tanh(c)
        h = a[:, 2 * h_dim:s3] * tc
        cs[t] = c
        tcs[t] = tc
        hs[t] = h
    cache = {"xt": xt, "acts": acts, "cs": cs, "tcs": tcs, "hs": hs, "wx": wx, "wh": wh}
    return hs.transpose(1, 0, 2), cache


def _lstm_bwd(dhs: np.ndarray, cache) -> tuple[np.ndarray, LstmParams]:
    """Backprop through one LSTM; ``dhs`` is (B, T, H). Returns (dx, param grads)."""
    xt, acts, cs, tcs, hs = cache["xt"], cache["acts"], cache["cs"], cache["tcs"], cache["hs"]
    wx, wh = cache["wx"], cache["wh"]
    t_len, b_sz, h_dim = hs.shape
    s3 = 3 * h_dim
    dhs = np.ascontiguousarray(np.asarray(dhs).transpose(1, 0, 2))
    # local derivative of each gate's nonlinearity w.r.t. its pre-activation
    dact = np.empty_like(acts)
    dact[..., :s3] = acts[..., :s3] * (1.0 - acts[..., :s3])
    dact[..., s3:] = 1.0 - acts[..., s3:] ** 2
    dzs = np.empty_like(acts)
    dh_next = np.zeros((b_sz, h_dim))
    dc_next = np.zeros((b_sz, h_dim))
    zero = np.zeros((b_sz, h_dim))
    for t in range(t_len - 1, -1, -1):
        a = acts[t]
        i, f, o, g = a[:, :h_dim], a[:, h_dim:2 * h_dim], a[:, 2 * h_dim:s3], a[:, s3:]
        tc = tcs[t]
        c_prev = cs[t - 1] if t > 0 else zero
        dh = dhs[t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = dzs[t]
        np.multiply(dc, g, out=dz[:, :h_dim])
        np.multiply(dc, c_prev, out=dz[:, h_dim:2 * h_dim])
        np.multiply(dh, tc, out=dz[:, 2 * h_dim:s3])
        np.multiply(dc, i, out=dz[:, s3:])
        dz *= dact[t]
        dh_next = dz @ wh
        dc_next = dc * f
    flat_dz = dzs.reshape(-1, 4 * h_dim)
    h_prev = np.concatenate([np.zeros((1, b_sz, h_dim)), hs[:-1]], axis=0)
    dwx = flat_dz.T @ xt.reshape(-1, xt.shape[2])
    dwh = flat_dz.T @ h_prev.reshape(-1, h_dim)
    db = flat_dz.sum(axis=0)
    dx = (flat_dz @ wx).reshape(t_len, b_sz, -1).transpose(1, 0, 2)
    return dx, LstmParams.from_stacked(dwx, dwh, db)


def lstm_forward(seq, p: LstmParams) -> np.ndarray:
    """Hidden sequence of a zero-initialized LSTM; (T, H) or (B, T, H)."""
    x, single = _as_batch(seq)
    hs, _ = _lstm_fwd(x, p)
    return hs[0] if single else hs


# --- bidirectional layer ------------------------------------------------------

def _bilstm_fwd(x: np.ndarray, p: BiLstmParams):
    hf, cf = _lstm_fwd(x, p.forward)
    hb_rev, cb = _lstm_fwd(x[:, ::-1], p.backward)
    hb = hb_rev[:, ::-1]
    b_sz, t_len, h_dim = hf.shape
    y = (hf.reshape(-1, h_dim) @ p.W_fy.T + hb.reshape(-1, h_dim) @ p.W_by.T + p.b_y)
    y = y.reshape(b_sz, t_len, -1)
    return y, {"hf": hf, "hb": hb, "cf": cf, "cb": cb}


def _bilstm_bwd(dy: np.ndarray, cache, p: BiLstmParams):
    hf, hb = cache["hf"], cache["hb"]
    b_sz, t_len, h_dim = hf.shape
    dy2 = np.ascontiguousarray(dy).reshape(-1, p.output_dim)
    dW_fy = dy2.T @ hf.reshape(-1, h_dim)
    dW_by = dy2.T @ hb.reshape(-1, h_dim)
    db_y = dy2.sum(axis=0)
    dhf = (dy2 @ p.W_fy).reshape(b_sz, t_len, h_dim)
    dhb = (dy2 @ p.W_by).reshape(b_sz, t_len, h_dim)
    dx_f, gf = _lstm_bwd(dhf, cache["cf"])
    dx_b_rev, gb = _lstm_bwd(dhb[:, ::-1], cache["cb"])
    dx = dx_f + dx_b_rev[:, ::-1]
    return dx, BiLstmParams(gf, gb, dW_fy, dW_by, db_y)


def bilstm_forward(seq, p: BiLstmParams) -> np.ndarray:
    """Per-step outputs y_t = W_fy fwd_h_t + W_by bwd_h_t + b_y (affine, no squashing)."""
    x, single = _as_batch(seq)
    y, _ = _bilstm_fwd(x, p)
    return y[0] if single else y


# --- full model -----------------------------------------------------------------

def model_forward(sample, params: ModelParams, dropout_mask=None, training: bool = False):
    """Class probabilities and a cache for :func:`model_backward`.

    ``dropout_mask`` multiplies the head input (already scaled by 1/(1-rate));
    it may only be passed with ``training=True``.
    """
    cfg = params.config
    if dropout_mask is not None and not training:
        raise ContractViolation("dropout mask given in inference mode")
    x, single = _as_batch(sample)
    if x.shape[1] != cfg.seq_len and cfg.variant != "bilstm-last":
        raise ShapeError(f"sequence length {x.shape[1]} != configured seq_len {cfg.seq_len}")
    layer_caches = []
    h = x
    for layer in params.layers:
        if isinstance(layer, LstmParams):
            h, c = _lstm_fwd(h, layer)
        else:
            h, c = _bilstm_fwd(h, layer)
        layer_caches.append(c)
    b_sz = x.shape[0]
    feat = h[:, -1] if cfg.variant == "bilstm-last" else h.reshape(b_sz, -1)
    if dropout_mask is not None:
        mask = np.asarray(dropout_mask, dtype=np.float64).reshape(feat.shape)
        feat_d = feat * mask
    else:
        mask = None
        feat_d = feat
    logits = feat_d @ params.head.W_dense.T + params.head.b_dense
    probs = softmax(logits)
    cache = {
        "params_id": id(params),
        "version": params.version,
        "seq_shape": h.shape,
        "layers": layer_caches,
        "mask": mask,
        "feat_d": feat_d,
        "logits": logits,
        "single": single,
    }
    return (probs[0] if single else probs), cache


def model_backward(cache, dlogits, params: ModelParams) -> ModelParams:
    """Gradients of every parameter given d(loss)/d(logits).

    ``params`` must be the very object (and version) used in the forward call.
    The L1 penalty is not included here.
    """
    if cache["params_id"] != id(params) or cache["version"] != params.version:
        raise ContractViolation("cache does not belong to the current parameters")
    cfg = params.config
    dlogits = np.asarray(dlogits, dtype=np.float64).reshape(cache["logits"].shape)
    head = HeadParams(dlogits.T @ cache["feat_d"], dlogits.sum(axis=0))
    dfeat = dlogits @ params.head.W_dense
    if cache["mask"] is not None:
        dfeat = dfeat * cache["mask"]
    b_sz, t_len, o_dim = cache["seq_shape"]
    if cfg.variant == "bilstm-last":
        dh = np.zeros((b_sz, t_len, o_dim))
        dh[:, -1] = dfeat
    else:
        dh = dfeat.reshape(b_sz, t_len, o_dim)
    grads = [None] * len(params.layers)
    for li in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[li]
        if isinstance(layer, LstmParams):
            dh, grads[li] = _lstm_bwd(dh, cache["layers"][li])
        else:
            dh, grads[li] = _bilstm_bwd(dh, cache["layers"][li], layer)
    return ModelParams(cfg, grads, head)


# --- initialization & checkpoints ---------------------------------------------

def _glorot(rng: Rng, rows: int, cols: int) -> np.ndarray:
    a = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-a, a, size=(rows, cols))


def _init_lstm(rng: Rng, d: int, h: int) -> LstmParams:
    kw = {}
    for g in GATES:
        kw[f"W_x{g}"] = _glorot(rng, h, d)
        kw[f"W_h{g}"] = _glorot(rng, h, h)
    for g in GATES:
        kw[f"b_{g}"] = np.ones(h) if g == "f" else np.zeros(h)
    return LstmParams(**kw)


def init_params(config: ModelConfig, rng: Rng) -> ModelParams:
    """Glorot-uniform weights; zero biases except the forget gate bias (1.0)."""
    h = config.hidden_dim
    layers = []
    d = config.input_dim
    for _ in range(config.num_layers):
        if config.bidirectional:
            layers.append(BiLstmParams(
                _init_lstm(rng, d, h), _init_lstm(rng, d, h),
                _glorot(rng, h, h), _glorot(rng, h, h), np.zeros(h),
            ))
        else:
            layers.append(_init_lstm(rng, d, h))
        d = h
    head = HeadParams(_glorot(rng, config.num_classes, config.head_width), np.zeros(config.num_classes))
    return ModelParams(config, layers, head)


def zeros_like(params: ModelParams) -> ModelParams:
    out = init_params(params.config, Rng(0))
    for _, arr in named_arrays(out):
        arr[...] = 0.0
    return out


def copy_params(params: ModelParams) -> ModelParams:
    out = zeros_like(params)
    for (_, dst), (_, src) in zip(named_arrays(out), named_arrays(params)):
        dst[...] = src
    return out


def params_to_json(params: ModelParams) -> dict:
    return {
        "model_config": asdict(params.config),
        "parameters": {
            name: {"shape": list(arr.shape), "values": arr.ravel().tolist()}
            for name, arr in named_arrays(params)
        },
    }


def params_from_json(obj: dict) -> ModelParams:
    config = ModelConfig(**obj["model_config"])
    params = zeros_like(init_params(config, Rng(0)))
    stored = obj["parameters"]
    expected = dict(named_arrays(params))
    if set(stored) != set(expected):
        missing = sorted(set(expected) - set(stored))
        extra = sorted(set(stored) - set(expected))
        raise ShapeError(f"checkpoint tensors mismatch; missing={missing} extra={extra}")
    for name, arr in expected.items():
        entry = stored[name]
        if tuple(entry["shape"]) != arr.shape:
            raise ShapeError(f"{name}: stored shape {entry['shape']} != expected {list(arr.shape)}")
        values = np.asarray(entry["values"], dtype=np.float64)
        if values.size != arr.size:
            raise ShapeError(f"{name}: {values.size} values for shape {list(arr.shape)}")
        arr[...] = values.reshape(arr.shape)
    return params


def save_checkpoint(path, params: ModelParams) -> None:
    Path(path).write_text(json.dumps(params_to_json(params), sort_keys=True))


def load_checkpoint(path) -> ModelParams:
    return params_from_json(json.loads(Path(path).read_text()))
