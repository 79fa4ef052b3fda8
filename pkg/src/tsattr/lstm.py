"""Stacked-LSTM regressor in float64 numpy: forward pass, exact BPTT gradients.

Architecture: two (configurable) LSTM layers consumed column-wise over the
time axis, the last step's hidden state feeding a linear -> batch-norm ->
ReLU -> linear head that emits one scalar. Padded columns are ordinary
inputs, not skipped. All gradients (inputs and parameters) are analytic,
which keeps predictions and attributions bit-reproducible across runs and
thread counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from scipy.special import expit as _sigmoid

from .containers import read_container, write_container
from .errors import FormatError, ShapeError

CKPT_MAGIC = b"TCK1"
BN_EPS = 1e-5


@dataclass
class LstmParams:
    """Named parameter tensors plus the dims needed to interpret them.

    Gate layout along the 4H axis is (input, forget, cell, output).
    ``head.running_mean``/``head.running_var`` are batch-norm state, not
    trainable weights.
    """

    n_bands: int
    hidden_size: int
    n_layers: int
    dropout_rate: float
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    TRAIN_EXCLUDE = ("head.running_mean", "head.running_var")

    def trainable_names(self) -> list[str]:
        return [k for k in self.tensors if k not in self.TRAIN_EXCLUDE]

    def copy(self) -> "LstmParams":
        return LstmParams(
            n_bands=self.n_bands,
            hidden_size=self.hidden_size,
            n_layers=self.n_layers,
            dropout_rate=self.dropout_rate,
            tensors={k: v.copy() for k, v in self.tensors.items()},
        )

    def validate(self) -> None:
        for name, t in self.tensors.items():
            if not np.isfinite(t).all():
                raise ShapeError(f"parameter tensor {name!r} contains non-finite values")
        if (self.tensors["head.running_var"] <= 0).any():
            raise ShapeError("batch-norm running variance must be positive")


def init_params(
    n_bands: int,
    hidden_size: int = 128,
    n_layers: int = 2,
    dropout_rate: float = 0.3,
    seed: int = 0,
) -> LstmParams:
    """Seeded uniform fan-in initialization; forget-gate biases start at 1."""
    rng = np.random.default_rng(seed)
    H = hidden_size
    tensors: dict[str, np.ndarray] = {}

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    for layer in range(n_layers):
        in_dim = n_bands if layer == 0 else H
        tensors[f"lstm{layer}.wx"] = uniform((in_dim, 4 * H), in_dim)
        tensors[f"lstm{layer}.wh"] = uniform((H, 4 * H), H)
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0
        tensors[f"lstm{layer}.b"] = b
    tensors["head.w1"] = uniform((H, H), H)
    tensors["head.b1"] = np.zeros(H)
    tensors["head.gamma"] = np.ones(H)
    tensors["head.beta"] = np.zeros(H)
    tensors["head.running_mean"] = np.zeros(H)
    tensors["head.running_var"] = np.ones(H)
    tensors["head.w2"] = uniform((H, 1), H)
    tensors["head.b2"] = np.zeros(1)
    return LstmParams(
        n_bands=n_bands,
        hidden_size=H,
        n_layers=n_layers,
        dropout_rate=dropout_rate,
        tensors=tensors,
    )


def _check_input(params: LstmParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1] != params.n_bands:
        raise ShapeError(
            f"input shape {x.shape} does not match model with {params.n_bands} bands"
        )
    return x


def _run_layer(wx, wh, b, inputs):
    """One LSTM layer over (N, T, D) inputs; returns gate/state caches."""
    N, T, _ = inputs.shape
    H = wh.shape[0]
    i_s = np.empty((N, T, H)); f_s = np.empty((N, T, H))
    g_s = np.empty((N, T, H)); o_s = np.empty((N, T, H))
    c_s = np.empty((N, T, H)); h_s = np.empty((N, T, H))
    h = np.zeros((N, H)); c = np.zeros((N, H))
    for t in range(T):
        a = inputs[:, t] @ wx + h @ wh + b
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H:2 * H])
        g = np.tanh(a[:, 2 * H:3 * H])
        o = _sigmoid(a[:, 3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        i_s[:, t] = i; f_s[:, t] = f; g_s[:, t] = g; o_s[:, t] = o
        c_s[:, t] = c; h_s[:, t] = h
    return {"i": i_s, "f": f_s, "g": g_s, "o": o_s, "c": c_s, "h": h_s, "inputs": inputs}


def _layer_backward(wx, wh, cache, d_out):
    """BPTT through one layer. d_out is dL/d(layer output sequence), (N,T,H).

    Returns (d_inputs, dwx, dwh, db).
    """
    i_s, f_s, g_s, o_s, c_s = cache["i"], cache["f"], cache["g"], cache["o"], cache["c"]
    inputs = cache["inputs"]
    N, T, H = i_s.shape
    d_inputs = np.empty_like(inputs)
    dwx = np.zeros_like(wx); dwh = np.zeros_like(wh); db = np.zeros(4 * H)
    dh_next = np.zeros((N, H)); dc_next = np.zeros((N, H))
    for t in range(T - 1, -1, -1):
        i, f, g, o, c = i_s[:, t], f_s[:, t], g_s[:, t], o_s[:, t], c_s[:, t]
        tc = np.tanh(c)
        dh = d_out[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da = np.empty((N, 4 * H))
        da[:, :H] = dc * g * i * (1.0 - i)
        c_prev = c_s[:, t - 1] if t > 0 else 0.0
        da[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        da[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        da[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dwx += inputs[:, t].T @ da
        h_prev = cache["h"][:, t - 1] if t > 0 else np.zeros((N, H))
        dwh += h_prev.T @ da
        db += da.sum(axis=0)
        d_inputs[:, t] = da @ wx.T
        dh_next = da @ wh.T
        dc_next = dc * f
    return d_inputs, dwx, dwh, db


def _forward(
    params: LstmParams,
    x: np.ndarray,
    training: bool = False,
    dropout_rng: np.random.Generator | None = None,
):
    """Full forward pass with caches for backprop. x is (N, B, T)."""
    t = params.tensors
    N = x.shape[0]
    seq = np.swapaxes(x, 1, 2)  # (N, T, B)
    layer_caches = []
    dropout_masks = []
    for layer in range(params.n_layers):
        cache = _run_layer(t[f"lstm{layer}.wx"], t[f"lstm{layer}.wh"], t[f"lstm{layer}.b"], seq)
        layer_caches.append(cache)
        seq = cache["h"]
        if training and params.dropout_rate > 0 and layer < params.n_layers - 1:
            keep = 1.0 - params.dropout_rate
            mask = (dropout_rng.random(seq.shape) < keep) / keep
            dropout_masks.append(mask)
            seq = seq * mask
        else:
            dropout_masks.append(None)
    h_last = seq[:, -1]
    a1 = h_last @ t["head.w1"] + t["head.b1"]
    if training:
        mu = a1.mean(axis=0)
        var = a1.var(axis=0)
    else:
        mu = t["head.running_mean"]
        var = t["head.running_var"]
    istd = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (a1 - mu) * istd
    bn = t["head.gamma"] * xhat + t["head.beta"]
    r = np.maximum(bn, 0.0)
    y = (r @ t["head.w2"])[:, 0] + t["head.b2"][0]
    head = {"h_last": h_last, "a1": a1, "xhat": xhat, "istd": istd, "bn": bn, "r": r,
            "mu": mu, "var": var, "training": training}
    return y, layer_caches, dropout_masks, head


def _backward(
    params: LstmParams,
    x: np.ndarray,
    dy: np.ndarray,
    layer_caches,
    dropout_masks,
    head,
    want_param_grads: bool,
):
    """Backprop dy (N,) to inputs and, optionally, parameters."""
    t = params.tensors
    N = x.shape[0]
    grads: dict[str, np.ndarray] = {}
    dr = dy[:, None] * t["head.w2"][:, 0][None, :]
    dbn = dr * (head["bn"] > 0)
    if want_param_grads:
        grads["head.w2"] = head["r"].T @ dy[:, None]
        grads["head.b2"] = np.array([dy.sum()])
        grads["head.gamma"] = (dbn * head["xhat"]).sum(axis=0)
        grads["head.beta"] = dbn.sum(axis=0)
    dxhat = dbn * t["head.gamma"]
    if head["training"]:
        da1 = (head["istd"] / N) * (
            N * dxhat - dxhat.sum(axis=0) - head["xhat"] * (dxhat * head["xhat"]).sum(axis=0)
        )
    else:
        da1 = dxhat * head["istd"]
    if want_param_grads:
        grads["head.w1"] = head["h_last"].T @ da1
        grads["head.b1"] = da1.sum(axis=0)
    d_seq = np.zeros_like(layer_caches[-1]["h"])
    d_seq[:, -1] = da1 @ t["head.w1"].T
    for layer in range(params.n_layers - 1, -1, -1):
        d_inputs, dwx, dwh, db = _layer_backward(
            t[f"lstm{layer}.wx"], t[f"lstm{layer}.wh"], layer_caches[layer], d_seq
        )
        if want_param_grads:
            grads[f"lstm{layer}.wx"] = dwx
            grads[f"lstm{layer}.wh"] = dwh
            grads[f"lstm{layer}.b"] = db
        if layer > 0:
            d_seq = d_inputs
            if dropout_masks[layer - 1] is not None:
                d_seq = d_seq * dropout_masks[layer - 1]
    dx = np.swapaxes(d_inputs, 1, 2)  # (N, B, T)
    return dx, grads


def predict(params: LstmParams, x: np.ndarray) -> np.ndarray:
    """Inference-mode predictions for (N, B, T) or a single (B, T) input."""
    squeeze = np.asarray(x).ndim == 2
    x = _check_input(params, x)
    y, *_ = _forward(params, x, training=False)
    return y[0] if squeeze else y


def input_gradient(params: LstmParams, x: np.ndarray) -> np.ndarray:
    """Exact d(prediction)/d(input) per sample, inference mode."""
    squeeze = np.asarray(x).ndim == 2
    x = _check_input(params, x)
    y, caches, masks, head = _forward(params, x, training=False)
    dx, _ = _backward(params, x, np.ones_like(y), caches, masks, head,
                      want_param_grads=False)
    return dx[0] if squeeze else dx


def loss_and_grads(
    params: LstmParams,
    x: np.ndarray,
    y_true: np.ndarray,
    dropout_rng: np.random.Generator,
) -> tuple[float, dict[str, np.ndarray], np.ndarray, np.ndarray]:
    """Training-mode MAE loss, parameter gradients and the batch BN statistics."""
    x = _check_input(params, x)
    y_true = np.asarray(y_true, dtype=np.float64)
    N = x.shape[0]
    y, caches, masks, head = _forward(params, x, training=True, dropout_rng=dropout_rng)
    resid = y - y_true
    loss = float(np.abs(resid).mean())
    dy = np.sign(resid) / N
    _, grads = _backward(params, x, dy, caches, masks, head, want_param_grads=True)
    return loss, grads, head["mu"], head["var"]


class LstmRegressor:
    """Inference-mode model handle exposing the attribution interface.

    Immutable once constructed; ``predict`` and ``input_gradient`` are pure
    functions of the input, safe for concurrent use.
    """

    def __init__(self, params: LstmParams):
        params.validate()
        self.params = params

    @property
    def n_bands(self) -> int:
        return self.params.n_bands

    def predict(self, x: np.ndarray) -> np.ndarray | float:
        return predict(self.params, x)

    def input_gradient(self, x: np.ndarray) -> np.ndarray:
        return input_gradient(self.params, x)


def save_checkpoint(params: LstmParams, path: str | Path, meta: Mapping[str, Any] | None = None) -> None:
    header = {
        "n_bands": params.n_bands,
        "hidden_size": params.hidden_size,
        "n_layers": params.n_layers,
        "dropout_rate": params.dropout_rate,
        "extra": dict(meta or {}),
    }
    write_container(path, CKPT_MAGIC, header, params.tensors)


def load_checkpoint(path: str | Path) -> tuple[LstmParams, dict[str, Any]]:
    meta, tensors = read_container(path, CKPT_MAGIC)
    try:
        params = LstmParams(
            n_bands=int(meta["n_bands"]),
            hidden_size=int(meta["hidden_size"]),
            n_layers=int(meta["n_layers"]),
            dropout_rate=float(meta["dropout_rate"]),
            tensors=tensors,
        )
    except KeyError as exc:
        raise FormatError(f"{path}: bad checkpoint header: {exc}") from exc
    return params, dict(meta.get("extra", {}))
