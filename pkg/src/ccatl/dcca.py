"""Deep CCA: two sigmoid MLPs trained by full-batch gradient ascent on total correlation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cca import CcaModel, NumericalError, default_latent_dim, fit_linear_cca, transform_linear

DEFAULT_WIDTHS = (512, 512, 512)
EIG_FLOOR = 1e-12


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True, eq=False)
class Mlp:
    """Feed-forward net, sigmoid after every affine layer.

    ``weights[l]`` has shape ``(fan_in, fan_out)``.
    """

    weights: tuple
    biases: tuple

    @property
    def widths(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def params(self) -> list:
        return list(self.weights) + list(self.biases)


def init_mlp(widths, rng) -> Mlp:
    """Glorot-uniform weights, zero biases."""
    ws, bs = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return Mlp(tuple(ws), tuple(bs))


def _forward(net: Mlp, x):
    acts = [x]
    for w, b in zip(net.weights, net.biases):
        acts.append(sigmoid(acts[-1] @ w + b))
    return acts


def mlp_forward(net: Mlp, batch) -> np.ndarray:
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[1] != net.weights[0].shape[0]:
        raise ValueError(f"input width {batch.shape[1]} != {net.weights[0].shape[0]}")
    return _forward(net, batch)[-1]


def mlp_backward(net: Mlp, batch, upstream):
    """Gradients of ``sum(mlp_forward(net, batch) * upstream)`` w.r.t. every weight and bias.

    Returns ``(weight_grads, bias_grads)`` as lists aligned with the layers.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[1] != net.weights[0].shape[0]:
        raise ValueError(f"input width {batch.shape[1]} != {net.weights[0].shape[0]}")
    acts = _forward(net, batch)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != acts[-1].shape:
        raise ValueError(f"upstream shape {upstream.shape} != output shape {acts[-1].shape}")
    n_layers = len(net.weights)
    gw, gb = [None] * n_layers, [None] * n_layers
    delta = upstream * acts[-1] * (1.0 - acts[-1])
    for l in range(n_layers - 1, -1, -1):
        gw[l] = acts[l].T @ delta
        gb[l] = delta.sum(axis=0)
        if l:
            delta = (delta @ net.weights[l].T) * acts[l] * (1.0 - acts[l])
    return gw, gb


# --------------------------------------------------------------------------
# Correlation objective and its gradient
# --------------------------------------------------------------------------

def _inv_sqrt(S):
    d, V = np.linalg.eigh((S + S.T) / 2)
    d = np.maximum(d, EIG_FLOOR)
    return (V / np.sqrt(d)) @ V.T


def _check(Hs, Ht):
    Hs = np.asarray(Hs, dtype=np.float64)
    Ht = np.asarray(Ht, dtype=np.float64)
    if Hs.shape != Ht.shape or Hs.ndim != 2:
        raise ValueError(f"shape mismatch: {Hs.shape} vs {Ht.shape}")
    if Hs.shape[1] < 2:
        raise ValueError("need at least two columns")
    if not (np.isfinite(Hs).all() and np.isfinite(Ht).all()):
        raise NumericalError("non-finite network outputs")
    return Hs, Ht


def _whitened(Hs, Ht, lam):
    r, m = Hs.shape
    Hsb = Hs - Hs.mean(axis=1, keepdims=True)
    Htb = Ht - Ht.mean(axis=1, keepdims=True)
    Ss = Hsb @ Hsb.T / m + lam * np.eye(r)
    St = Htb @ Htb.T / m + lam * np.eye(r)
    Sst = Hsb @ Htb.T / m
    iSs, iSt = _inv_sqrt(Ss), _inv_sqrt(St)
    T = iSs @ Sst @ iSt
    return Hsb, Htb, iSs, iSt, T


def dcca_objective(Hs, Ht, lambda_reg: float) -> float:
    """Sum of singular values of ``Ss^-1/2 Sst St^-1/2`` for ``r x M`` outputs."""
    Hs, Ht = _check(Hs, Ht)
    *_, T = _whitened(Hs, Ht, lambda_reg)
    return float(np.linalg.svd(T, compute_uv=False).sum())


def dcca_gradient(Hs, Ht, lambda_reg: float):
    """Analytic gradients of :func:`dcca_objective` w.r.t. ``Hs`` and ``Ht``."""
    Hs, Ht = _check(Hs, Ht)
    m = Hs.shape[1]
    Hsb, Htb, iSs, iSt, T = _whitened(Hs, Ht, lambda_reg)
    U, D, Vt = np.linalg.svd(T, full_matrices=False)
    V = Vt.T
    nab_st = iSs @ U @ Vt @ iSt
    nab_s = -0.5 * iSs @ (U * D) @ U.T @ iSs
    nab_t = -0.5 * iSt @ (V * D) @ V.T @ iSt
    g_s = (2 * nab_s @ Hsb + nab_st @ Htb) / m
    g_t = (2 * nab_t @ Htb + nab_st.T @ Hsb) / m
    return g_s, g_t


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DccaTrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-2
    lambda_reg: float = 1e-3
    seed: int = 0
    widths: tuple = DEFAULT_WIDTHS
    r: int = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not self.lambda_reg > 0:
            raise ValueError("lambda_reg must be > 0")


@dataclass(frozen=True, eq=False)
class DccaModel:
    """Trained network pair.

    ``trace[e]`` is the training objective after epoch ``e``'s update.
    ``projection`` is a linear CCA fitted on the final network outputs; it
    rotates both output spaces onto common canonical axes.
    """

    net_source: Mlp
    net_target: Mlp
    lambda_reg: float
    r: int
    trace: np.ndarray
    initial_objective: float
    projection: CcaModel = None


def _outputs(net_s, net_t, xs, xt):
    return mlp_forward(net_s, xs).T, mlp_forward(net_t, xt).T


def train_dcca(p, cfg: DccaTrainConfig = DccaTrainConfig(), r: int = None) -> DccaModel:
    """Full-batch gradient ascent on the total-correlation objective."""
    xs = np.asarray(p.source_rows, dtype=np.float64)
    xt = np.asarray(p.target_rows, dtype=np.float64)
    m = xs.shape[0]
    r = r or cfg.r or default_latent_dim(xs, xt)
    if m < r + 1:
        raise ValueError(f"need at least r + 1 = {r + 1} pairs, got {m}")
    rng = np.random.default_rng(cfg.seed)
    net_s = init_mlp((xs.shape[1],) + tuple(cfg.widths) + (r,), rng)
    net_t = init_mlp((xt.shape[1],) + tuple(cfg.widths) + (r,), rng)
    ws_s, bs_s = [w.copy() for w in net_s.weights], [b.copy() for b in net_s.biases]
    ws_t, bs_t = [w.copy() for w in net_t.weights], [b.copy() for b in net_t.biases]
    lam = cfg.lambda_reg
    initial = dcca_objective(*_outputs(net_s, net_t, xs, xt), lam)
    trace = np.empty(cfg.epochs)
    for epoch in range(cfg.epochs):
        cur_s, cur_t = Mlp(tuple(ws_s), tuple(bs_s)), Mlp(tuple(ws_t), tuple(bs_t))
        Hs, Ht = _outputs(cur_s, cur_t, xs, xt)
        g_s, g_t = dcca_gradient(Hs, Ht, lam)
        gw_s, gb_s = mlp_backward(cur_s, xs, g_s.T)
        gw_t, gb_t = mlp_backward(cur_t, xt, g_t.T)
        for l in range(len(ws_s)):
            ws_s[l] = ws_s[l] + cfg.learning_rate * gw_s[l]
            bs_s[l] = bs_s[l] + cfg.learning_rate * gb_s[l]
            ws_t[l] = ws_t[l] + cfg.learning_rate * gw_t[l]
            bs_t[l] = bs_t[l] + cfg.learning_rate * gb_t[l]
        new_s, new_t = Mlp(tuple(ws_s), tuple(bs_s)), Mlp(tuple(ws_t), tuple(bs_t))
        try:
            obj = dcca_objective(*_outputs(new_s, new_t, xs, xt), lam)
        except NumericalError:
            obj = np.nan
        if not np.isfinite(obj):
            raise NumericalError(f"non-finite objective at epoch {epoch}")
        trace[epoch] = obj
    net_s, net_t = Mlp(tuple(ws_s), tuple(bs_s)), Mlp(tuple(ws_t), tuple(bs_t))
    Hs, Ht = _outputs(net_s, net_t, xs, xt)
    proj = fit_linear_cca(_Views(Hs.T, Ht.T), r=r, rho=lam)
    return DccaModel(net_s, net_t, lam, r, trace, initial, proj)


@dataclass(frozen=True)
class _Views:
    source_rows: np.ndarray
    target_rows: np.ndarray


def transform_deep(model: DccaModel, rows, view: str, aligned: bool = True) -> np.ndarray:
    """Network outputs for ``rows``; with ``aligned`` also rotated onto the canonical axes."""
    if view not in ("source", "target"):
        raise ValueError(f"view must be 'source' or 'target', got {view!r}")
    net = model.net_source if view == "source" else model.net_target
    h = mlp_forward(net, rows)
    if aligned and model.projection is not None:
        return transform_linear(model.projection, h, view)
    return h
