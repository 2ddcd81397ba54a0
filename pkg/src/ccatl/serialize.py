"""Bit-exact model persistence as ``.npz`` archives (no pickling)."""
from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from .cca import CcaModel, KccaModel, KernelSpec
from .dcca import DccaModel, Mlp

FORMAT_VERSION = 1


def _kernel_fields(prefix, k: KernelSpec):
    return {f"{prefix}_tag": np.array(k.tag),
            f"{prefix}_gamma": np.array(np.nan if k.gamma is None else k.gamma)}


def _kernel_load(z, prefix):
    g = float(z[f"{prefix}_gamma"])
    return KernelSpec(str(z[f"{prefix}_tag"]), None if np.isnan(g) else g)


def _cca_fields(m: CcaModel, prefix=""):
    return {prefix + "w_source": m.w_source, prefix + "w_target": m.w_target,
            prefix + "mu_source": m.mu_source, prefix + "mu_target": m.mu_target,
            prefix + "correlations": m.correlations, prefix + "rho": np.array(m.rho),
            prefix + "r": np.array(m.r)}


def _cca_load(z, prefix=""):
    return CcaModel(z[prefix + "w_source"], z[prefix + "w_target"], z[prefix + "mu_source"],
                    z[prefix + "mu_target"], z[prefix + "correlations"],
                    float(z[prefix + "rho"]), int(z[prefix + "r"]))


def _mlp_fields(net: Mlp, prefix):
    out = {f"{prefix}_layers": np.array(len(net.weights))}
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}_w{l}"] = w
        out[f"{prefix}_b{l}"] = b
    return out


def _mlp_load(z, prefix):
    n = int(z[f"{prefix}_layers"])
    return Mlp(tuple(z[f"{prefix}_w{l}"] for l in range(n)),
               tuple(z[f"{prefix}_b{l}"] for l in range(n)))


def save_model(model, path):
    """Write a fitted CCA, KCCA or DCCA model; the write is atomic."""
    if isinstance(model, CcaModel):
        kind, fields = "cca", _cca_fields(model)
    elif isinstance(model, KccaModel):
        kind = "kcca"
        fields = {"alpha_source": model.alpha_source, "alpha_target": model.alpha_target,
                  "train_source": model.train_source, "train_target": model.train_target,
                  "kappa": np.array(model.kappa), "correlations": model.correlations,
                  "r": np.array(model.r), "colmean_source": model.colmean_source,
                  "colmean_target": model.colmean_target,
                  "mean_source": np.array(model.mean_source),
                  "mean_target": np.array(model.mean_target)}
        fields.update(_kernel_fields("kernel_source", model.kernel_source))
        fields.update(_kernel_fields("kernel_target", model.kernel_target))
    elif isinstance(model, DccaModel):
        kind = "dcca"
        fields = {"lambda_reg": np.array(model.lambda_reg), "r": np.array(model.r),
                  "trace": model.trace, "initial_objective": np.array(model.initial_objective),
                  "has_projection": np.array(model.projection is not None)}
        fields.update(_mlp_fields(model.net_source, "net_source"))
        fields.update(_mlp_fields(model.net_target, "net_target"))
        if model.projection is not None:
            fields.update(_cca_fields(model.projection, "proj_"))
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, __kind__=np.array(kind), __version__=np.array(FORMAT_VERSION), **fields)
    os.replace(tmp, path)


def load_model(path):
    with np.load(path, allow_pickle=False) as z:
        kind = str(z["__kind__"])
        if kind == "cca":
            return _cca_load(z)
        if kind == "kcca":
            return KccaModel(
                alpha_source=z["alpha_source"], alpha_target=z["alpha_target"],
                train_source=z["train_source"], train_target=z["train_target"],
                kernel_source=_kernel_load(z, "kernel_source"),
                kernel_target=_kernel_load(z, "kernel_target"),
                kappa=float(z["kappa"]), correlations=z["correlations"], r=int(z["r"]),
                colmean_source=z["colmean_source"], colmean_target=z["colmean_target"],
                mean_source=float(z["mean_source"]), mean_target=float(z["mean_target"]))
        if kind == "dcca":
            proj = _cca_load(z, "proj_") if bool(z["has_projection"]) else None
            return DccaModel(_mlp_load(z, "net_source"), _mlp_load(z, "net_target"),
                             float(z["lambda_reg"]), int(z["r"]), z["trace"],
                             float(z["initial_objective"]), proj)
    raise ValueError(f"unknown model kind {kind!r}")


def write_trace_csv(model: DccaModel, path):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "objective"])
        for e, v in enumerate(model.trace.tolist()):
            w.writerow([e, repr(v)])
    tmp.replace(path)


def read_trace_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([float(r["objective"]) for r in csv.DictReader(fh)])
