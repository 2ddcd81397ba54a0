"""Domain divergence: proxy A-distance, MMD and CORAL loss."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cca import LINEAR, RBF, KernelSpec, median_gamma

PRE_CCA = "pre_cca"
POST_CCA = "post_cca"
REPORT_COLUMNS = ["transfer_id", "baseline", "stage", "mmd", "proxy_a", "coral", "kernel"]


def _pair(x, y):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"width mismatch: {x.shape[1]} vs {y.shape[1]}")
    return x, y


def proxy_a_from_error(err: float) -> float:
    return max(0.0, 2.0 * (1.0 - 2.0 * err))


def _fit_logistic(x, t, l2=1e-3, lr=0.5, iters=300):
    w = np.zeros(x.shape[1])
    b = 0.0
    n = x.shape[0]
    for _ in range(iters):
        z = x @ w + b
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        g = p - t
        w -= lr * (x.T @ g / n + l2 * w)
        b -= lr * g.mean()
    return w, b


def proxy_a_distance(x, y, seed: int = 0, repeats: int = 5) -> float:
    """Proxy A-distance from a ridge-penalised logistic domain classifier.

    Both samples are subsampled to a common size ``m``; each repeat trains on
    a stratified half and measures the error on the other half. The clipped
    value ``max(0, 2(1 - 2 err))`` is averaged over repeats.
    """
    x, y = _pair(x, y)
    m = min(x.shape[0], y.shape[0])
    if m < 4:
        raise ValueError("proxy A-distance needs at least 4 rows per sample")
    out = []
    for rep in range(repeats):
        rng = np.random.default_rng([seed, rep])
        xs = x[rng.permutation(x.shape[0])[:m]]
        ys = y[rng.permutation(y.shape[0])[:m]]
        h = m // 2
        train = np.vstack([xs[:h], ys[:h]])
        test = np.vstack([xs[h:], ys[h:]])
        t_train = np.r_[np.zeros(h), np.ones(h)]
        t_test = np.r_[np.zeros(m - h), np.ones(m - h)]
        mu = train.mean(axis=0)
        sd = train.std(axis=0)
        sd[sd == 0] = 1.0
        w, b = _fit_logistic((train - mu) / sd, t_train)
        pred = (((test - mu) / sd) @ w + b > 0).astype(float)
        out.append(proxy_a_from_error(float(np.mean(pred != t_test))))
    return float(np.mean(out))


def mmd(x, y, kernel: KernelSpec = KernelSpec(RBF)) -> float:
    """Biased (V-statistic) maximum mean discrepancy.

    An Rbf kernel without a bandwidth gets the median heuristic on the pooled
    sample.
    """
    x, y = _pair(x, y)
    kernel = resolve_mmd_kernel(x, y, kernel)
    kxx = kernel.gram(x, x).mean()
    kyy = kernel.gram(y, y).mean()
    kxy = kernel.gram(x, y).mean()
    return float(np.sqrt(max(0.0, kxx - 2.0 * kxy + kyy)))


def resolve_mmd_kernel(x, y, kernel: KernelSpec) -> KernelSpec:
    if kernel.tag == RBF and kernel.gamma is None:
        return KernelSpec(RBF, median_gamma(np.vstack([x, y])))
    return kernel


def _coral_cov(D, n_norm):
    n = D.shape[0]
    s = np.ones(n) @ D
    return (D.T @ D - np.outer(s, s) / n_norm) / (n - 1)


def coral_loss(x, y) -> float:
    """``||C_x - C_y||_F^2 / (4 d^2)`` with unbiased sample covariances."""
    x, y = _pair(x, y)
    if x.shape[0] < 2 or y.shape[0] < 2:
        raise ValueError("CORAL needs at least 2 rows per sample")
    d = x.shape[1]
    diff = _coral_cov(x, x.shape[0]) - _coral_cov(y, y.shape[0])
    return float(np.sum(diff * diff) / (4.0 * d * d))


@dataclass(frozen=True)
class DivergenceReport:
    mmd: float
    proxy_a: float
    coral: float
    stage: str
    kernel: KernelSpec


def divergence_report(x, y, stage: str = PRE_CCA, kernel: KernelSpec = KernelSpec(RBF),
                      seed: int = 0) -> DivergenceReport:
    x, y = _pair(x, y)
    k = resolve_mmd_kernel(x, y, kernel)
    return DivergenceReport(mmd(x, y, k), proxy_a_distance(x, y, seed), coral_loss(x, y), stage, k)


def kernel_to_str(k: KernelSpec) -> str:
    return LINEAR if k.tag == LINEAR else f"{RBF}:{k.gamma!r}"


def kernel_from_str(s: str) -> KernelSpec:
    if s == LINEAR:
        return KernelSpec(LINEAR)
    tag, _, gamma = s.partition(":")
    return KernelSpec(tag, float(gamma) if gamma else None)


def report_row(rep: DivergenceReport, transfer_id: str, baseline: str) -> list:
    return [transfer_id, baseline, rep.stage, repr(rep.mmd), repr(rep.proxy_a),
            repr(rep.coral), kernel_to_str(rep.kernel)]


def write_reports_csv(rows, path):
    """``rows``: iterable of ``(transfer_id, baseline, DivergenceReport)``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for tid, base, rep in rows:
            w.writerow(report_row(rep, tid, base))
    tmp.replace(path)


def read_reports_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rep = DivergenceReport(float(r["mmd"]), float(r["proxy_a"]), float(r["coral"]),
                                   r["stage"], kernel_from_str(r["kernel"]))
            out.append((r["transfer_id"], r["baseline"], rep))
    return out
