"""One fitted transfer: normalise, impute, unify, pair, project.

:func:`fit_transfer` sees only the rows it is given and records every row it
consumes in an :class:`Audit`. :meth:`FittedTransfer.embed` maps held-out
target rows into the classification space without refitting anything.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .cca import (DEFAULT_KAPPA, DEFAULT_RHO, LINEAR, KernelSpec, default_latent_dim,
                  fit_kernel_cca, fit_linear_cca, transform_kernel, transform_linear)
from .data import Dataset, FeaturePartition, Scaler, fit_scaler, partition_features
from .dcca import DccaTrainConfig, train_dcca, transform_deep
from .impute import (KNNI, ZERO_PAD, ImputeMode, UnifiedPair, assemble, complete_own_block,
                     create_block, cross_transfer_impute, impute_from, knn_impute, stack, unify)
from .pairing import PairedViews, nearest_pairing

ORIGINAL = "Original"
BASELINES = ("Original", "ZPC", "IMC", "ZPCCA", "IMCCA", "ZPKCCA", "IMKCCA", "ZPDCCA", "IMDCCA")
CCA_BASELINES = BASELINES[3:]
_METHODS = {"C": None, "CCA": "linear", "KCCA": "kernel", "DCCA": "deep"}


def parse_baseline(name: str):
    """``'IMKCCA' -> ('Knni', 'kernel')``; ``'Original' -> (None, None)``."""
    if name == ORIGINAL:
        return None, None
    if name not in BASELINES:
        raise ValueError(f"unknown baseline {name!r}; expected one of {BASELINES}")
    mode = ZERO_PAD if name.startswith("ZP") else KNNI
    return mode, _METHODS[name[2:]]


class Audit:
    """Row ids consumed by each fitting stage, per domain."""

    def __init__(self):
        self.log = defaultdict(set)

    def record(self, stage: str, domain: str, d: Dataset):
        self.log[(stage, domain)].update(int(i) for i in d.row_ids)

    def consumed(self, domain: str) -> set:
        out = set()
        for (_, dom), ids in self.log.items():
            if dom == domain:
                out |= ids
        return out

    def stages(self) -> list:
        return sorted(self.log)


@dataclass(frozen=True)
class TransferSettings:
    k_impute: int = 5
    k_classify: int = 1
    rho: float = DEFAULT_RHO
    kappa: float = DEFAULT_KAPPA
    kernel: KernelSpec = KernelSpec(LINEAR)
    dcca: DccaTrainConfig = DccaTrainConfig()
    latent_dim: int = None
    supervised: bool = True
    pooled_cross_impute: bool = True


@dataclass(eq=False)
class FittedTransfer:
    baseline: str
    settings: TransferSettings
    scaler: Scaler
    partition: FeaturePartition = None
    common_pool: Dataset = None
    target_pool: Dataset = None
    unified: UnifiedPair = None
    pairs: PairedViews = None
    model: object = None
    train_x: np.ndarray = None
    train_y: np.ndarray = None
    target_names: list = field(default_factory=list)

    def project(self, rows, view: str) -> np.ndarray:
        _, method = parse_baseline(self.baseline)
        if method is None:
            return np.asarray(rows, dtype=np.float64)
        if method == "linear":
            return transform_linear(self.model, rows, view)
        if method == "kernel":
            return transform_kernel(self.model, rows, view)
        return transform_deep(self.model, rows, view)

    def embed(self, rows: Dataset) -> np.ndarray:
        """Map held-out target rows (raw, target schema) into the classification space."""
        s = self.settings
        rows = self.scaler.apply(rows.select(self.target_names))
        if self.baseline == ORIGINAL:
            return impute_from(rows, self.target_pool, s.k_impute).values
        part = self.partition
        mode, _ = parse_baseline(self.baseline)
        common = impute_from(rows.select(part.common), self.common_pool, s.k_impute)
        rows = _put(rows, common)
        rows = complete_own_block(rows, self.target_pool, part.target_only, s.k_impute)
        created = create_block(rows, self.unified.source, part.common, part.source_only,
                               ImputeMode(mode, s.k_impute))
        unified = assemble(rows, created, part.unified)
        return self.project(unified.values, "target")


def _put(d: Dataset, block: Dataset) -> Dataset:
    values, missing = d.values.copy(), d.missing.copy()
    for jb, name in enumerate(block.names):
        j = d.column(name)
        values[:, j] = block.values[:, jb]
        missing[:, j] = block.missing[:, jb]
    return Dataset(values, missing, d.labels, d.features, d.row_ids)


def fit_model(pairs: PairedViews, method: str, settings: TransferSettings, seed: int = 0):
    r = settings.latent_dim or default_latent_dim(pairs.source_rows, pairs.target_rows)
    if method == "linear":
        return fit_linear_cca(pairs, r, settings.rho)
    if method == "kernel":
        return fit_kernel_cca(pairs, r, settings.kernel, settings.kappa)
    if method == "deep":
        cfg = settings.dcca
        cfg = DccaTrainConfig(cfg.epochs, cfg.learning_rate, cfg.lambda_reg, cfg.seed + seed,
                              cfg.widths, r)
        return train_dcca(pairs, cfg)
    raise ValueError(f"unknown method {method!r}")


def fit_transfer(source: Dataset, target: Dataset, baseline: str,
                 settings: TransferSettings = TransferSettings(), seed: int = 0,
                 audit: Audit = None) -> FittedTransfer:
    """Fit the full pipeline of ``baseline`` on ``source`` and the given target rows.

    Both datasets must already share one encoding for their common features
    (see :func:`ccatl.data.harmonize`).
    """
    audit = audit if audit is not None else Audit()
    mode, method = parse_baseline(baseline)
    k = settings.k_impute
    if baseline == ORIGINAL:
        scaler = fit_scaler(target)
        audit.record("normalize", "target", target)
        t = scaler.apply(target)
        audit.record("impute", "target", t)
        ti = knn_impute(t, k)
        return FittedTransfer(baseline, settings, scaler, target_pool=t, train_x=ti.values,
                              train_y=ti.labels.copy(), target_names=target.names)

    part = partition_features(source, target)
    scaler = fit_scaler(source, target)
    audit.record("normalize", "source", source)
    audit.record("normalize", "target", target)
    s, t = scaler.apply(source), scaler.apply(target)

    common_pool = stack(s.select(part.common), t.select(part.common))
    audit.record("impute", "source", s)
    audit.record("impute", "target", t)
    si, ti = cross_transfer_impute(s, t, part, k, pooled=settings.pooled_cross_impute)
    u = unify(si, ti, part, ImputeMode(mode, k))

    pairs = nearest_pairing(u, supervised=settings.supervised)
    audit.record("pairing", "source", u.source.take(pairs.source_ids))
    audit.record("pairing", "target", u.target.take(pairs.target_ids))

    fitted = FittedTransfer(baseline, settings, scaler, part, common_pool, ti, u, pairs,
                            target_names=target.names)
    if method is not None:
        audit.record("fit", "source", u.source.take(pairs.source_ids))
        audit.record("fit", "target", u.target.take(pairs.target_ids))
        fitted.model = fit_model(pairs, method, settings, seed)
    zs = fitted.project(pairs.source_rows, "source")
    zt = fitted.project(pairs.target_rows, "target")
    fitted.train_x = np.vstack([zt, zs])
    fitted.train_y = np.concatenate([pairs.labels, pairs.labels])
    return fitted
