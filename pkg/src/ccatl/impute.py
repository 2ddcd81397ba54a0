"""HEOM k-nearest-neighbour imputation and unified feature construction."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data import NUMERICAL, Dataset, DataError, FeaturePartition
from .kernels import heom_matrix, knn_fill

ZERO_PAD = "ZeroPad"
KNNI = "Knni"


@dataclass(frozen=True)
class ImputeMode:
    tag: str = ZERO_PAD
    k: int = 5

    def __post_init__(self):
        if self.tag not in (ZERO_PAD, KNNI):
            raise ValueError(f"unknown imputation mode {self.tag!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class UnifiedPair:
    source: Dataset
    target: Dataset
    partition: FeaturePartition


def heom_distance(a, b, features, a_missing=None, b_missing=None) -> float:
    """Heterogeneous Euclidean-overlap distance between two rows.

    Missing entries (NaN, or flagged in the optional masks) contribute 1.
    Categorical features use 0/1 overlap; numerical ones the absolute
    difference over the feature's range.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    features = list(features)
    if not (a.shape == b.shape == (len(features),)):
        raise DataError(f"row widths {a.shape}, {b.shape} vs {len(features)} features")
    am = np.isnan(a) if a_missing is None else np.asarray(a_missing, dtype=bool)
    bm = np.isnan(b) if b_missing is None else np.asarray(b_missing, dtype=bool)
    is_cat = np.array([f.is_categorical for f in features])
    ranges = np.array([f.span for f in features])
    return float(heom_matrix(a[None], am[None], b[None], bm[None], is_cat, ranges)[0, 0])


def impute_from(query: Dataset, pool: Dataset, k: int, match: Sequence[str] = None) -> Dataset:
    """Fill the masked cells of ``query`` from HEOM-nearest rows of ``pool``.

    Distances use the columns named in ``match`` (default: all of the
    query's features), which must exist in both datasets. A missing cell of
    feature ``j`` only takes donors that observe ``j``; ties go to the
    smaller pool index. Rows without missing cells are returned untouched.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if pool.names != query.names:
        pool = pool.select(query.names)
    match = query.names if match is None else list(match)
    out_vals = query.values.copy()
    rows = np.flatnonzero(query.missing.any(axis=1))
    if rows.size:
        mq = query.select(match)
        mp = pool.select(match)
        feats = mq.features
        is_cat = np.array([f.is_categorical for f in feats])
        ranges = _pooled_ranges(mq, mp)
        dist = heom_matrix(mq.values[rows], mq.missing[rows], mp.values, mp.missing, is_cat, ranges)
        filled = knn_fill(dist, query.values[rows], query.missing[rows],
                          pool.values, pool.missing, query.is_categorical, k)
        if np.isnan(filled[query.missing[rows]]).any():
            bad = [query.names[j] for j in np.flatnonzero(np.isnan(filled).any(axis=0))]
            raise DataError(f"no donor observes feature(s) {bad}")
        out_vals[rows] = filled
    return Dataset(out_vals, np.zeros_like(query.missing), query.labels, query.features, query.row_ids)


def _pooled_ranges(*ds: Dataset) -> np.ndarray:
    # numerical range taken over the union of the inputs' reference ranges
    out = []
    for j, f in enumerate(ds[0].features):
        if f.kind != NUMERICAL:
            out.append(0.0)
            continue
        lo = min(d.features[j].lo for d in ds)
        hi = max(d.features[j].hi for d in ds)
        out.append(hi - lo)
    return np.array(out)


def knn_impute(d: Dataset, k: int) -> Dataset:
    """kNN-impute every masked cell of ``d`` using the other rows of ``d`` as donors."""
    return impute_from(d, d, k)


def stack(a: Dataset, b: Dataset) -> Dataset:
    """Row-stack two datasets over the same feature names; ranges are pooled."""
    b = b.select(a.names)
    feats = []
    for fa, fb in zip(a.features, b.features):
        if fa.kind != fb.kind:
            raise DataError(f"feature {fa.name!r} has different kinds")
        if fa.kind == NUMERICAL:
            feats.append(replace(fa, lo=min(fa.lo, fb.lo), hi=max(fa.hi, fb.hi)))
        else:
            feats.append(fa)
    return Dataset(np.vstack([a.values, b.values]), np.vstack([a.missing, b.missing]),
                   np.concatenate([a.labels, b.labels]), feats,
                   np.concatenate([a.row_ids, b.row_ids]))


def _replace_columns(d: Dataset, block: Dataset) -> Dataset:
    values = d.values.copy()
    missing = d.missing.copy()
    feats = list(d.features)
    for jb, name in enumerate(block.names):
        j = d.column(name)
        values[:, j] = block.values[:, jb]
        missing[:, j] = block.missing[:, jb]
        feats[j] = block.features[jb]
    return Dataset(values, missing, d.labels, feats, d.row_ids)


def cross_transfer_impute(source: Dataset, target: Dataset, part: FeaturePartition, k: int,
                          pooled: bool = True) -> tuple:
    """Impute the common features of both domains from one stacked donor pool.

    With ``pooled=False`` each domain only draws donors from itself (ablation).
    Source-only and target-only columns are not touched.
    """
    if not part.common:
        raise DataError("empty common feature set")
    sc = source.select(part.common)
    tc = target.select(part.common)
    if pooled:
        both = knn_impute(stack(sc, tc), k)
        n = source.n_rows
        s_fill = Dataset(both.values[:n], both.missing[:n], sc.labels, sc.features, sc.row_ids)
        t_fill = Dataset(both.values[n:], both.missing[n:], tc.labels, tc.features, tc.row_ids)
    else:
        s_fill = knn_impute(sc, k)
        t_fill = knn_impute(tc, k)
    return _replace_columns(source, s_fill), _replace_columns(target, t_fill)


def complete_own_block(query: Dataset, pool: Dataset, names: Sequence[str], k: int) -> Dataset:
    """kNN-fill masked cells in columns ``names`` from same-domain donors.

    Distances use every feature of the domain.
    """
    names = list(names)
    if not names or not query.select(names).missing.any():
        return query
    filled = impute_from(query, pool, k)
    keep = np.ones(query.n_features, dtype=bool)
    keep[[query.column(n) for n in names]] = False
    values = np.where(keep[None, :], query.values, filled.values)
    missing = query.missing & keep[None, :]
    return Dataset(values, missing, query.labels, query.features, query.row_ids)


def create_block(query: Dataset, donor: Dataset, match: Sequence[str], fill: Sequence[str],
                 mode: ImputeMode) -> Dataset:
    """Build the columns ``fill`` (observed only in ``donor``) for the rows of ``query``.

    ``ZeroPad`` returns zeros; ``Knni`` copies the mean/mode of the ``mode.k``
    donor rows nearest on the ``match`` columns.
    """
    fill = list(fill)
    dfill = donor.select(fill)
    n = query.n_rows
    if mode.tag == ZERO_PAD or not fill:
        return Dataset(np.zeros((n, len(fill))), np.zeros((n, len(fill)), dtype=bool),
                       query.labels, dfill.features, query.row_ids)
    mq = query.select(match)
    md = donor.select(match)
    is_cat = np.array([f.is_categorical for f in mq.features])
    dist = heom_matrix(mq.values, mq.missing, md.values, md.missing, is_cat, _pooled_ranges(mq, md))
    blank = np.ones((n, len(fill)), dtype=bool)
    vals = knn_fill(dist, np.full((n, len(fill)), np.nan), blank,
                    dfill.values, dfill.missing, dfill.is_categorical, mode.k)
    if np.isnan(vals).any():
        raise DataError("donor domain leaves a created feature without observations")
    return Dataset(vals, np.zeros_like(blank), query.labels, dfill.features, query.row_ids)


def assemble(own: Dataset, created: Dataset, unified: Sequence[str]) -> Dataset:
    """Concatenate a domain's own columns with its created block in ``unified`` order."""
    feats = {f.name: (own, j) for j, f in enumerate(own.features)}
    feats.update({f.name: (created, j) for j, f in enumerate(created.features)})
    cols, masks, metas = [], [], []
    for name in unified:
        d, j = feats[name]
        cols.append(d.values[:, j])
        masks.append(d.missing[:, j])
        metas.append(d.features[j])
    return Dataset(np.column_stack(cols), np.column_stack(masks), own.labels, metas, own.row_ids)


def unify(source: Dataset, target: Dataset, part: FeaturePartition, mode: ImputeMode) -> UnifiedPair:
    """Complete both domains onto the unified feature list.

    Expects the common block already imputed. Each domain's own-specific
    block is first completed from same-domain donors; the block a domain
    never observes is then zero-padded or kNN-imputed from the other domain,
    matching rows on the common features.
    """
    if source.select(part.common).missing.any() or target.select(part.common).missing.any():
        raise DataError("common features must be imputed before unify")
    source = complete_own_block(source, source, part.source_only, mode.k)
    target = complete_own_block(target, target, part.target_only, mode.k)
    s_new = create_block(source, target, part.common, part.target_only, mode)
    t_new = create_block(target, source, part.common, part.source_only, mode)
    return UnifiedPair(assemble(source, s_new, part.unified),
                       assemble(target, t_new, part.unified), part)
