"""Tabular data model: CSV ingestion, min-max scaling, feature partition, synthesis."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

CATEGORICAL = "categorical"
NUMERICAL = "numerical"
NA_TOKEN = "NA"
DEFAULT_LABEL = "Amen_ST12"
# a column with at most this many distinct observed numbers is read as categorical
MAX_NUMERIC_LEVELS = 10


class DataError(ValueError):
    """Raised when an input table violates the dataset contract."""


@dataclass(frozen=True)
class FeatureMeta:
    """Per-feature metadata.

    For numerical features ``lo``/``hi`` hold the observed range used for
    scaling and HEOM distances. For categorical features ``levels`` holds the
    value labels in code order. ``normalized`` marks categorical codes that
    have already been divided by ``len(levels) - 1``.
    """

    name: str
    kind: str
    lo: float = 0.0
    hi: float = 0.0
    levels: tuple = ()
    normalized: bool = False

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    @property
    def span(self) -> float:
        return self.hi - self.lo if self.kind == NUMERICAL else 0.0


@dataclass(frozen=True, eq=False)
class Dataset:
    values: np.ndarray
    missing: np.ndarray
    labels: np.ndarray
    features: tuple
    row_ids: np.ndarray = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        missing = np.array(self.missing, dtype=bool)
        labels = np.array(self.labels, dtype=np.int64)
        if values.ndim != 2 or values.shape != missing.shape:
            raise DataError(f"values {values.shape} and mask {missing.shape} disagree")
        n, d = values.shape
        if n < 1:
            raise DataError("dataset needs at least one row")
        if labels.shape != (n,):
            raise DataError(f"expected {n} labels, got {labels.shape}")
        if not np.isin(labels, (0, 1)).all():
            raise DataError("labels must be 0/1")
        feats = tuple(self.features)
        if len(feats) != d:
            raise DataError(f"{len(feats)} feature records for {d} columns")
        names = [f.name for f in feats]
        if len(set(names)) != len(names):
            raise DataError("feature names must be unique")
        values[missing] = np.nan
        row_ids = np.arange(n) if self.row_ids is None else np.array(self.row_ids, dtype=np.int64)
        for arr in (values, missing, labels, row_ids):
            arr.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "row_ids", row_ids)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    @property
    def names(self) -> list:
        return [f.name for f in self.features]

    @property
    def is_categorical(self) -> np.ndarray:
        return np.array([f.is_categorical for f in self.features], dtype=bool)

    @property
    def ranges(self) -> np.ndarray:
        return np.array([f.span for f in self.features], dtype=np.float64)

    def column(self, name: str) -> int:
        return self.names.index(name)

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.values[rows], self.missing[rows], self.labels[rows],
                       self.features, self.row_ids[rows])

    def select(self, names: Sequence[str]) -> "Dataset":
        idx = [self.column(n) for n in names]
        return Dataset(self.values[:, idx], self.missing[:, idx], self.labels,
                       [self.features[i] for i in idx], self.row_ids)

    def with_values(self, values, missing=None, features=None) -> "Dataset":
        return Dataset(values, self.missing if missing is None else missing, self.labels,
                       self.features if features is None else features, self.row_ids)

    def equals(self, other: "Dataset") -> bool:
        """Bit-exact equality, masked cells ignored."""
        return (
            self.features == other.features
            and np.array_equal(self.missing, other.missing)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.row_ids, other.row_ids)
            and np.array_equal(self.values, other.values, equal_nan=True)
        )


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

def _as_float(tok: str):
    try:
        v = float(tok)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def _coerce_label(tok: str, lineno: int) -> int:
    v = _as_float(tok)
    if v is None or v not in (0.0, 1.0):
        raise DataError(f"line {lineno}: label {tok!r} is not 0/1")
    return int(v)


def _meta_from_column(name, toks, na_token, schema_meta=None):
    observed = [t for t in toks if t != na_token]
    if not observed:
        raise DataError(f"feature {name!r} has no observed entries")
    if schema_meta is not None:
        kind = schema_meta.kind
    else:
        nums = [_as_float(t) for t in observed]
        numeric = all(v is not None for v in nums) and len(set(nums)) > MAX_NUMERIC_LEVELS
        kind = NUMERICAL if numeric else CATEGORICAL
    col = np.full(len(toks), np.nan)
    miss = np.array([t == na_token for t in toks])
    if kind == NUMERICAL:
        for i, t in enumerate(toks):
            if not miss[i]:
                v = _as_float(t)
                if v is None:
                    raise DataError(f"feature {name!r}: {t!r} is not numeric")
                col[i] = v
        obs = col[~miss]
        meta = FeatureMeta(name, NUMERICAL, float(obs.min()), float(obs.max()))
    else:
        levels = list(schema_meta.levels) if schema_meta is not None else []
        for t in observed:
            if t not in levels:
                if schema_meta is not None:
                    raise DataError(f"feature {name!r}: level {t!r} not in schema")
                levels.append(t)
        code = {lv: i for i, lv in enumerate(levels)}
        for i, t in enumerate(toks):
            if not miss[i]:
                col[i] = code[t]
        meta = FeatureMeta(name, CATEGORICAL, levels=tuple(levels))
    return col, miss, meta


def load_csv(path, label_column: str = DEFAULT_LABEL, schema=None,
             na_token: str = NA_TOKEN, drop: Sequence[str] = ()) -> Dataset:
    """Read a comma-separated table with a header row into a :class:`Dataset`.

    Cells equal to ``na_token`` are masked. Without a ``schema`` a column is
    numerical when every observed entry is a number and there are more than
    ten distinct values; otherwise it is categorical and coded densely in
    order of first appearance. Columns named in ``drop`` (e.g. row ids) are
    skipped.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    if label_column not in header:
        raise DataError(f"{path}: label column {label_column!r} not found")
    for ln, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise DataError(f"{path}:{ln}: expected {len(header)} fields, got {len(r)}")
    if not rows:
        raise DataError(f"{path}: no data rows")
    li = header.index(label_column)
    labels = []
    for ln, r in enumerate(rows, start=2):
        if r[li].strip() == na_token:
            raise DataError(f"{path}:{ln}: label is missing")
        labels.append(_coerce_label(r[li].strip(), ln))

    by_name = {m.name: m for m in schema} if schema is not None else None
    cols, masks, metas = [], [], []
    for j, name in enumerate(header):
        if j == li or name in drop:
            continue
        toks = [r[j].strip() for r in rows]
        sm = None
        if by_name is not None:
            if name not in by_name:
                raise DataError(f"{path}: column {name!r} not in schema")
            sm = by_name[name]
        col, miss, meta = _meta_from_column(name, toks, na_token, sm)
        cols.append(col)
        masks.append(miss)
        metas.append(meta)
    n = len(rows)
    values = np.column_stack(cols) if cols else np.empty((n, 0))
    missing = np.column_stack(masks) if masks else np.zeros((n, 0), dtype=bool)
    return Dataset(values, missing, labels, metas)


def _format_cell(meta: FeatureMeta, v: float) -> str:
    if meta.kind == NUMERICAL:
        return repr(float(v))
    k = len(meta.levels)
    code = v * (k - 1) if meta.normalized and k > 1 else v
    c = int(round(code))
    if not 0 <= c < k or abs(code - c) > 1e-9:
        raise DataError(f"feature {meta.name!r}: {v!r} is not a valid code")
    return str(meta.levels[c])


def save_csv(d: Dataset, path, label_column: str = DEFAULT_LABEL, na_token: str = NA_TOKEN):
    """Write ``d`` so that :func:`load_csv` with ``schema=d.features`` restores it exactly."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(d.names + [label_column])
        for i in range(d.n_rows):
            cells = [na_token if d.missing[i, j] else _format_cell(f, d.values[i, j])
                     for j, f in enumerate(d.features)]
            w.writerow(cells + [str(int(d.labels[i]))])
    tmp.replace(path)


# --------------------------------------------------------------------------
# Scaling
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Scaler:
    """Per-feature min-max parameters keyed by feature name."""

    lo: dict
    hi: dict
    n_levels: dict

    def apply(self, d: Dataset) -> Dataset:
        values = d.values.copy()
        feats = []
        for j, f in enumerate(d.features):
            if f.kind == NUMERICAL:
                lo, hi = self.lo[f.name], self.hi[f.name]
                span = hi - lo
                values[:, j] = (values[:, j] - lo) / span if span > 0 else 0.0
                feats.append(replace(f, lo=0.0, hi=1.0 if span > 0 else 0.0))
            else:
                if not f.normalized:
                    k = self.n_levels.get(f.name, len(f.levels))
                    values[:, j] = values[:, j] / (k - 1) if k > 1 else 0.0
                feats.append(replace(f, normalized=True))
        return Dataset(values, d.missing, d.labels, feats, d.row_ids)


def fit_scaler(*datasets: Dataset) -> Scaler:
    """Fit min-max parameters over the observed cells of one or more datasets.

    Features sharing a name are pooled, so a common feature gets one scale
    across domains.
    """
    lo, hi, n_levels = {}, {}, {}
    for d in datasets:
        for j, f in enumerate(d.features):
            if f.kind == NUMERICAL:
                obs = d.values[~d.missing[:, j], j]
                if obs.size == 0:
                    continue
                lo[f.name] = min(lo.get(f.name, np.inf), float(obs.min()))
                hi[f.name] = max(hi.get(f.name, -np.inf), float(obs.max()))
            else:
                n_levels[f.name] = max(n_levels.get(f.name, 0), len(f.levels))
    return Scaler(lo, hi, n_levels)


def normalize(d: Dataset) -> Dataset:
    """Min-max scale every feature of ``d`` into [0, 1] using its own observed cells."""
    return fit_scaler(d).apply(d)


# --------------------------------------------------------------------------
# Schema alignment and feature partition
# --------------------------------------------------------------------------

def _to_numerical(d: Dataset, j: int) -> tuple:
    f = d.features[j]
    lv = np.array([_as_float(str(x)) for x in f.levels], dtype=np.float64)
    col = d.values[:, j].copy()
    obs = ~d.missing[:, j]
    col[obs] = lv[col[obs].astype(int)]
    return col, FeatureMeta(f.name, NUMERICAL, float(col[obs].min()), float(col[obs].max()))


def harmonize(source: Dataset, target: Dataset) -> tuple:
    """Give shared features one encoding in both datasets.

    Categorical level lists are merged (source levels first, source codes
    unchanged). A feature read as numerical on one side and categorical on
    the other becomes numerical when all its levels are numbers, otherwise
    categorical on both sides.
    """
    sv, tv = source.values.copy(), target.values.copy()
    sf, tf = list(source.features), list(target.features)
    tnames = target.names
    for js, f in enumerate(source.features):
        if f.name not in tnames:
            continue
        jt = tnames.index(f.name)
        g = target.features[jt]
        if f.kind != g.kind:
            cat = g if f.kind == NUMERICAL else f
            if all(_as_float(str(x)) is not None for x in cat.levels):
                if f.kind == CATEGORICAL:
                    sv[:, js], sf[js] = _to_numerical(source, js)
                else:
                    tv[:, jt], tf[jt] = _to_numerical(target, jt)
            else:
                raise DataError(f"feature {f.name!r} is numerical in one dataset and "
                                "non-numeric categorical in the other")
            continue
        if f.kind == CATEGORICAL:
            levels = list(f.levels)
            for lv in g.levels:
                if lv not in levels:
                    levels.append(lv)
            remap = np.array([levels.index(lv) for lv in g.levels], dtype=np.float64)
            obs = ~target.missing[:, jt]
            tv[obs, jt] = remap[tv[obs, jt].astype(int)]
            sf[js] = replace(f, levels=tuple(levels))
            tf[jt] = replace(g, levels=tuple(levels))
    return (Dataset(sv, source.missing, source.labels, sf, source.row_ids),
            Dataset(tv, target.missing, target.labels, tf, target.row_ids))


@dataclass(frozen=True)
class FeaturePartition:
    common: tuple
    source_only: tuple
    target_only: tuple

    @property
    def unified(self) -> tuple:
        return self.common + self.source_only + self.target_only


def partition_features(source: Dataset, target: Dataset) -> FeaturePartition:
    """Split the two feature spaces into shared, source-only and target-only names."""
    tset = set(target.names)
    sset = set(source.names)
    common = tuple(n for n in source.names if n in tset)
    if not common:
        raise DataError("source and target share no features")
    return FeaturePartition(
        common=common,
        source_only=tuple(n for n in source.names if n not in tset),
        target_only=tuple(n for n in target.names if n not in sset),
    )


def numerical_rank(d, rtol: float = 1e-8) -> int:
    """Number of singular values above ``rtol`` times the largest one."""
    x = d.values if isinstance(d, Dataset) else np.asarray(d, dtype=np.float64)
    if isinstance(d, Dataset) and d.missing.any():
        raise DataError("numerical_rank needs a fully imputed dataset")
    if x.size == 0:
        return 0
    s = np.linalg.svd(x, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


# --------------------------------------------------------------------------
# Synthetic generator
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    n_source: int = 725
    n_target: int = 280
    d_common: int = 12
    d_source_only: int = 6
    d_target_only: int = 12
    missing_rate: float = 0.1
    latent_dim: int = 12
    label_noise: float = 0.05
    noise: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.n_source >= self.n_target >= 2:
            raise DataError("need n_source >= n_target >= 2")
        if not 0.0 <= self.missing_rate < 1.0:
            raise DataError("missing_rate must lie in [0, 1)")
        if not 0.0 <= self.label_noise <= 1.0:
            raise DataError("label_noise must lie in [0, 1]")
        if self.latent_dim < 1 or self.d_common < 1:
            raise DataError("need latent_dim >= 1 and d_common >= 1")


def _mask_mcar(rng, n, d, rate):
    if rate <= 0:
        return np.zeros((n, d), dtype=bool)
    mask = rng.random((n, d)) < rate
    # every feature keeps at least one observed cell
    for j in np.flatnonzero(mask.all(axis=0)):
        mask[rng.integers(n), j] = False
    return mask


def synth_generate(cfg: SynthConfig) -> tuple:
    """Draw a (source, target) pair sharing a latent factor and a labelling rule.

    Common features are noisy linear images of the latent through one shared
    loading matrix (plus a per-domain offset). Domain-specific features mix
    the latent through their own loadings with independent noise. Labels are
    the sign of a fixed linear functional of the latent, flipped with
    probability ``label_noise``. Cells are masked completely at random.
    """
    rng = np.random.default_rng(cfg.seed)
    L = cfg.latent_dim
    beta = rng.standard_normal(L)
    load_c = rng.standard_normal((L, cfg.d_common))
    load_s = rng.standard_normal((L, cfg.d_source_only))
    load_t = rng.standard_normal((L, cfg.d_target_only))
    shift = rng.standard_normal(cfg.d_common) * 0.5

    def draw(n, load_own, prefix, offset):
        z = rng.standard_normal((n, L))
        xc = z @ load_c + cfg.noise * rng.standard_normal((n, cfg.d_common)) + offset
        xo = z @ load_own + cfg.noise * rng.standard_normal((n, load_own.shape[1]))
        y = (z @ beta > 0).astype(np.int64)
        flip = rng.random(n) < cfg.label_noise
        y[flip] = 1 - y[flip]
        x = np.hstack([xc, xo])
        names = [f"c{j}" for j in range(cfg.d_common)] + \
                [f"{prefix}{j}" for j in range(load_own.shape[1])]
        mask = _mask_mcar(rng, n, x.shape[1], cfg.missing_rate)
        feats = []
        for j, nm in enumerate(names):
            obs = x[~mask[:, j], j]
            feats.append(FeatureMeta(nm, NUMERICAL, float(obs.min()), float(obs.max())))
        return Dataset(x, mask, y, feats)

    src = draw(cfg.n_source, load_s, "s", np.zeros(cfg.d_common))
    tgt = draw(cfg.n_target, load_t, "t", shift)
    return src, tgt
