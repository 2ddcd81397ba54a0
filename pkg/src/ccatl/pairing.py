"""Nearest pairing of target rows to distinct source rows."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DataError
from .impute import UnifiedPair
from .kernels import euclidean_matrix, pair_rounds


@dataclass(frozen=True, eq=False)
class PairedViews:
    """Row-aligned source/target matrices.

    ``source_ids``/``target_ids`` are positions in the unified source and
    target datasets; ``rounds`` records in which matching round each pair was
    settled.
    """

    source_rows: np.ndarray
    target_rows: np.ndarray
    labels: np.ndarray
    source_ids: np.ndarray
    target_ids: np.ndarray
    distances: np.ndarray
    rounds: np.ndarray

    @property
    def pair_index(self) -> list:
        return list(zip(self.source_ids.tolist(), self.target_ids.tolist()))

    def __len__(self):
        return self.source_rows.shape[0]


def distance_matrix(u: UnifiedPair) -> np.ndarray:
    """Euclidean distances, source rows by target rows."""
    return euclidean_matrix(u.source.values, u.target.values)


def nearest_pairing(u: UnifiedPair, supervised: bool = True) -> PairedViews:
    """Pair each target row with a distinct nearest source row.

    Rounds: every open target picks its nearest open source; a source claimed
    by several targets goes to the closest (then lowest-index) target and the
    others retry next round. With ``supervised`` the matching runs separately
    inside each label class.
    """
    src, tgt = u.source, u.target
    if src.missing.any() or tgt.missing.any():
        raise DataError("pairing needs fully imputed inputs")
    n, m = src.n_rows, tgt.n_rows
    if m > n:
        raise DataError(f"{m} target rows but only {n} source rows")
    dist = distance_matrix(u)
    match = np.full(m, -1, dtype=np.int64)
    rnd = np.full(m, -1, dtype=np.int64)
    if supervised:
        for c in (0, 1):
            si = np.flatnonzero(src.labels == c)
            ti = np.flatnonzero(tgt.labels == c)
            if ti.size == 0:
                continue
            if ti.size > si.size:
                raise DataError(f"class {c}: {ti.size} target rows but {si.size} source rows")
            mc, rc = pair_rounds(dist[np.ix_(si, ti)])
            match[ti] = si[mc]
            rnd[ti] = rc
    else:
        match, rnd = pair_rounds(dist)
    tids = np.arange(m)
    return PairedViews(
        source_rows=src.values[match],
        target_rows=tgt.values.copy(),
        labels=tgt.labels.copy(),
        source_ids=match,
        target_ids=tids,
        distances=dist[match, tids],
        rounds=rnd,
    )


def write_pairs_csv(p: PairedViews, path, source_row_ids=None, target_row_ids=None):
    """Write the pairing audit: one ``source_id,target_id,distance`` line per pair.

    Ids default to positions; pass the datasets' ``row_ids`` to map back to
    input rows.
    """
    sid = p.source_ids if source_row_ids is None else np.asarray(source_row_ids)[p.source_ids]
    tid = p.target_ids if target_row_ids is None else np.asarray(target_row_ids)[p.target_ids]
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source_id", "target_id", "distance"])
        for s, t, d in zip(sid.tolist(), tid.tolist(), p.distances.tolist()):
            w.writerow([s, t, repr(d)])
    tmp.replace(path)


def read_pairs_csv(path) -> list:
    with open(path, newline="") as fh:
        return [(int(r["source_id"]), int(r["target_id"]), float(r["distance"]))
                for r in csv.DictReader(fh)]
