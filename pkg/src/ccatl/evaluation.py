"""1NN classification, stratified folds and cross-validated baseline evaluation."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, harmonize
from .kernels import euclidean_matrix, knn_vote
from .transfer import Audit, TransferSettings, fit_transfer, parse_baseline

N_FOLDS = 5


def knn_classify(train_x, train_y, test_x, k: int = 1) -> np.ndarray:
    """Euclidean k-NN; distance ties go to the lower train index, vote ties to label 0."""
    train_x = np.atleast_2d(np.asarray(train_x, dtype=np.float64))
    test_x = np.atleast_2d(np.asarray(test_x, dtype=np.float64))
    if train_x.shape[0] == 0:
        raise ValueError("empty training set")
    if k < 1:
        raise ValueError("k must be >= 1")
    return knn_vote(euclidean_matrix(test_x, train_x), train_y, k)


def stratified_folds(labels, n_folds: int = N_FOLDS, seed: int = 0) -> list:
    """Shuffle within each class and deal rows round-robin into ``n_folds`` folds.

    Returns ``[(train_idx, test_idx), ...]`` with sorted index arrays.
    """
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if np.any(counts < n_folds):
        raise ValueError(f"class with {counts.min()} members is smaller than {n_folds} folds")
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in classes])
    fold_of = np.empty(labels.size, dtype=np.int64)
    fold_of[order] = np.arange(order.size) % n_folds
    idx = np.arange(labels.size)
    return [(idx[fold_of != f], idx[fold_of == f]) for f in range(n_folds)]


@dataclass(frozen=True, eq=False)
class EvalResult:
    baseline: str
    mean_accuracy: float
    std_dev: float
    fold_accuracies: np.ndarray
    seed: int

    def __eq__(self, other):
        return (isinstance(other, EvalResult) and self.baseline == other.baseline
                and self.seed == other.seed and self.mean_accuracy == other.mean_accuracy
                and self.std_dev == other.std_dev
                and np.array_equal(self.fold_accuracies, other.fold_accuracies))

    @classmethod
    def from_folds(cls, baseline, accs, seed):
        accs = np.asarray(accs, dtype=np.float64)
        std = float(np.std(accs, ddof=1)) if accs.size > 1 else 0.0
        return cls(baseline, float(np.mean(accs)), std, accs, seed)

    def cell(self) -> str:
        return f"{self.mean_accuracy!r}±{self.std_dev!r}"


def evaluate_baseline(source: Dataset, target: Dataset, baseline: str,
                      settings: TransferSettings = TransferSettings(), seed: int = 0,
                      audit_sink: list = None, n_folds: int = N_FOLDS) -> EvalResult:
    """Cross-validate one baseline over the target rows.

    In every fold the whole pipeline is fitted without the fold's test rows;
    the test rows are then embedded and classified by k-NN against the
    fitted training pool. When ``audit_sink`` is a list, one
    ``(test_row_ids, Audit)`` entry per fold is appended to it.
    """
    parse_baseline(baseline)
    source, target = harmonize(source, target)
    accs = []
    for f, (tr, te) in enumerate(stratified_folds(target.labels, n_folds, seed)):
        audit = Audit()
        fitted = fit_transfer(source, target.take(tr), baseline, settings, seed + f, audit)
        test = target.take(te)
        pred = knn_classify(fitted.train_x, fitted.train_y, fitted.embed(test), settings.k_classify)
        accs.append(float(np.mean(pred == test.labels)))
        if audit_sink is not None:
            audit_sink.append((set(int(i) for i in test.row_ids), audit))
    return EvalResult.from_folds(baseline, accs, seed)


def write_results_csv(rows, path):
    """Long-form results: ``transfer_id, baseline, seed, mean, std, fold_0..``."""
    rows = list(rows)
    n = max((len(r.fold_accuracies) for _, r in rows), default=N_FOLDS)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["transfer_id", "baseline", "seed", "mean_accuracy", "std_dev"]
                   + [f"fold_{i}" for i in range(n)])
        for tid, r in rows:
            w.writerow([tid, r.baseline, r.seed, repr(r.mean_accuracy), repr(r.std_dev)]
                       + [repr(float(a)) for a in r.fold_accuracies])
    tmp.replace(path)


def read_results_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            folds = [float(v) for k, v in r.items() if k.startswith("fold_") and v != ""]
            out.append((r["transfer_id"], EvalResult(r["baseline"], float(r["mean_accuracy"]),
                                                     float(r["std_dev"]), np.array(folds),
                                                     int(r["seed"]))))
    return out
