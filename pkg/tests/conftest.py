import numpy as np
import pytest

from ccatl.data import CATEGORICAL, NUMERICAL, Dataset, FeatureMeta
from ccatl.pairing import PairedViews


def num(name, lo=0.0, hi=1.0):
    return FeatureMeta(name, NUMERICAL, lo, hi)


def cat(name, k):
    return FeatureMeta(name, CATEGORICAL, levels=tuple(str(i) for i in range(k)))


def make_dataset(values, labels=None, features=None, missing=None, row_ids=None):
    """Numerical dataset whose ranges are taken from the observed cells."""
    values = np.asarray(values, dtype=np.float64)
    if missing is None:
        missing = np.isnan(values)
    n, d = values.shape
    if features is None:
        features = []
        for j in range(d):
            obs = values[~missing[:, j], j]
            features.append(num(f"f{j}", float(obs.min()), float(obs.max())))
    if labels is None:
        labels = np.zeros(n, dtype=np.int64)
    return Dataset(values, missing, labels, features, row_ids)


def views(xs, xt, labels=None):
    xs = np.asarray(xs, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    m = xs.shape[0]
    labels = np.zeros(m, dtype=np.int64) if labels is None else np.asarray(labels)
    idx = np.arange(m)
    return PairedViews(xs, xt, labels, idx, idx, np.zeros(m), np.zeros(m, dtype=np.int64))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
