import dataclasses

import numpy as np
import pytest

from ccatl.cca import RBF, KernelSpec, fit_kernel_cca, fit_linear_cca, transform_kernel, transform_linear
from ccatl.dcca import DccaTrainConfig, train_dcca, transform_deep
from ccatl.serialize import load_model, read_trace_csv, save_model, write_trace_csv

from conftest import views


def same(a, b):
    """Field-by-field bit equality of two model dataclasses."""
    assert type(a) is type(b)
    for f in dataclasses.fields(a):
        x, y = getattr(a, f.name), getattr(b, f.name)
        if isinstance(x, np.ndarray):
            assert x.dtype == y.dtype and x.tobytes() == y.tobytes(), f.name
        elif dataclasses.is_dataclass(x):
            same(x, y)
        elif isinstance(x, tuple):
            assert len(x) == len(y)
            for u, v in zip(x, y):
                assert np.asarray(u).tobytes() == np.asarray(v).tobytes()
        else:
            assert x == y, f.name


@pytest.fixture
def pv(rng):
    z = rng.standard_normal((40, 2))
    xs = np.hstack([z, rng.standard_normal((40, 2))])
    xt = np.hstack([z @ rng.standard_normal((2, 2)), rng.standard_normal((40, 1))])
    return views(xs, xt), xs, xt


def test_linear_round_trip(tmp_path, pv):
    p, xs, xt = pv
    m = fit_linear_cca(p, rho=1e-4)
    save_model(m, tmp_path / "m.npz")
    back = load_model(tmp_path / "m.npz")
    same(m, back)
    assert transform_linear(back, xs, "source").tobytes() == transform_linear(m, xs, "source").tobytes()


@pytest.mark.parametrize("kernel", [KernelSpec(), KernelSpec(RBF), KernelSpec(RBF, 0.3)])
def test_kernel_round_trip(tmp_path, pv, kernel):
    p, xs, xt = pv
    m = fit_kernel_cca(p, kernel=kernel)
    save_model(m, tmp_path / "k.npz")
    back = load_model(tmp_path / "k.npz")
    same(m, back)
    assert transform_kernel(back, xt, "target").tobytes() == transform_kernel(m, xt, "target").tobytes()


@pytest.mark.parametrize("aligned", [True, False])
def test_deep_round_trip(tmp_path, pv, aligned):
    p, xs, xt = pv
    m = train_dcca(p, DccaTrainConfig(epochs=5, learning_rate=0.5, widths=(6,), r=2))
    if not aligned:
        m = dataclasses.replace(m, projection=None)
    save_model(m, tmp_path / "d.npz")
    back = load_model(tmp_path / "d.npz")
    same(m, back)
    for view, x in (("source", xs), ("target", xt)):
        assert transform_deep(back, x, view, aligned=aligned).tobytes() == \
            transform_deep(m, x, view, aligned=aligned).tobytes()


def test_trace_csv(tmp_path, pv):
    m = train_dcca(pv[0], DccaTrainConfig(epochs=7, learning_rate=0.5, widths=(6,), r=2))
    write_trace_csv(m, tmp_path / "t.csv")
    back = read_trace_csv(tmp_path / "t.csv")
    assert back.tobytes() == m.trace.tobytes() and back.size == 7


def test_no_pickle_and_bad_kind(tmp_path):
    with pytest.raises(TypeError):
        save_model(object(), tmp_path / "x.npz")
    np.savez(tmp_path / "y.npz", __kind__=np.array("svm"))
    with pytest.raises(ValueError):
        load_model(tmp_path / "y.npz")
