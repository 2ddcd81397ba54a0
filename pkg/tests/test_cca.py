import numpy as np
import pytest
from scipy import optimize

from ccatl.cca import (LINEAR, RBF, KernelSpec, NumericalError, center_gram, fit_kernel_cca,
                       fit_linear_cca, gen_eig_sym, matched_kappa, transform_kernel,
                       transform_linear)
from ccatl.evaluation import knn_classify

from conftest import views

# 8 paired rows, 2 features per view
XS8 = np.array([[0.3, 1.2], [1.1, 0.4], [-0.7, 0.9], [2.0, -0.3],
                [0.5, 0.5], [-1.2, -0.8], [0.9, 1.7], [-0.4, -1.1]])
XT8 = np.array([[0.8, 0.1], [0.9, -0.6], [-0.2, 1.0], [1.7, -1.0],
                [0.3, 0.2], [-1.5, 0.4], [1.6, 0.9], [-0.9, -0.2]])


def pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    return float(a @ b / np.sqrt((a @ a) * (b @ b)))


def direct_max_corr(xs, xt):
    """Maximise corr(xs w_s, xt w_t) over unit vectors in 2-D by angle grid then refinement."""
    th = np.linspace(0, np.pi, 721)
    W = np.stack([np.cos(th), np.sin(th)])
    ps = xs @ W
    pt = xt @ W
    ps = (ps - ps.mean(0)) / np.linalg.norm(ps - ps.mean(0), axis=0)
    pt = (pt - pt.mean(0)) / np.linalg.norm(pt - pt.mean(0), axis=0)
    C = np.abs(ps.T @ pt)
    i, j = np.unravel_index(np.argmax(C), C.shape)

    def neg(a):
        ws = np.array([np.cos(a[0]), np.sin(a[0])])
        wt = np.array([np.cos(a[1]), np.sin(a[1])])
        return -abs(pearson(xs @ ws, xt @ wt))

    res = optimize.minimize(neg, [th[i], th[j]], method="Nelder-Mead",
                            options=dict(xatol=1e-10, fatol=1e-14))
    return -res.fun


def product_form(xs, xt, rho):
    m = xs.shape[0]
    cs, ct = xs - xs.mean(0), xt - xt.mean(0)
    Ss = cs.T @ cs / m + rho * np.eye(xs.shape[1])
    St = ct.T @ ct / m + rho * np.eye(xt.shape[1])
    Sst = cs.T @ ct / m
    M = np.linalg.solve(Ss, Sst) @ np.linalg.solve(St, Sst.T)
    ev = np.sort(np.linalg.eigvals(M).real)[::-1]
    return np.sqrt(np.clip(ev, 0, None))


# -- gen_eig_sym -------------------------------------------------------------

def test_gen_eig_identity_b():
    lam, V = gen_eig_sym(np.diag([3.0, 1.0]), np.eye(2), 1)
    assert lam[0] == pytest.approx(3.0)
    assert abs(V[0, 0]) == pytest.approx(1.0) and V[1, 0] == pytest.approx(0.0)


def test_gen_eig_a_equals_b(rng):
    x = rng.standard_normal((6, 4))
    B = x.T @ x + np.eye(4)
    lam, _ = gen_eig_sym(B, B, 4)
    np.testing.assert_allclose(lam, 1.0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_gen_eig_residual(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((5, 5))
    b = rng.standard_normal((5, 5))
    A = a + a.T
    B = b @ b.T + 0.5 * np.eye(5)
    lam, V = gen_eig_sym(A, B, 5)
    assert np.all(np.diff(lam) <= 0)
    for k in range(5):
        v = V[:, k]
        assert np.max(np.abs(A @ v - lam[k] * B @ v)) < 1e-8
        assert v @ B @ v == pytest.approx(1.0, abs=1e-10)


def test_gen_eig_not_pd():
    with pytest.raises(NumericalError, match="smallest eigenvalue"):
        gen_eig_sym(np.eye(2), np.diag([1.0, -1.0]), 1)


def test_gen_eig_symmetrizes():
    A = np.array([[2.0, 1.0], [0.0, 2.0]])
    lam, _ = gen_eig_sym(A, np.eye(2), 2)
    np.testing.assert_allclose(lam, [2.5, 1.5])


# -- linear CCA --------------------------------------------------------------

def test_grid_oracle_8x2():
    m = fit_linear_cca(views(XS8, XT8), r=1, rho=1e-8)
    assert m.correlations[0] == pytest.approx(direct_max_corr(XS8, XT8), abs=1e-4)


@pytest.mark.parametrize("rho", [0.0, 1e-3, 0.1])
def test_matches_product_form(rng, rho):
    xs = rng.standard_normal((40, 4))
    xt = xs[:, :3] @ rng.standard_normal((3, 3)) + 0.5 * rng.standard_normal((40, 3))
    m = fit_linear_cca(views(xs, xt), r=3, rho=rho)
    np.testing.assert_allclose(m.correlations, product_form(xs, xt, rho)[:3], atol=1e-8)


def test_copy_and_negation(rng):
    x = rng.standard_normal((30, 4))
    m = fit_linear_cca(views(x, x.copy()), r=4, rho=1e-8)
    assert np.all(m.correlations >= 1 - 1e-4)
    x1 = rng.standard_normal((20, 1))
    m = fit_linear_cca(views(x1, -x1), r=1, rho=1e-8)
    assert m.correlations[0] == pytest.approx(1.0, abs=1e-6)


def _fixture(rng, m=60):
    z = rng.standard_normal((m, 2))
    xs = np.hstack([z, rng.standard_normal((m, 2))]) + 0.2 * rng.standard_normal((m, 4))
    xt = np.hstack([z @ rng.standard_normal((2, 2)), rng.standard_normal((m, 1))])
    return xs, xt + 0.2 * rng.standard_normal(xt.shape)


def test_model_invariants(rng):
    xs, xt = _fixture(rng)
    rho = 1e-3
    m = fit_linear_cca(views(xs, xt), r=3, rho=rho)
    assert np.all(np.diff(m.correlations) <= 0)
    assert np.all((m.correlations >= 0) & (m.correlations <= 1))
    for x, w in ((xs, m.w_source), (xt, m.w_target)):
        c = x - x.mean(0)
        B = c.T @ c / len(x) + rho * np.eye(x.shape[1])
        np.testing.assert_allclose(w.T @ B @ w, np.eye(3), atol=1e-6)
    first = m.w_source[np.argmax(np.abs(m.w_source) > 1e-10, axis=0), np.arange(3)]
    assert np.all(first > 0)


def test_transform_examples(rng):
    xs, xt = _fixture(rng)
    m = fit_linear_cca(views(xs, xt), r=2, rho=1e-10)
    np.testing.assert_allclose(transform_linear(m, np.tile(m.mu_source, (3, 1)), "source"), 0.0)
    zs, zt = transform_linear(m, xs, "source"), transform_linear(m, xt, "target")
    np.testing.assert_allclose(zs.var(axis=0), 1.0, atol=1e-6)
    np.testing.assert_allclose(zt.var(axis=0), 1.0, atol=1e-6)
    for k in range(2):
        assert pearson(zs[:, k], zt[:, k]) == pytest.approx(m.correlations[k], abs=1e-6)
    off = np.corrcoef(zs.T)[0, 1]
    assert abs(off) < 1e-6
    with pytest.raises(ValueError):
        transform_linear(m, xs[:, :2], "source")
    with pytest.raises(ValueError):
        transform_linear(m, xs, "middle")


def test_affine_invariance(rng):
    xs, xt = _fixture(rng)
    A = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    base = fit_linear_cca(views(xs, xt), r=2, rho=1e-10).correlations
    moved = fit_linear_cca(views(xs, xt @ A + 7.0), r=2, rho=1e-10).correlations
    np.testing.assert_allclose(moved, base, atol=1e-6)


def test_rho_shrinkage(rng):
    xs, xt = _fixture(rng)
    tops = [fit_linear_cca(views(xs, xt), r=1, rho=r).correlations[0]
            for r in (0.0, 1e-4, 1e-2, 1e-1, 1.0, 10.0)]
    assert all(b <= a + 1e-12 for a, b in zip(tops, tops[1:]))


def test_linear_errors(rng):
    xs, xt = _fixture(rng)
    with pytest.raises(ValueError):
        fit_linear_cca(views(xs, xt), r=5)
    with pytest.raises(NumericalError):
        fit_linear_cca(views(np.ones((10, 2)), xt[:10]), r=1)


def test_default_r_is_half_rank(rng):
    xs, xt = _fixture(rng)
    assert fit_linear_cca(views(xs, xt)).r == 1  # min(4, 3) // 2
    xs6 = rng.standard_normal((50, 6))
    assert fit_linear_cca(views(xs6, xs6 @ rng.standard_normal((6, 5)))).r == 2


# -- kernel CCA --------------------------------------------------------------

def test_linear_kernel_matches_linear_cca(rng):
    xs, xt = _fixture(rng)
    rho = 1e-3
    lin = fit_linear_cca(views(xs, xt), r=3, rho=rho)
    ker = fit_kernel_cca(views(xs, xt), r=3, kernel=KernelSpec(LINEAR),
                         kappa=matched_kappa(rho, len(xs)))
    np.testing.assert_allclose(ker.correlations, lin.correlations, atol=1e-8)
    np.testing.assert_allclose(transform_kernel(ker, xs, "source"),
                               transform_linear(lin, xs, "source"), atol=1e-8)


def test_kernel_transform_consistency(rng):
    xs, xt = _fixture(rng)
    ker = fit_kernel_cca(views(xs, xt), r=2, kernel=KernelSpec(RBF), kappa=1e-2)
    Gs = center_gram(ker.kernel_source.gram(xs, xs))
    np.testing.assert_allclose(transform_kernel(ker, xs, "source"), Gs @ ker.alpha_source, atol=1e-8)
    one = transform_kernel(ker, xs[4], "source")
    np.testing.assert_allclose(one[0], (Gs @ ker.alpha_source)[4], atol=1e-8)


def test_linear_kernel_primal_identity(rng):
    xs, xt = _fixture(rng)
    ker = fit_kernel_cca(views(xs, xt), r=2, kernel=KernelSpec(LINEAR), kappa=0.05)
    w = (xs - xs.mean(0)).T @ ker.alpha_source
    new = rng.standard_normal((7, 4))
    np.testing.assert_allclose(transform_kernel(ker, new, "source"), (new - xs.mean(0)) @ w, atol=1e-6)


def test_identical_views_kernel(rng):
    x = rng.standard_normal((40, 3))
    ker = fit_kernel_cca(views(x, x.copy()), r=1, kernel=KernelSpec(LINEAR), kappa=1e-6)
    assert ker.correlations[0] >= 0.999


def test_rbf_beats_linear_on_square():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (80, 1))
    y = x ** 2
    lin = fit_linear_cca(views(x, y), r=1, rho=1e-4).correlations[0]
    rbf = fit_kernel_cca(views(x, y), r=1, kernel=KernelSpec(RBF), kappa=1e-2).correlations[0]
    assert rbf > lin + 0.3


def test_linear_kernel_same_1nn_decisions(rng):
    xs, xt = _fixture(rng, m=80)
    y = (xs[:, 0] > 0).astype(int)
    rho = 1e-4
    lin = fit_linear_cca(views(xs, xt), r=2, rho=rho)
    ker = fit_kernel_cca(views(xs, xt), r=2, kernel=KernelSpec(LINEAR), kappa=matched_kappa(rho, 80))
    test = rng.standard_normal((50, 3))
    a = knn_classify(transform_linear(lin, xt, "target"), y, transform_linear(lin, test, "target"))
    b = knn_classify(transform_kernel(ker, xt, "target"), y, transform_kernel(ker, test, "target"))
    np.testing.assert_array_equal(a, b)


def test_kernel_errors(rng):
    xs, xt = _fixture(rng)
    with pytest.raises(ValueError):
        fit_kernel_cca(views(xs, xt), r=1, kappa=0.0)
    with pytest.raises(ValueError):
        KernelSpec(RBF, gamma=-1.0)
    with pytest.raises(ValueError):
        KernelSpec("Poly")
    ker = fit_kernel_cca(views(xs, xt), r=1)
    with pytest.raises(ValueError):
        transform_kernel(ker, xs[:, :2], "source")
