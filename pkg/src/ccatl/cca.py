"""Regularised linear CCA and kernel CCA."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .data import numerical_rank
from .kernels import euclidean_matrix

LINEAR = "Linear"
RBF = "Rbf"
DEFAULT_RHO = 1e-4
DEFAULT_KAPPA = 1e-3


class NumericalError(ArithmeticError):
    """A fit hit a singular, non-finite or otherwise unusable quantity."""


# --------------------------------------------------------------------------
# Generalised symmetric-definite eigenproblem
# --------------------------------------------------------------------------

def gen_eig_sym(A, B, r: int):
    """Top-``r`` solutions of ``A v = lam B v`` with ``B`` positive definite.

    Inputs are symmetrised first. Returns ``(eigvals, V)`` with eigenvalues
    non-increasing and columns of ``V`` B-orthonormal.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    p = A.shape[0]
    if A.shape != (p, p) or B.shape != (p, p):
        raise ValueError(f"shape mismatch: {A.shape}, {B.shape}")
    if not 1 <= r <= p:
        raise ValueError(f"r={r} outside [1, {p}]")
    A = (A + A.T) / 2
    B = (B + B.T) / 2
    if not (np.isfinite(A).all() and np.isfinite(B).all()):
        raise NumericalError("non-finite matrix entries")
    try:
        la.cholesky(B, lower=True)
    except la.LinAlgError:
        smallest = float(la.eigvalsh(B)[0])
        raise NumericalError(f"B is not positive definite (smallest eigenvalue {smallest:.3e})") from None
    vals, vecs = la.eigh(A, B, subset_by_index=(p - r, p - 1))
    return vals[::-1].copy(), vecs[:, ::-1].copy()


def _sign_fix(ws, wt, ref=None):
    """Flip component signs so the first significant entry of ``ref`` (default ``ws``) is positive."""
    ref = ws if ref is None else ref
    for c in range(ws.shape[1]):
        nz = np.flatnonzero(np.abs(ref[:, c]) > 1e-10)
        if nz.size and ref[nz[0], c] < 0:
            ws[:, c] *= -1
            wt[:, c] *= -1


def default_latent_dim(xs, xt) -> int:
    """Half the smaller numerical rank of the two views, at least 1."""
    return max(1, min(numerical_rank(xs), numerical_rank(xt)) // 2)


# --------------------------------------------------------------------------
# Linear CCA
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CcaModel:
    w_source: np.ndarray
    w_target: np.ndarray
    mu_source: np.ndarray
    mu_target: np.ndarray
    correlations: np.ndarray
    rho: float
    r: int


def _views(p):
    xs = np.asarray(p.source_rows, dtype=np.float64)
    xt = np.asarray(p.target_rows, dtype=np.float64)
    if xs.shape[0] != xt.shape[0]:
        raise ValueError("views are not row-aligned")
    if xs.shape[0] < 2:
        raise ValueError("need at least two paired rows")
    return xs, xt


def fit_linear_cca(p, r: int = None, rho: float = DEFAULT_RHO) -> CcaModel:
    """Fit ridge-regularised CCA on paired views.

    Solves the block generalised eigenproblem
    ``[[0, Sst], [Sts, 0]] v = lam diag(Ss + rho I, St + rho I) v`` with
    covariances normalised by the number of pairs, then rescales each view so
    ``w' (S + rho I) w = 1``.
    """
    xs, xt = _views(p)
    m = xs.shape[0]
    if r is None:
        r = default_latent_dim(xs, xt)
    ds, dt = xs.shape[1], xt.shape[1]
    if not 1 <= r <= min(ds, dt):
        raise ValueError(f"r={r} exceeds the available spectrum ({min(ds, dt)})")
    mu_s, mu_t = xs.mean(axis=0), xt.mean(axis=0)
    cs, ct = xs - mu_s, xt - mu_t
    if not np.any(cs) or not np.any(ct):
        raise NumericalError("a view is constant")
    Ss, St, Sst = cs.T @ cs / m, ct.T @ ct / m, cs.T @ ct / m
    Bs, Bt = Ss + rho * np.eye(ds), St + rho * np.eye(dt)
    A = np.zeros((ds + dt, ds + dt))
    A[:ds, ds:] = Sst
    A[ds:, :ds] = Sst.T
    lam, V = gen_eig_sym(A, la.block_diag(Bs, Bt), r)
    ws, wt = V[:ds].copy(), V[ds:].copy()
    ns = np.sqrt(np.einsum("ic,ij,jc->c", ws, Bs, ws))
    nt = np.sqrt(np.einsum("ic,ij,jc->c", wt, Bt, wt))
    if np.any(ns < 1e-12) or np.any(nt < 1e-12):
        raise NumericalError("r exceeds the number of non-degenerate canonical pairs")
    ws /= ns
    wt /= nt
    _sign_fix(ws, wt)
    return CcaModel(ws, wt, mu_s, mu_t, np.clip(lam, 0.0, 1.0), float(rho), int(r))


def transform_linear(m: CcaModel, rows, view: str) -> np.ndarray:
    if view not in ("source", "target"):
        raise ValueError(f"view must be 'source' or 'target', got {view!r}")
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    mu, w = (m.mu_source, m.w_source) if view == "source" else (m.mu_target, m.w_target)
    if rows.shape[1] != mu.shape[0]:
        raise ValueError(f"row width {rows.shape[1]} != {mu.shape[0]}")
    return (rows - mu) @ w


# --------------------------------------------------------------------------
# Kernel CCA
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelSpec:
    tag: str = LINEAR
    gamma: float = None

    def __post_init__(self):
        if self.tag not in (LINEAR, RBF):
            raise ValueError(f"unknown kernel {self.tag!r}")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be > 0")

    def resolve(self, x) -> "KernelSpec":
        """Fill an unset Rbf bandwidth with the median heuristic on ``x``."""
        if self.tag == RBF and self.gamma is None:
            return KernelSpec(RBF, median_gamma(x))
        return self

    def gram(self, a, b) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if self.tag == LINEAR:
            return a @ b.T
        if self.gamma is None:
            raise ValueError("Rbf kernel needs a resolved gamma")
        d = euclidean_matrix(a, b)
        return np.exp(-self.gamma * d * d)


def median_gamma(x) -> float:
    """1 / median pairwise squared distance (off-diagonal, non-zero)."""
    x = np.asarray(x, dtype=np.float64)
    d = euclidean_matrix(x, x)
    sq = (d * d)[np.triu_indices(x.shape[0], k=1)]
    sq = sq[sq > 0]
    return 1.0 / float(np.median(sq)) if sq.size else 1.0


@dataclass(frozen=True, eq=False)
class KccaModel:
    alpha_source: np.ndarray
    alpha_target: np.ndarray
    train_source: np.ndarray
    train_target: np.ndarray
    kernel_source: KernelSpec
    kernel_target: KernelSpec
    kappa: float
    correlations: np.ndarray
    r: int
    # column means and grand mean of the uncentred training Gram matrices
    colmean_source: np.ndarray = None
    colmean_target: np.ndarray = None
    mean_source: float = 0.0
    mean_target: float = 0.0


def center_gram(G) -> np.ndarray:
    """``H G H`` with ``H = I - 11'/n``."""
    G = np.asarray(G, dtype=np.float64)
    return G - G.mean(axis=0)[None, :] - G.mean(axis=1)[:, None] + G.mean()


def matched_kappa(rho: float, m: int) -> float:
    """Kernel regulariser that reproduces linear CCA with ridge ``rho`` on ``m`` pairs."""
    return rho * m


def _range_basis(Gc):
    lam, Q = la.eigh((Gc + Gc.T) / 2)
    keep = lam > 1e-10 * max(lam[-1], 0.0)
    if not keep.any():
        raise NumericalError("centred Gram matrix is zero")
    return lam[keep], Q[:, keep]


def fit_kernel_cca(p, r: int = None, kernel: KernelSpec = KernelSpec(),
                   kappa: float = DEFAULT_KAPPA) -> KccaModel:
    """Fit kernel CCA in the dual.

    Gram matrices are centred, and each view's constraint uses the
    regularised form ``(G^2 + kappa G) / m``. The problem is solved on the
    range of each centred Gram matrix, where the constraint is definite.
    Dual coefficients are scaled so that ``alpha' (G^2 + kappa G) alpha / m = 1``;
    with a linear kernel and ``kappa = m * rho`` this equals linear CCA with
    ridge ``rho``.
    """
    if not kappa > 0:
        raise ValueError("kappa must be > 0")
    xs, xt = _views(p)
    m = xs.shape[0]
    if r is None:
        r = default_latent_dim(xs, xt)
    ks, kt = kernel.resolve(xs), kernel.resolve(xt)
    Gs, Gt = ks.gram(xs, xs), kt.gram(xt, xt)
    if not (np.isfinite(Gs).all() and np.isfinite(Gt).all()):
        raise NumericalError("Gram matrix is not finite")
    ls, Qs = _range_basis(center_gram(Gs))
    lt, Qt = _range_basis(center_gram(Gt))
    ns, nt = ls.size, lt.size
    if not 1 <= r <= min(ns, nt):
        raise ValueError(f"r={r} exceeds the available spectrum ({min(ns, nt)})")
    cross = (ls[:, None] * (Qs.T @ Qt) * lt[None, :]) / m
    A = np.zeros((ns + nt, ns + nt))
    A[:ns, ns:] = cross
    A[ns:, :ns] = cross.T
    B = np.diag(np.concatenate([ls * ls + kappa * ls, lt * lt + kappa * lt]) / m)
    lam, V = gen_eig_sym(A, B, r)
    bs, bt = V[:ns].copy(), V[ns:].copy()
    norm_s = np.sqrt(np.einsum("ic,i,ic->c", bs, (ls * ls + kappa * ls) / m, bs))
    norm_t = np.sqrt(np.einsum("ic,i,ic->c", bt, (lt * lt + kappa * lt) / m, bt))
    if np.any(norm_s < 1e-12) or np.any(norm_t < 1e-12):
        raise NumericalError("r exceeds the number of non-degenerate canonical pairs")
    a_s = Qs @ (bs / norm_s)
    a_t = Qt @ (bt / norm_t)
    # a linear kernel has primal weights, so use the same convention as linear CCA
    _sign_fix(a_s, a_t, (xs - xs.mean(axis=0)).T @ a_s if ks.tag == LINEAR else None)
    return KccaModel(
        alpha_source=a_s, alpha_target=a_t,
        train_source=xs.copy(), train_target=xt.copy(),
        kernel_source=ks, kernel_target=kt, kappa=float(kappa),
        correlations=np.clip(lam, 0.0, 1.0), r=int(r),
        colmean_source=Gs.mean(axis=0), colmean_target=Gt.mean(axis=0),
        mean_source=float(Gs.mean()), mean_target=float(Gt.mean()),
    )


def transform_kernel(m: KccaModel, rows, view: str) -> np.ndarray:
    """Project rows through the dual coefficients with training-set centring."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if view == "source":
        train, k, a, cm, gm = m.train_source, m.kernel_source, m.alpha_source, m.colmean_source, m.mean_source
    elif view == "target":
        train, k, a, cm, gm = m.train_target, m.kernel_target, m.alpha_target, m.colmean_target, m.mean_target
    else:
        raise ValueError(f"view must be 'source' or 'target', got {view!r}")
    if rows.shape[1] != train.shape[1]:
        raise ValueError(f"row width {rows.shape[1]} != {train.shape[1]}")
    K = k.gram(rows, train)
    Kc = K - K.mean(axis=1)[:, None] - cm[None, :] + gm
    return Kc @ a
