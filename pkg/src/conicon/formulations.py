"""Conic reformulations of the estimators.

Every builder returns a :class:`~conicon.problem.ConicProblem` with a frozen
variable layout, and each has a matching ``decode_*`` helper that reads the
parameters back out of the solver's ``x`` by position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .panel import PanelData, within_demean
from .problem import ConicProblem, QuadCone, SeparableTerm, TermKind

inf = np.inf


@dataclass(frozen=True, eq=False)
class DesignData:
    """Regression data: ``X`` is (n, p), dense or scipy-sparse; ``y`` is (n,)."""

    X: object
    y: np.ndarray

    def __post_init__(self):
        X = self.X
        if sp.issparse(X):
            X = sp.csc_matrix(X, dtype=float)
            vals = X.data
        else:
            X = np.atleast_2d(np.asarray(X, dtype=float))
            vals = X
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.shape[0] != y.size:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.size} entries")
        if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(y))):
            raise ValueError("design data contains NaN or inf")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def block(self) -> sp.csc_matrix:
        return sp.csc_matrix(self.X)

    def dense(self) -> np.ndarray:
        return self.X.toarray() if sp.issparse(self.X) else self.X


def _check_lambda(lam):
    if not lam >= 0:
        raise ValueError(f"tuning parameter must be >= 0, got {lam}")


# -- Lasso -------------------------------------------------------------------

def lasso_conic(data: DesignData, lam: float) -> ConicProblem:
    """``min ||y - X b||^2 / n + lam ||b||_1`` as an SOCP.

    Layout ``(b+ [p], b- [p], v [n], t, s, r)`` with ``v = y - X b``,
    ``s = (t - 1) / 2``, ``r = (t + 1) / 2`` and the cone ``r >= ||(v, s)||``.
    """
    _check_lambda(lam)
    n, p = data.n, data.p
    if n < 1 or p < 1:
        raise ValueError("need n >= 1 and p >= 1")
    X = data.block()
    c = np.concatenate([np.full(2 * p, float(lam)), np.zeros(n), [1.0 / n, 0.0, 0.0]])
    top = sp.hstack([X, -X, sp.eye(n), sp.csc_matrix((n, 3))])
    tail = sp.hstack([sp.csc_matrix((2, 2 * p + n)),
                      sp.csc_matrix(np.array([[-0.5, 1.0, 0.0], [-0.5, 0.0, 1.0]]))])
    A = sp.vstack([top, tail]).tocsc()
    rhs = np.concatenate([data.y, [-0.5, 0.5]])
    blx = np.concatenate([np.zeros(2 * p), np.full(n, -inf), [0.0, -inf, -inf]])
    bux = np.full(2 * p + n + 3, inf)
    t = 2 * p + n
    cone = QuadCone([t + 2, *range(2 * p, 2 * p + n), t + 1])
    return ConicProblem(c=c, A=A, blc=rhs, buc=rhs.copy(), blx=blx, bux=bux, cones=[cone])


def decode_lasso(x, p: int) -> np.ndarray:
    x = np.asarray(x)
    return x[:p] - x[p:2 * p]


def lasso_objective(data: DesignData, lam: float, beta) -> float:
    r = data.y - data.X @ beta
    return float(r @ r / data.n + lam * np.abs(beta).sum())


# -- Dantzig selector ----------------------------------------------------------

def dantzig_lp(data: DesignData, lam: float) -> ConicProblem:
    """``min ||b||_1`` s.t. ``||X'(y - X b)||_inf <= lam`` as an LP over ``(b+, b-)``."""
    _check_lambda(lam)
    p = data.p
    if p < 1:
        raise ValueError("need p >= 1")
    Xd = data.dense()
    XtX = Xd.T @ Xd
    Xty = Xd.T @ data.y
    A = np.hstack([XtX, -XtX])
    return ConicProblem(c=np.ones(2 * p), A=A, blc=Xty - lam, buc=Xty + lam,
                        blx=np.zeros(2 * p), bux=np.full(2 * p, inf))


decode_dantzig = decode_lasso


def dantzig_objective(beta) -> float:
    return float(np.abs(beta).sum())


# -- C-Lasso substep -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SubstepInput:
    """Data of one C-Lasso substep: shrink every unit toward center ``k``.

    ``gamma[i]`` multiplies unit ``i``'s penalty; the caller forms it from the
    other centers (``alpha_others`` is carried only for bookkeeping).
    """

    panel: PanelData
    k: int
    gamma: np.ndarray
    lam: float
    alpha_others: np.ndarray | None = None

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float).reshape(-1)
        object.__setattr__(self, "gamma", g)
        if g.size != self.panel.n:
            raise ValueError(f"gamma has length {g.size}, expected {self.panel.n}")
        if not np.all(np.isfinite(g)):
            raise ValueError("gamma must be finite")
        if np.any(g < 0):
            raise ValueError("gamma must be nonnegative")
        _check_lambda(self.lam)


@dataclass(frozen=True)
class SubstepLayout:
    """Column offsets of the substep program.

    Order: ``beta [n p] | nu [n T] | mu [n p] | alpha [p] | s [n] | r [n] |
    t [n] | w [n]``.
    """

    n: int
    T: int
    p: int

    @property
    def beta(self) -> int:
        return 0

    @property
    def nu(self) -> int:
        return self.n * self.p

    @property
    def mu(self) -> int:
        return self.n * (self.p + self.T)

    @property
    def alpha(self) -> int:
        return self.n * (2 * self.p + self.T)

    @property
    def s(self) -> int:
        return self.alpha + self.p

    @property
    def r(self) -> int:
        return self.s + self.n

    @property
    def t(self) -> int:
        return self.s + 2 * self.n

    @property
    def w(self) -> int:
        return self.s + 3 * self.n

    @property
    def size(self) -> int:
        return self.s + 4 * self.n


def classo_substep_conic(inp: SubstepInput) -> ConicProblem:
    panel = inp.panel
    if not panel.demeaned:
        panel = within_demean(panel)
    n, T, p = panel.n, panel.T, panel.p
    L = SubstepLayout(n, T, p)
    N = L.size
    c = np.zeros(N)
    c[L.t:L.t + n] = 1.0 / (n * T)
    c[L.w:L.w + n] = inp.lam * inp.gamma / n

    rows, cols, vals = [], [], []
    # x_i beta_i + nu_i = y_i
    r_idx = np.arange(n * T).reshape(n, T)
    for j in range(p):
        rows.append(r_idx.ravel())
        cols.append(np.repeat(L.beta + np.arange(n) * p + j, T))
        vals.append(panel.x[:, :, j].ravel())
    rows.append(np.arange(n * T))
    cols.append(L.nu + np.arange(n * T))
    vals.append(np.ones(n * T))
    off = n * T
    # beta_i - mu_i - alpha = 0
    k = np.arange(n * p)
    rows += [off + k, off + k, off + k]
    cols += [L.beta + k, L.mu + k, L.alpha + np.tile(np.arange(p), n)]
    vals += [np.ones(n * p), -np.ones(n * p), -np.ones(n * p)]
    off += n * p
    # s_i - t_i / 2 = -1/2 ; r_i - t_i / 2 = 1/2
    i = np.arange(n)
    rows += [off + i, off + i, off + n + i, off + n + i]
    cols += [L.s + i, L.t + i, L.r + i, L.t + i]
    vals += [np.ones(n), -0.5 * np.ones(n), np.ones(n), -0.5 * np.ones(n)]
    m = off + 2 * n
    A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(m, N))
    rhs = np.concatenate([panel.y.ravel(), np.zeros(n * p), np.full(n, -0.5), np.full(n, 0.5)])
    blx = np.full(N, -inf)
    blx[L.t:L.t + n] = 0.0
    cones = []
    for u in range(n):
        cones.append(QuadCone([L.r + u, *range(L.nu + u * T, L.nu + (u + 1) * T), L.s + u]))
        cones.append(QuadCone([L.w + u, *range(L.mu + u * p, L.mu + (u + 1) * p)]))
    return ConicProblem(c=c, A=A, blc=rhs, buc=rhs.copy(), blx=blx, bux=np.full(N, inf),
                        cones=cones)


def decode_substep(x, n: int, T: int, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(beta (n, p), alpha (p,))``."""
    L = SubstepLayout(n, T, p)
    x = np.asarray(x)
    return x[: n * p].reshape(n, p).copy(), x[L.alpha:L.alpha + p].copy()


def substep_objective(panel: PanelData, gamma, lam, beta, alpha) -> float:
    panel = panel if panel.demeaned else within_demean(panel)
    resid = panel.y - np.einsum("itp,ip->it", panel.x, beta)
    n, T = panel.n, panel.T
    pen = np.linalg.norm(beta - alpha[None, :], axis=1)
    return float((resid ** 2).sum() / (n * T) + lam / n * np.dot(gamma, pen))


# -- REL inner problem -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MomentMatrix:
    """Standardized moments ``H[i, j] = g_j(Z_i, b) / sigma_j``."""

    H: np.ndarray
    sigma: np.ndarray

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[1]


def moment_matrix(g) -> MomentMatrix:
    """Standardize each column of the raw moments ``g`` (n, m) by its sample
    standard deviation (denominator n - 1)."""
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] < 2:
        raise ValueError("moments must be an (n, m) array with n >= 2")
    sigma = g.std(axis=0, ddof=1)
    if np.any(~(sigma > 0)):
        bad = np.flatnonzero(~(sigma > 0))
        raise ValueError(f"moment columns {bad.tolist()} have zero sample variance")
    return MomentMatrix(H=g / sigma, sigma=sigma)


def rel_inner_conic(H: MomentMatrix, lam: float) -> ConicProblem:
    """``max sum log pi`` over the simplex with ``|sum_i pi_i h_ij| <= lam``."""
    _check_lambda(lam)
    n, m = H.n, H.m
    A = np.vstack([np.ones((1, n)), H.H.T])
    blc = np.concatenate([[1.0], np.full(m, -float(lam))])
    buc = np.concatenate([[1.0], np.full(m, float(lam))])
    terms = [SeparableTerm(TermKind.LOG, i, 1.0, 1.0, 0.0) for i in range(n)]
    return ConicProblem(sense="max", c=np.zeros(n), A=A, blc=blc, buc=buc,
                        blx=np.zeros(n), bux=np.ones(n), separable=terms)


# -- Poisson Lasso ---------------------------------------------------------------

def poisson_lasso_conic(data: DesignData, lam: float) -> ConicProblem:
    """Penalized Poisson likelihood over ``(v [n], b+ [p], b- [p])`` with
    ``v = X b``; both likelihood parts carry the 1/n factor."""
    _check_lambda(lam)
    if np.any(data.y < 0):
        raise ValueError("Poisson outcomes must be nonnegative")
    n, p = data.n, data.p
    X = data.block()
    c = np.concatenate([-data.y / n, np.full(2 * p, float(lam))])
    A = sp.hstack([sp.eye(n), -X, X]).tocsc()
    blx = np.concatenate([np.full(n, -inf), np.zeros(2 * p)])
    terms = [SeparableTerm(TermKind.EXP, i, 1.0 / n, 1.0, 0.0) for i in range(n)]
    return ConicProblem(c=c, A=A, blc=np.zeros(n), buc=np.zeros(n), blx=blx,
                        bux=np.full(n + 2 * p, inf), separable=terms)


def decode_poisson(x, n: int, p: int) -> np.ndarray:
    x = np.asarray(x)
    return x[n:n + p] - x[n + p:n + 2 * p]


def poisson_objective(data: DesignData, lam: float, beta) -> float:
    v = data.X @ beta
    return float(np.mean(np.exp(v) - data.y * v) + lam * np.abs(beta).sum())


# -- PGMM transform --------------------------------------------------------------

def pgmm_transform(dy, dx, z, W):
    """Return ``(W^{1/2} z dy, W^{1/2} z dx)`` for one unit.

    ``dy`` is (T,), ``dx`` is (T, p), ``z`` is (m, T) and ``W`` an (m, m)
    symmetric positive definite weight.
    """
    dy = np.asarray(dy, dtype=float).reshape(-1)
    dx = np.asarray(dx, dtype=float)
    if dx.ndim == 1:
        dx = dx[:, None]
    z = np.asarray(z, dtype=float)
    W = np.asarray(W, dtype=float)
    m = z.shape[0]
    if W.shape != (m, m):
        raise ValueError(f"W must be {m}x{m}")
    if m < dx.shape[1]:
        raise ValueError("need at least as many instruments as regressors")
    if not np.allclose(W, W.T, rtol=1e-12, atol=1e-12 * np.abs(W).max()):
        raise ValueError("W is not symmetric")
    try:
        sla.cholesky(W, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ValueError("W is not positive definite") from exc
    vals, vecs = np.linalg.eigh(W)
    root = (vecs * np.sqrt(vals)) @ vecs.T
    return root @ (z @ dy), root @ (z @ dx)
