"""Primal-dual interior-point solver for LP/SOCP with separable log/exp terms.

The user-facing :class:`~conicon.problem.ConicProblem` is rewritten into

    min  c'x + F(x)
    s.t. A x = b
         G x + s = h,   s in K = R_+^l x Q^{q_1} x ... x Q^{q_k}

where ``F`` is a sum of univariate log/exp terms. Ranged rows and variable
bounds become rows of ``G``; cone members are picked out by ``-I`` rows.
Each iteration solves the Newton system with Nesterov-Todd scaling and a
Mehrotra predictor-corrector step. Infeasibility is classified by an
elastic phase-one program whenever the main iteration fails to converge or
its iterates point at a Farkas certificate.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cones import ConeProduct
from .problem import ConicProblem, Sense, TermKind, validate

log = logging.getLogger(__name__)

# factor densely when the system is small or mostly filled in
_DENSE_LIMIT = 150
_DENSE_FILL = 0.1


class Status(str, Enum):
    OPTIMAL = "OPTIMAL"
    PRIMAL_INFEASIBLE = "PRIMAL_INFEASIBLE"
    DUAL_INFEASIBLE = "DUAL_INFEASIBLE"
    MAX_ITER = "MAX_ITER"
    NUMERICAL_FAILURE = "NUMERICAL_FAILURE"


@dataclass(frozen=True)
class SolverOptions:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int = 200
    step_fraction: float = 0.99
    predictor_corrector: bool = True
    regularization: float = 1e-14
    refine_steps: int = 3
    polish_iter: int = 3
    phase_one: bool = True
    verbose: bool = False


@dataclass(frozen=True)
class KKTReport:
    """Max-norm optimality residuals of a primal-dual pair.

    ``primal``, ``dual`` and ``complementarity`` are absolute; the ``*_rel``
    fields divide by ``1 + ||bounds||_inf``, ``1 + max(||c||_inf, ||grad F(x)||_inf)`` and
    ``1 + |objective|`` respectively.
    """

    primal: float
    dual: float
    complementarity: float
    primal_rel: float
    dual_rel: float
    complementarity_rel: float

    def worst_rel(self) -> float:
        return max(self.primal_rel, self.dual_rel)


@dataclass
class Solution:
    status: Status
    x: np.ndarray
    y: np.ndarray
    objective: float
    gap: float
    kkt: KKTReport | None
    iterations: int = 0
    dual_objective: float = math.nan
    certificate: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


class InvalidProblemError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


# ---------------------------------------------------------------------------
# canonical form
# ---------------------------------------------------------------------------

@dataclass
class _Canon:
    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    G: sp.csc_matrix
    h: np.ndarray
    cones: ConeProduct
    # separable terms on internal variables
    t_log: np.ndarray
    t_j: np.ndarray
    t_f: np.ndarray
    t_g: np.ndarray
    t_h: np.ndarray
    const: float = 0.0

    @property
    def n(self) -> int:
        return self.c.size

    def F(self, x):
        if self.t_j.size == 0:
            return 0.0
        u = self.t_g * x[self.t_j] + self.t_h
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            val = np.where(self.t_log, np.log(np.where(self.t_log, u, 1.0)),
                           np.exp(np.where(self.t_log, 0.0, u)))
        return float(self.t_f @ val)

    def F_derivs(self, x):
        """Gradient and Hessian diagonal of ``F`` (length n)."""
        grad = np.zeros(self.n)
        hess = np.zeros(self.n)
        if self.t_j.size:
            u = self.t_g * x[self.t_j] + self.t_h
            with np.errstate(over="ignore"):
                ex = np.exp(np.where(self.t_log, 0.0, np.minimum(u, 700.0)))
            inv = np.where(self.t_log, 1.0 / np.where(self.t_log, u, 1.0), 0.0)
            d1 = np.where(self.t_log, self.t_f * self.t_g * inv, self.t_f * self.t_g * ex)
            d2 = np.where(self.t_log, -self.t_f * self.t_g ** 2 * inv ** 2,
                          self.t_f * self.t_g ** 2 * ex)
            np.add.at(grad, self.t_j, d1)
            np.add.at(hess, self.t_j, d2)
        return grad, hess

    def log_step(self, x, dx) -> float:
        """Largest step keeping every log argument positive."""
        if not np.any(self.t_log):
            return np.inf
        j = self.t_j[self.t_log]
        g = self.t_g[self.t_log]
        u = g * x[j] + self.t_h[self.t_log]
        du = g * dx[j]
        neg = du < 0
        if not np.any(neg):
            return np.inf
        return float(np.min(-u[neg] / du[neg]))


@dataclass
class _Map:
    """How to carry internal quantities back to the user's problem."""

    n_orig: int
    m_orig: int
    pos: np.ndarray        # internal index of each original variable, -1 if fixed
    fixed_val: np.ndarray  # values of fixed variables (nan where free)
    eq_rows: np.ndarray    # original rows handled as equalities (internal order)
    lo_rows: np.ndarray    # original rows with an active lower bound in G
    up_rows: np.ndarray
    sign: float            # +1 for min, -1 for max


def _canonicalize(p: ConicProblem):
    n, m = p.n, p.m
    sign = 1.0 if p.sense is Sense.MIN else -1.0
    c = sign * p.c
    in_cone = np.zeros(n, dtype=bool)
    for cn in p.cones:
        in_cone[list(cn.indices)] = True
    fixed = (p.blx == p.bux) & ~in_cone
    fixed_cone = (p.blx == p.bux) & in_cone
    keep = np.flatnonzero(~fixed)
    pos = -np.ones(n, dtype=np.int64)
    pos[keep] = np.arange(keep.size)
    nx = keep.size
    fixed_val = np.where(fixed, p.blx, np.nan)
    xf = np.where(fixed, p.blx, 0.0)

    A = p.A.to_scipy()
    shift = A @ xf
    Ak = A[:, keep].tocsr()
    const = float(c @ xf)

    lo_fin = np.isfinite(p.blc)
    up_fin = np.isfinite(p.buc)
    eq = lo_fin & up_fin & (p.blc == p.buc)
    eq_rows = np.flatnonzero(eq)
    lo_rows = np.flatnonzero(lo_fin & ~eq)
    up_rows = np.flatnonzero(up_fin & ~eq)

    # equalities: original equality rows, then fixed cone members
    fc = np.flatnonzero(fixed_cone)
    A_eq = sp.vstack([Ak[eq_rows],
                      sp.csr_matrix((np.ones(fc.size), (np.arange(fc.size), pos[fc])),
                                    shape=(fc.size, nx))]).tocsc()
    b_eq = np.concatenate([p.blc[eq_rows] - shift[eq_rows], p.blx[fc]])

    # nonnegative block of G
    vlo = np.flatnonzero(np.isfinite(p.blx) & ~fixed & ~fixed_cone)
    vup = np.flatnonzero(np.isfinite(p.bux) & ~fixed & ~fixed_cone)
    blocks = [-Ak[lo_rows], Ak[up_rows],
              sp.csr_matrix((-np.ones(vlo.size), (np.arange(vlo.size), pos[vlo])), shape=(vlo.size, nx)),
              sp.csr_matrix((np.ones(vup.size), (np.arange(vup.size), pos[vup])), shape=(vup.size, nx))]
    h_parts = [-(p.blc[lo_rows] - shift[lo_rows]), p.buc[up_rows] - shift[up_rows],
               -p.blx[vlo], p.bux[vup]]
    l = lo_rows.size + up_rows.size + vlo.size + vup.size
    sizes = [len(cn) for cn in p.cones]
    if sizes:
        idx = pos[np.fromiter(itertools.chain.from_iterable(cn.indices for cn in p.cones),
                              dtype=np.int64, count=sum(sizes))]
        blocks.append(sp.csr_matrix((-np.ones(idx.size), (np.arange(idx.size), idx)),
                                    shape=(idx.size, nx)))
        h_parts.append(np.zeros(idx.size))
    G = sp.vstack(blocks).tocsc() if blocks else sp.csc_matrix((0, nx))
    h = np.concatenate(h_parts) if h_parts else np.zeros(0)

    terms = p.separable
    t_log, t_j, t_f, t_g, t_h = [], [], [], [], []
    for t in terms:
        f = sign * t.f
        if fixed[t.j]:
            u = t.g * fixed_val[t.j] + t.h
            const += f * (math.log(u) if t.kind is TermKind.LOG else math.exp(u))
            continue
        t_log.append(t.kind is TermKind.LOG)
        t_j.append(pos[t.j])
        t_f.append(f)
        t_g.append(t.g)
        t_h.append(t.h)
    canon = _Canon(
        c=c[keep], A=A_eq, b=b_eq, G=G, h=h, cones=ConeProduct(l, sizes),
        t_log=np.array(t_log, dtype=bool), t_j=np.array(t_j, dtype=np.int64),
        t_f=np.array(t_f, dtype=float), t_g=np.array(t_g, dtype=float),
        t_h=np.array(t_h, dtype=float), const=const,
    )
    mp = _Map(n, m, pos, fixed_val, eq_rows, lo_rows, up_rows, sign)
    return canon, mp


# ---------------------------------------------------------------------------
# presolve: substitute out column singletons of the equality block
# ---------------------------------------------------------------------------

@dataclass
class _Reduction:
    """``x[elim] = t0 + T x[keep]``, read off the equality rows ``rows``."""

    n: int
    me: int
    keep: np.ndarray
    elim: np.ndarray
    rows: np.ndarray
    rest: np.ndarray
    T: sp.csr_matrix
    t0: np.ndarray
    piv: np.ndarray
    c_E: np.ndarray
    G_E: sp.csc_matrix

    def expand(self, r: "_IpmResult", with_cost=True) -> "_IpmResult":
        x = np.empty(self.n)
        x[self.keep] = r.x[: self.keep.size]
        x[self.elim] = self.t0 + self.T @ x[self.keep]
        y = np.empty(self.me)
        y[self.rest] = r.y
        # dual row of an eliminated column: c_j + a_rj y_r + (G'z)_j = 0
        cE = self.c_E if with_cost else 0.0
        y[self.rows] = -(cE + self.G_E.T @ r.z[-self.G_E.shape[0]:]) / self.piv
        return replace(r, x=x, y=y)


def _reduce(cn: _Canon, max_fill: int = 2):
    """Eliminate variables that appear in exactly one equality row and carry
    no separable term. Each equality row is used at most once, so the
    substitutions never chain."""
    A = cn.A.tocsc()
    n, me = cn.n, A.shape[0]
    if me == 0 or n < 2:
        return cn, None
    cnt = np.diff(A.indptr)
    G = cn.G.tocsc()
    gcnt = np.diff(G.indptr)
    banned = np.zeros(n, dtype=bool)
    banned[cn.t_j] = True
    cand = np.flatnonzero((cnt == 1) & ~banned & (gcnt <= max_fill))
    if cand.size == 0:
        return cn, None
    row_of = A.indices[A.indptr[cand]]
    val = A.data[A.indptr[cand]]
    Ar = A.tocsr()
    rmax = abs(Ar).max(axis=1).toarray().ravel()[row_of]
    ok = np.abs(val) >= 1e-3 * rmax
    cand, row_of, val = cand[ok], row_of[ok], val[ok]
    _, first = np.unique(row_of, return_index=True)
    elim, rows, piv = cand[first], row_of[first], val[first]
    if elim.size == 0 or elim.size == n:
        return cn, None
    keep = np.setdiff1d(np.arange(n), elim)
    rest = np.setdiff1d(np.arange(me), rows)
    inv = sp.diags(1.0 / piv)
    T = (-(inv @ Ar[rows][:, keep])).tocsr()
    t0 = cn.b[rows] / piv
    c_E = cn.c[elim]
    G_E = G[:, elim]
    G_new = (G[:, keep] + G_E @ T).tocsc()
    G_new.eliminate_zeros()
    pos = -np.ones(n, dtype=np.int64)
    pos[keep] = np.arange(keep.size)
    red = replace(
        cn, c=cn.c[keep] + T.T @ c_E, A=A[rest][:, keep].tocsc(), b=cn.b[rest],
        G=G_new, h=cn.h - G_E @ t0, t_j=pos[cn.t_j],
        const=cn.const + float(c_E @ t0),
    )
    return red, _Reduction(n, me, keep, elim, rows, rest, T, t0, piv, c_E, G_E)


def _free_splits(p: ConicProblem):
    """Pairs ``(j, k)`` where ``x_j - x_k`` is a free variable in disguise:
    opposite nonzero columns, both bounded to ``[0, inf)``, cancelling costs,
    no cone or separable membership. Such pairs give an unbounded optimal face
    that slows the interior-point method down, so they are merged."""
    n = p.n
    touched = np.zeros(n, dtype=bool)
    for cn in p.cones:
        touched[list(cn.indices)] = True
    for t in p.separable:
        touched[t.j] = True
    ok = (p.blx == 0.0) & (p.bux == np.inf) & ~touched
    if ok.sum() < 2:
        return []
    A = p.A.to_scipy().tocsc()
    A.sort_indices()
    seen, pairs = {}, []
    for j in np.flatnonzero(ok):
        lo, hi = A.indptr[j], A.indptr[j + 1]
        if lo == hi:
            continue
        idx = A.indices[lo:hi].tobytes()
        mate = seen.get((idx, (-A.data[lo:hi]).tobytes()))
        if mate and p.c[mate[-1]] + p.c[j] == 0.0:
            pairs.append((mate.pop(), j))
            continue
        seen.setdefault((idx, A.data[lo:hi].tobytes()), []).append(j)
    return pairs


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

class _KKT:
    """Reduced Newton system ``[[H + G'W^{-2}G, A'], [A, 0]]``.

    The sparsity pattern is fixed across iterations and built once. On a cone
    block ``W^{-2} = (I + 4 (u'u) u u' - 2 u v' - 2 v u') / beta^2`` with
    ``u = J v``, so its contribution only needs ``G'u`` and ``G'v`` restricted
    to the columns that cone touches. Small or dense systems are factored with
    dense LU, the rest with SuperLU.
    """

    def __init__(self, canon: _Canon, reg: float):
        self.cn = canon
        self.reg = reg
        self.n, self.me = canon.n, canon.A.shape[0]
        N = self._N = self.n + self.me
        cp = canon.cones
        G = canon.G.tocsr()
        G.sort_indices()
        self._Go = G[: cp.l].tocsr()
        ocnt = np.diff(self._Go.indptr)
        self._slots(G[cp.l:].tocoo())
        work = float(np.sum(ocnt.astype(float) ** 2)) + float(self._sa.size)
        self.dense = N <= _DENSE_LIMIT or work > _DENSE_FILL * N * N
        if self.dense:
            self._Gd = self._Go.toarray()
            self._Ad = canon.A.toarray()
        else:
            self._build_pattern()

    def _slots(self, Gc):
        """One slot per (cone, touched column); ``M`` maps cone rows to slots."""
        n, cp = self.n, self.cn.cones
        seg = cp.seg[Gc.row] if Gc.nnz else np.zeros(0, dtype=np.int64)
        key = seg.astype(np.int64) * max(n, 1) + Gc.col
        slots, slot_of = np.unique(key, return_inverse=True)
        ns = slots.size
        s_cone = slots // max(n, 1)
        self._s_col = slots % max(n, 1)
        self._M = sp.csc_matrix((Gc.data, (Gc.row, slot_of)), shape=(cp.dim - cp.l, ns))
        MtM = (self._M.T @ self._M).tocsr()
        m_c = np.bincount(s_cone, minlength=cp.nsoc)
        c_start = np.cumsum(m_c) - m_c
        rep = m_c[s_cone]
        sa = np.repeat(np.arange(ns), rep)
        sb = c_start[s_cone[sa]] + (np.arange(sa.size) - np.repeat(np.cumsum(rep) - rep, rep))
        self._sa, self._sb, self._s_cone = sa, sb, s_cone[sa]
        self._mtm = np.asarray(MtM[sa, sb]).ravel() if sa.size else np.zeros(0)

    def _build_pattern(self):
        n, N = self.n, self._N
        Go = self._Go
        l = Go.shape[0]
        # orthant rows: sum_r d_r g_r g_r' over all entry pairs of each row
        cnt = np.diff(Go.indptr)
        row = np.repeat(np.arange(l), cnt)
        start = np.repeat(Go.indptr[:-1], cnt)
        rep = cnt[row]
        a = np.repeat(np.arange(Go.nnz), rep)
        b = np.repeat(start, rep) + (np.arange(a.size) - np.repeat(np.cumsum(rep) - rep, rep))
        o_r, o_c = Go.indices[a], Go.indices[b]
        self._o_coef = Go.data[a] * Go.data[b]
        self._o_src = row[a]
        A = self.cn.A.tocoo()
        diag = np.arange(N)
        sc = self._s_col
        rows = np.concatenate([o_r, sc[self._sa], diag, A.col, A.row + n])
        cols = np.concatenate([o_c, sc[self._sb], diag, A.row + n, A.col])
        key = cols.astype(np.int64) * N + rows
        uniq, pos = np.unique(key, return_inverse=True)
        self._pos = pos
        self._nnz = uniq.size
        self._indices = (uniq % N).astype(np.int32)
        self._indptr = np.searchsorted(uniq // N, np.arange(N + 1)).astype(np.int32)
        self._a_vals = np.concatenate([A.data, A.data])

    def _cone_values(self, sc):
        if not self._sa.size:
            return np.zeros(0)
        cp = self.cn.cones
        v = sc["w"]
        u = cp.jsign * v
        P = self._M.T @ u
        Q = self._M.T @ v
        uu = cp._cdot(u, u)[self._s_cone]
        a, b = self._sa, self._sb
        vs = self._mtm + 4.0 * uu * P[a] * P[b] - 2.0 * (P[a] * Q[b] + Q[a] * P[b])
        return vs / sc["beta"][self._s_cone] ** 2

    def _assemble(self, hdiag, reg):
        dvals = np.concatenate([hdiag + reg, np.full(self.me, -reg)])
        if self.dense:
            n, N = self.n, self._N
            K = np.zeros((N, N))
            w = 1.0 / self._sc["d"] ** 2
            K[:n, :n] = self._Gd.T @ (w[:, None] * self._Gd)
            if self._sa.size:
                flat = self._s_col[self._sa] * N + self._s_col[self._sb]
                K += np.bincount(flat, weights=self._vs, minlength=N * N).reshape(N, N)
            K[:n, n:] = self._Ad.T
            K[n:, :n] = self._Ad
            K[np.diag_indices(N)] += dvals
            return K
        vo = self._o_coef / self._sc["d"][self._o_src] ** 2
        vals = np.concatenate([vo, self._vs, dvals, self._a_vals])
        out = np.bincount(self._pos, weights=vals, minlength=self._nnz)
        return sp.csc_matrix((out, self._indices, self._indptr), shape=(self._N, self._N))

    def factor(self, hdiag, sc):
        self._sc = sc
        self._vs = self._cone_values(sc)
        self._hdiag = hdiag
        if self.dense:
            self.K0 = self._assemble(hdiag, 0.0)
            Kr = self._assemble(hdiag, self.reg) if self.reg else self.K0
            with warnings.catch_warnings():
                # an exactly zero pivot is a factor failure, not a warning
                warnings.simplefilter("error", sla.LinAlgWarning)
                try:
                    self.lu = sla.lu_factor(Kr, check_finite=False)
                except sla.LinAlgWarning as exc:
                    raise np.linalg.LinAlgError(str(exc)) from exc
            if not np.all(np.isfinite(self.lu[0])):
                raise np.linalg.LinAlgError("non-finite factor")
            self._solve = lambda rhs: sla.lu_solve(self.lu, rhs, check_finite=False)
        else:
            self.K0 = None
            Kr = self._assemble(hdiag, self.reg)
            try:
                self.lu = spla.splu(Kr, permc_spec="MMD_AT_PLUS_A",
                                    diag_pivot_thresh=0.0,
                                    options={"SymmetricMode": True})
            except RuntimeError as exc:
                raise np.linalg.LinAlgError(str(exc)) from exc
            self._solve = self.lu.solve

    def solve(self, rhs, steps):
        sol = self._solve(rhs)
        if steps and self.K0 is None:
            self.K0 = self._assemble(self._hdiag, 0.0)
        for _ in range(steps):
            res = rhs - self.K0 @ sol
            if np.max(np.abs(res)) <= 1e-14 * (1.0 + np.max(np.abs(rhs))):
                break
            sol = sol + self._solve(res)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError("non-finite solve")
        return sol


# ---------------------------------------------------------------------------
# interior-point iteration
# ---------------------------------------------------------------------------

@dataclass
class _IpmResult:
    status: Status
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    iters: int
    pcost: float
    dcost: float
    pres: float
    dres: float
    gap: float
    hint: str = ""


def _ipm(cn: _Canon, opts: SolverOptions, accept=None) -> _IpmResult:
    cp = cn.cones
    n, me, mi = cn.n, cn.A.shape[0], cp.dim
    A, G = cn.A, cn.G
    AT, GT = A.T.tocsr(), G.T.tocsr()
    b, h, c = cn.b, cn.h, cn.c
    bnorm = 1.0 + max(np.max(np.abs(b), initial=0.0), np.max(np.abs(h), initial=0.0))
    cnorm = 1.0 + np.max(np.abs(c), initial=0.0)
    reg = opts.regularization
    kkt = _KKT(cn, reg)
    has_log = bool(np.any(cn.t_log))

    def solve_full(hdiag, sc, bx, by, bz, bs):
        """One pass through the reduced system for
        ``H dx + A'dy + G'dz = bx, A dx = by, G dx + ds = bz, W dz + W^{-1} ds = bs``."""
        t = cp.scale(sc, bs) - bz
        rhs = np.concatenate([bx - GT @ cp.scale(sc, cp.scale(sc, t, inverse=True), inverse=True), by])
        sol = kkt.solve(rhs, 0)
        dx, dy = sol[:n], sol[n:]
        dz = cp.scale(sc, cp.scale(sc, G @ dx + t, inverse=True), inverse=True)
        dsv = bz - G @ dx
        return dx, dy, dz, dsv

    def newton(hdiag, sc, rx, ry, rz, ds):
        """Solve the scaled Newton system with refinement on the full system."""
        bx, by, bz = -rx, -ry, -rz
        dx, dy, dz, dsv = solve_full(hdiag, sc, bx, by, bz, ds)
        scale = 1.0 + max(np.max(np.abs(bx), initial=0.0), np.max(np.abs(bz), initial=0.0),
                          np.max(np.abs(ds), initial=0.0))
        for _ in range(opts.refine_steps):
            ex = bx - (hdiag * dx + AT @ dy + GT @ dz)
            ey = by - A @ dx
            ez = bz - (G @ dx + dsv)
            es = ds - (cp.scale(sc, dz) + cp.scale(sc, dsv, inverse=True))
            err = max(np.max(np.abs(ex), initial=0.0), np.max(np.abs(ey), initial=0.0),
                      np.max(np.abs(es), initial=0.0))
            if err <= 1e-14 * scale:
                break
            cx, cy, cz, cs = solve_full(hdiag, sc, ex, ey, ez, es)
            dx, dy, dz, dsv = dx + cx, dy + cy, dz + cz, dsv + cs
        return dx, dy, dz, dsv

    # -- starting point ----------------------------------------------------
    x = np.zeros(n)
    y = np.zeros(me)
    try:
        one = np.ones(mi)
        kkt.factor(np.full(n, 1e-8), {"d": one[: cp.l], "beta": np.ones(cp.nsoc),
                                      "w": cp.identity()[cp.l:]})
        rhs = np.concatenate([GT @ h, b])
        sol = kkt.solve(rhs, opts.refine_steps)
        x = sol[:n]
        s = h - G @ x
        rhs = np.concatenate([-c, np.zeros(me)])
        sol = kkt.solve(rhs, opts.refine_steps)
        y = sol[n:]
        z = G @ sol[:n]
    except np.linalg.LinAlgError:
        s = h - G @ x
        z = np.zeros(mi)
    s = cp.shift_interior(s)
    z = cp.shift_interior(z)
    if has_log:
        j = cn.t_j[cn.t_log]
        g = cn.t_g[cn.t_log]
        u = g * x[j] + cn.t_h[cn.t_log]
        bad = u < 1e-2
        # move each offending variable so its log argument equals 1
        x[j[bad]] = (1.0 - cn.t_h[cn.t_log][bad]) / g[bad]
    if np.any(~cn.t_log):
        je = cn.t_j[~cn.t_log]
        ue = cn.t_g[~cn.t_log] * x[je] + cn.t_h[~cn.t_log]
        clip = ue > 20
        x[je[clip]] = (20 - cn.t_h[~cn.t_log][clip]) / cn.t_g[~cn.t_log][clip]

    hist = []
    res = best = None
    polish_left, tight = opts.polish_iter, 1e-3
    for it in range(opts.max_iter + 1):
        grad, hess = cn.F_derivs(x)
        rx = c + grad + AT @ y + GT @ z
        ry = A @ x - b
        rz = G @ x + s - h
        Fx = cn.F(x)
        pcost = float(c @ x) + Fx
        dcost = Fx - float(grad @ x) - float(b @ y) - float(h @ z)
        sz = float(s @ z)
        pres = max(np.max(np.abs(ry), initial=0.0) / bnorm, np.max(np.abs(rz), initial=0.0) / bnorm)
        # the separable gradient is part of the cost scale (c may be zero)
        dres = np.max(np.abs(rx), initial=0.0) / max(cnorm, 1.0 + np.max(np.abs(grad), initial=0.0))
        relgap = max(abs(pcost - dcost), sz) / (1.0 + abs(pcost))
        if opts.verbose:
            log.info("%4d %+.6e %+.6e %.2e %.2e %.2e", it, pcost, dcost, pres, dres, relgap)
        hist.append(pres)
        if not (np.isfinite(pcost) and np.isfinite(pres) and np.isfinite(dres)):
            if best is not None:
                return best
            return _IpmResult(Status.NUMERICAL_FAILURE, x, y, z, s, it, pcost, dcost, pres, dres, relgap, "nan")
        if pres <= opts.feas_tol and dres <= opts.feas_tol and relgap <= opts.gap_tol:
            res = _IpmResult(Status.OPTIMAL, x, y, z, s, it, pcost, dcost, pres, dres, relgap)
            if accept is None or accept(res):
                # keep going a few steps on degenerate problems, where the
                # iterate lags the objective; fall back to this point on trouble
                best = res
                if polish_left == 0 or (relgap <= tight * opts.gap_tol
                                        and max(pres, dres) <= tight * opts.feas_tol):
                    return best
                polish_left -= 1
        elif best is not None:
            return best
        # certificates
        bty = float(b @ y) + float(h @ z)
        if bty < 0:
            cert = np.max(np.abs(AT @ y + GT @ z), initial=0.0) / (-bty)
            if cert <= 1e-7 and -bty > 1e3 * cnorm:
                return _IpmResult(Status.PRIMAL_INFEASIBLE, x, y, z, s, it, pcost, dcost, pres, dres, relgap, "cert")
        if pcost < -1e8 * bnorm:
            dcert = max(np.max(np.abs(A @ x), initial=0.0), np.max(np.abs(G @ x + s), initial=0.0)) / (-pcost)
            if dcert <= 1e-7:
                return _IpmResult(Status.DUAL_INFEASIBLE, x, y, z, s, it, pcost, dcost, pres, dres, relgap, "cert")
        if it == opts.max_iter:
            if best is not None:
                return best
            break
        # stall: primal residual has not moved in a long while
        if it >= 40 and pres > 1e3 * opts.feas_tol and hist[-30] > 0 and pres > 0.5 * hist[-30]:
            return _IpmResult(Status.MAX_ITER, x, y, z, s, it, pcost, dcost, pres, dres, relgap, "stall")

        mu = sz / cp.degree if cp.degree else 0.0
        try:
            sc = cp.nt_scaling(s, z)
            lam = cp.scale(sc, z)
            kkt.factor(hess, sc)
            # predictor
            ds_aff = -lam
            dx, dy, dz, dsv = newton(hess, sc, rx, ry, rz, ds_aff)
            if best is not None and cp.degree:
                # polishing: pure centering steps at the current mu; off-center
                # iterates carry O(sqrt(mu)) error in the primal point, on the
                # central path it is O(mu)
                rc = -cp.jprod(lam, lam) + mu * cp.identity()
                dx, dy, dz, dsv = newton(hess, sc, rx, ry, rz, cp.jdiv(lam, rc))
            elif opts.predictor_corrector and cp.degree:
                a_aff = min(1.0, cp.max_step(s, dsv), cp.max_step(z, dz), cn.log_step(x, dx))
                sig = (float((s + a_aff * dsv) @ (z + a_aff * dz)) / sz) ** 3 if sz > 0 else 0.0
                # do not drive mu far below the gap tolerance; the residuals
                # would otherwise be left behind on a badly conditioned system
                mu_min = 1e-2 * opts.gap_tol * (1.0 + abs(pcost)) / cp.degree
                sig = min(max(sig, mu_min / mu if mu > 0 else 0.0), 1.0)
                corr = cp.jprod(cp.scale(sc, dsv, inverse=True), cp.scale(sc, dz))
                rc = -cp.jprod(lam, lam) - corr + sig * mu * cp.identity()
                dx, dy, dz, dsv = newton(hess, sc, rx, ry, rz, cp.jdiv(lam, rc))
            elif cp.degree:
                rc = -cp.jprod(lam, lam) + 0.1 * mu * cp.identity()
                dx, dy, dz, dsv = newton(hess, sc, rx, ry, rz, cp.jdiv(lam, rc))
        except (np.linalg.LinAlgError, FloatingPointError, ZeroDivisionError):
            if best is not None:
                return best
            if reg < 1e-6:
                reg *= 100.0
                kkt.reg = reg
                continue
            return _IpmResult(Status.NUMERICAL_FAILURE, x, y, z, s, it, pcost, dcost, pres, dres, relgap, "factor")
        amax = min(cp.max_step(s, dsv), cp.max_step(z, dz), cn.log_step(x, dx))
        alpha = min(1.0, opts.step_fraction * amax)
        if opts.verbose:
            log.debug("step %.3e (s %.3e z %.3e) sigma %.3e mu %.3e", alpha, cp.max_step(s, dsv), cp.max_step(z, dz), sig if cp.degree else 0.0, mu)
        if not np.isfinite(alpha) or alpha <= 0:
            if best is not None:
                return best
            return _IpmResult(Status.NUMERICAL_FAILURE, x, y, z, s, it, pcost, dcost, pres, dres, relgap, "step")
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * dsv
    return _IpmResult(Status.MAX_ITER, x, y, z, s, opts.max_iter, pcost, dcost, pres, dres, relgap, "max_iter")


def _phase_one(cn: _Canon, opts: SolverOptions):
    """Elastic feasibility program.

    ``min 1'(a+ + a-) + tau`` subject to ``A x + a+ - a- = b`` and
    ``G x + s - tau e = h``. Returns ``(infeasibility, y)`` where ``y`` holds the
    equality multipliers (a Farkas direction when the value is positive).
    """
    n, me = cn.n, cn.A.shape[0]
    cp = cn.cones
    e = cp.identity()
    nn = n + 2 * me + 1
    A1 = sp.hstack([cn.A, sp.eye(me), -sp.eye(me), sp.csc_matrix((me, 1))]).tocsc()
    # the elastic variables get their own nonnegative rows, prepended to G
    G_top = sp.hstack([sp.csc_matrix((2 * me + 1, n)), -sp.eye(2 * me + 1)])
    G_rest = sp.hstack([cn.G, sp.csc_matrix((cp.dim, 2 * me)), sp.csc_matrix(-e.reshape(-1, 1))])
    G1 = sp.vstack([G_top, G_rest]).tocsc()
    h1 = np.concatenate([np.zeros(2 * me + 1), cn.h])
    c1 = np.concatenate([np.zeros(n), np.ones(2 * me + 1)])
    cones1 = ConeProduct(cp.l + 2 * me + 1, cp.q)
    p1 = _Canon(c=c1, A=A1, b=cn.b, G=G1, h=h1, cones=cones1,
                t_log=np.zeros(0, bool), t_j=np.zeros(0, np.int64), t_f=np.zeros(0),
                t_g=np.zeros(0), t_h=np.zeros(0))
    r = _ipm(p1, replace(opts, max_iter=max(opts.max_iter, 100), gap_tol=1e-9, feas_tol=1e-9))
    return r


def _phase_one_value(r: _IpmResult) -> float:
    return max(r.pcost, 0.0) if r.status is Status.OPTIMAL else math.nan


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def kkt_residuals(problem: ConicProblem, x, y) -> KKTReport:
    """Optimality residuals of ``(x, y)`` for ``problem``.

    ``y`` holds row multipliers of the equivalent minimization, positive when
    a row's lower bound binds. Bound and cone multipliers are implied by the
    reduced cost ``c + grad F(x) - A'y``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = problem.n, problem.m
    if x.shape != (n,) or y.shape != (m,):
        raise ValueError(f"expected x of length {n} and y of length {m}, got {x.shape} and {y.shape}")
    sign = 1.0 if problem.sense is Sense.MIN else -1.0
    A = problem.A.to_scipy()
    ax = A @ x
    blc, buc, blx, bux = problem.blc, problem.buc, problem.blx, problem.bux
    # primal
    viol = [np.maximum(blc - ax, 0.0), np.maximum(ax - buc, 0.0),
            np.maximum(blx - x, 0.0), np.maximum(x - bux, 0.0)]
    pr = max((float(np.max(v, initial=0.0)) for v in viol), default=0.0)
    for cn in problem.cones:
        head = x[cn.head]
        tail = x[list(cn.tail)]
        pr = max(pr, float(np.linalg.norm(tail) - head))
    pr = max(pr, 0.0)

    # reduced cost of the minimization form
    grad = np.zeros(n)
    for t in problem.separable:
        u = t.g * x[t.j] + t.h
        d = t.f * t.g / u if t.kind is TermKind.LOG else t.f * t.g * math.exp(u)
        grad[t.j] += d
    rc = sign * (problem.c + grad) - A.T @ y

    lo_f, up_f = np.isfinite(blx), np.isfinite(bux)
    in_cone = np.zeros(n, dtype=bool)
    for cn in problem.cones:
        in_cone[list(cn.indices)] = True
    dual = 0.0
    comp = 0.0
    free = ~lo_f & ~up_f & ~in_cone
    dual = max(dual, float(np.max(np.abs(rc[free]), initial=0.0)))
    only_lo = lo_f & ~up_f & ~in_cone
    dual = max(dual, float(np.max(np.maximum(-rc[only_lo], 0.0), initial=0.0)))
    only_up = up_f & ~lo_f & ~in_cone
    dual = max(dual, float(np.max(np.maximum(rc[only_up], 0.0), initial=0.0)))
    zl = np.where(lo_f & ~in_cone, np.maximum(rc, 0.0), 0.0)
    zu = np.where(up_f & ~in_cone, np.maximum(-rc, 0.0), 0.0)
    with np.errstate(invalid="ignore"):
        cl = np.where(zl > 0, zl * np.abs(x - blx), 0.0)
        cu = np.where(zu > 0, zu * np.abs(bux - x), 0.0)
    comp = max(comp, float(np.max(cl, initial=0.0)), float(np.max(cu, initial=0.0)))
    for cn in problem.cones:
        idx = np.array(cn.indices)
        sv = rc[idx].copy()
        tail = sv[1:]
        ti = idx[1:]
        # bound multipliers may pull a tail entry toward zero in their direction
        tail = np.where(np.isfinite(blx[ti]) & (tail > 0), 0.0, tail)
        tail = np.where(np.isfinite(bux[ti]) & (tail < 0), 0.0, tail)
        if not np.isfinite(bux[idx[0]]):
            dual = max(dual, float(np.linalg.norm(tail) - sv[0]))
        sv[1:] = tail
        comp = max(comp, abs(float(sv @ x[idx])))
    # row multipliers: sign must match the binding side
    lo_c, up_c = np.isfinite(blc), np.isfinite(buc)
    eq = lo_c & up_c & (blc == buc)
    bad_pos = (y > 0) & ~lo_c
    bad_neg = (y < 0) & ~up_c
    dual = max(dual, float(np.max(np.abs(y[bad_pos | bad_neg]), initial=0.0)))
    with np.errstate(invalid="ignore"):
        crow = np.where(~eq & (y > 0) & lo_c, y * np.abs(ax - blc), 0.0)
        crow = np.maximum(crow, np.where(~eq & (y < 0) & up_c, -y * np.abs(buc - ax), 0.0))
    comp = max(comp, float(np.max(np.nan_to_num(crow), initial=0.0)))
    dual = max(dual, 0.0)

    finite = np.concatenate([blc[lo_c], buc[up_c], blx[lo_f], bux[up_f]])
    bscale = 1.0 + float(np.max(np.abs(finite), initial=0.0))
    cscale = 1.0 + max(float(np.max(np.abs(problem.c), initial=0.0)),
                       float(np.max(np.abs(grad), initial=0.0)))
    obj = problem.objective(x)
    oscale = 1.0 + (abs(obj) if np.isfinite(obj) else 0.0)
    return KKTReport(pr, dual, comp, pr / bscale, dual / cscale, comp / oscale)


def _to_original(problem, mp: _Map, cn: _Canon, r: _IpmResult):
    x = np.where(mp.pos >= 0, 0.0, mp.fixed_val)
    x[mp.pos >= 0] = r.x
    y = np.zeros(mp.m_orig)
    me_rows = mp.eq_rows.size
    y[mp.eq_rows] = -r.y[:me_rows]
    k = 0
    z = r.z
    y[mp.lo_rows] += z[k:k + mp.lo_rows.size]
    k += mp.lo_rows.size
    y[mp.up_rows] -= z[k:k + mp.up_rows.size]
    return x, y


def solve(problem: ConicProblem, opts: SolverOptions | None = None) -> Solution:
    """Solve ``problem``; never raises for solver outcomes, only for malformed
    input (:class:`InvalidProblemError`)."""
    opts = opts or SolverOptions()
    diags = validate(problem)
    if diags:
        raise InvalidProblemError(diags)
    pairs = _free_splits(problem)
    if pairs:
        j, k = np.array(pairs).T
        blx, bux = problem.blx.copy(), problem.bux.copy()
        blx[j] = -np.inf
        blx[k] = bux[k] = 0.0
        sol = solve(replace(problem, blx=blx, bux=bux), opts)
        x = sol.x.copy()
        f = x[j]
        x[j], x[k] = np.maximum(f, 0.0), np.maximum(-f, 0.0)
        try:
            rep = kkt_residuals(problem, x, sol.y)
        except (ValueError, OverflowError, ZeroDivisionError):
            rep = None
        obj = problem.objective(x) if sol.status is Status.OPTIMAL else sol.objective
        return replace(sol, x=x, objective=obj, kkt=rep)
    t0 = time.perf_counter()
    cn_full, mp = _canonicalize(problem)
    cn, red = _reduce(cn_full)

    def full(r, with_cost=True):
        return red.expand(r, with_cost) if red is not None else r

    def accept(r):
        x, y = _to_original(problem, mp, cn_full, full(r))
        rep = kkt_residuals(problem, x, y)
        return rep.primal_rel <= opts.feas_tol and rep.dual_rel <= opts.feas_tol

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        r = _ipm(cn, opts, accept)
        status = r.status
        cert = None
        info = {"hint": r.hint}
        if status is not Status.OPTIMAL and opts.phase_one and status is not Status.DUAL_INFEASIBLE:
            p1 = _phase_one(cn, opts)
            val = _phase_one_value(p1)
            info["phase_one"] = val
            scale = 1.0 + max(np.max(np.abs(cn.b), initial=0.0), np.max(np.abs(cn.h), initial=0.0))
            if np.isfinite(val) and val > 1e-6 * scale:
                status = Status.PRIMAL_INFEASIBLE
                k = 2 * cn.A.shape[0] + 1
                far = full(replace(p1, x=p1.x[:cn.n], z=p1.z[k:]), with_cost=False)
                cert = _to_original(problem, mp, cn_full, far)[1]
            elif np.isfinite(val) and status is Status.PRIMAL_INFEASIBLE:
                # certificate was spurious; the problem is feasible
                status = Status.MAX_ITER if r.hint != "nan" else Status.NUMERICAL_FAILURE
            elif status is Status.MAX_ITER and r.pcost < -1e6 * scale:
                status = Status.DUAL_INFEASIBLE
        r = full(r)
    x, y = _to_original(problem, mp, cn_full, r)
    obj = mp.sign * (r.pcost + cn.const) if np.isfinite(r.pcost) else math.nan
    dobj = mp.sign * (r.dcost + cn.const) if np.isfinite(r.dcost) else math.nan
    try:
        rep = kkt_residuals(problem, x, y)
    except (ValueError, OverflowError, ZeroDivisionError):
        rep = None
    if status is Status.OPTIMAL:
        obj = problem.objective(x)
    info["seconds"] = time.perf_counter() - t0
    if status is Status.PRIMAL_INFEASIBLE and cert is None:
        cert = y.copy()
    return Solution(status=status, x=x, y=y, objective=obj, gap=r.gap, kkt=rep,
                    iterations=r.iters, dual_objective=dobj, certificate=cert, info=info)
