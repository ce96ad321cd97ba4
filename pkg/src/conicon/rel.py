"""Relaxed empirical likelihood for moment-condition models.

For a candidate ``beta`` the inner problem maximizes ``sum log pi_i`` over
the probability simplex intersected with ``|sum_i pi_i h_ij(beta)| <= lam``,
where ``h`` are the moments standardized column by column. The outer loop
searches ``beta`` over a box with a derivative-free simplex method; candidates
whose inner problem is infeasible score ``-inf``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .formulations import MomentMatrix, moment_matrix, rel_inner_conic
from .solver import SolverOptions, Status, solve

log = logging.getLogger(__name__)


class RELInfeasibleError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class IVData:
    """Linear IV sample: ``y`` (n,), regressors ``x`` (n, D), instruments ``z`` (n, m)."""

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        x = np.asarray(self.x, dtype=float)
        z = np.asarray(self.z, dtype=float)
        x = x[:, None] if x.ndim == 1 else x
        z = z[:, None] if z.ndim == 1 else z
        if x.shape[0] != y.size or z.shape[0] != y.size:
            raise ValueError(f"row mismatch: y {y.shape}, x {x.shape}, z {z.shape}")
        for name, a in (("y", y), ("x", x), ("z", z)):
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} has non-finite entries")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def m(self) -> int:
        return self.z.shape[1]

    @property
    def D(self) -> int:
        return self.x.shape[1]


def linear_iv_moments(data: IVData, beta) -> np.ndarray:
    """``g_ij = z_ij (y_i - x_i' beta)``, shape (n, m)."""
    u = data.y - data.x @ np.asarray(beta, dtype=float)
    return data.z * u[:, None]


def tsls(data: IVData) -> np.ndarray:
    """Two-stage least squares, via pseudo-inverses so it also runs when
    ``m >= n``."""
    Pz_x = data.z @ (np.linalg.pinv(data.z) @ data.x)
    return np.linalg.solve(Pz_x.T @ data.x, Pz_x.T @ data.y)


def default_lambda(n: int, m: int, c: float = 1.0) -> float:
    """``c * sqrt(log m / n)``."""
    return c * math.sqrt(math.log(m) / n) if m > 1 else 0.0


@dataclass(frozen=True)
class RELConfig:
    lam: float | None = None
    lam_scale: float = 1.0
    beta_lower: tuple | None = None
    beta_upper: tuple | None = None
    outer_start: tuple | None = None
    outer_max_eval: int = 400
    outer_tol: float = 1e-6
    outer_edge: float = 0.1
    restarts: int = 1
    box_halfwidth: float = 5.0
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.lam is not None and not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be finite and nonnegative, got {self.lam}")
        if self.outer_max_eval < 1 or not self.outer_tol > 0 or not self.outer_edge > 0:
            raise ValueError("outer controls must be positive")
        if (self.beta_lower is None) != (self.beta_upper is None):
            raise ValueError("give both beta_lower and beta_upper or neither")
        if self.beta_lower is not None:
            lo, hi = np.asarray(self.beta_lower, float), np.asarray(self.beta_upper, float)
            if lo.shape != hi.shape or not np.all(np.isfinite(lo) & np.isfinite(hi)) \
                    or np.any(lo >= hi):
                raise ValueError("box bounds must be finite with lower < upper")


@dataclass(eq=False)
class RELResult:
    beta_hat: np.ndarray
    pi: np.ndarray
    loglik: float
    outer_evals: int
    inner_failures: int
    lam: float
    converged: bool = True
    duals: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {"beta_hat": self.beta_hat.tolist(), "pi": self.pi.tolist(),
                "loglik": self.loglik, "outer_evals": self.outer_evals,
                "inner_failures": self.inner_failures, "lambda": self.lam,
                "converged": self.converged}


@dataclass
class InnerResult:
    feasible: bool
    loglik: float
    pi: np.ndarray | None
    status: Status
    duals: np.ndarray | None = None


def rel_inner(H: MomentMatrix, lam: float, opts: SolverOptions | None = None) -> InnerResult:
    """Solve the inner problem. ``duals`` are the multipliers of the ``m``
    moment rows as returned by the solver."""
    sol = solve(rel_inner_conic(H, lam), opts)
    if sol.ok:
        pi = np.clip(sol.x, 0.0, 1.0)
        return InnerResult(True, float(np.sum(np.log(pi))), pi, sol.status, sol.y[1:])
    return InnerResult(False, -math.inf, None, sol.status)


# -- outer search ------------------------------------------------------------------

@dataclass
class NMResult:
    x: np.ndarray
    fun: float
    nfev: int
    converged: bool


def nelder_mead(f: Callable, x0, lower, upper, edge=0.1, tol=1e-6, max_eval=400,
                restarts=1) -> NMResult:
    """Minimize ``f`` over a box with a Nelder-Mead simplex.

    Every trial point is clipped to the box. ``f`` may return ``inf``.
    Stops when the simplex diameter (max distance to the best vertex) drops
    below ``tol``; then restarts once from the best vertex with a fresh
    simplex of the original edge.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    x0 = np.clip(np.asarray(x0, dtype=float), lower, upper)
    D = x0.size
    nfev = 0

    def ev(x):
        nonlocal nfev
        nfev += 1
        v = f(x)
        return math.inf if not np.isfinite(v) else float(v)

    def fresh(xb, fb):
        S = [xb]
        F = [fb]
        for j in range(D):
            v = xb.copy()
            v[j] += edge
            if v[j] > upper[j]:
                v[j] = xb[j] - edge
            v = np.clip(v, lower, upper)
            S.append(v)
            F.append(ev(v))
        return np.array(S), np.array(F)

    best_x, best_f = x0, ev(x0)
    converged = False
    for _ in range(1 + max(0, restarts)):
        if nfev >= max_eval:
            break
        S, F = fresh(best_x, best_f)
        converged = False
        while nfev < max_eval:
            order = np.argsort(F, kind="stable")
            S, F = S[order], F[order]
            if np.max(np.linalg.norm(S[1:] - S[0], axis=1)) < tol:
                converged = True
                break
            cen = S[:-1].mean(axis=0)
            xr = np.clip(cen + (cen - S[-1]), lower, upper)
            fr = ev(xr)
            if fr < F[0]:
                xe = np.clip(cen + 2.0 * (cen - S[-1]), lower, upper)
                fe = ev(xe)
                S[-1], F[-1] = (xe, fe) if fe < fr else (xr, fr)
            elif fr < F[-2]:
                S[-1], F[-1] = xr, fr
            else:
                if fr < F[-1]:
                    xc = cen + 0.5 * (xr - cen)
                else:
                    xc = cen + 0.5 * (S[-1] - cen)
                fc = ev(xc)
                if fc < min(fr, F[-1]):
                    S[-1], F[-1] = xc, fc
                else:
                    for i in range(1, D + 1):
                        S[i] = S[0] + 0.5 * (S[i] - S[0])
                        F[i] = ev(S[i])
        i = int(np.argmin(F))
        if F[i] <= best_f:
            best_x, best_f = S[i].copy(), F[i]
    return NMResult(best_x, best_f, nfev, converged)


def rel_estimate(data, moment_fn: Callable = linear_iv_moments,
                 config: RELConfig | None = None) -> RELResult:
    """Maximize the relaxed empirical likelihood over ``beta`` in a box."""
    config = config or RELConfig()
    if config.outer_start is not None:
        start = np.asarray(config.outer_start, dtype=float)
    elif isinstance(data, IVData):
        try:
            start = tsls(data)
        except np.linalg.LinAlgError:
            start = None
    else:
        start = None
    if config.beta_lower is not None:
        lo = np.asarray(config.beta_lower, dtype=float)
        hi = np.asarray(config.beta_upper, dtype=float)
        if start is None or not np.all(np.isfinite(start)):
            start = 0.5 * (lo + hi)
    else:
        if start is None or not np.all(np.isfinite(start)):
            if not isinstance(data, IVData):
                raise ValueError("need outer_start or box bounds for a generic moment model")
            start = np.zeros(data.D)
        lo, hi = start - config.box_halfwidth, start + config.box_halfwidth
    if start.size > 10:
        raise ValueError("REL outer search supports at most 10 parameters")

    g0 = np.asarray(moment_fn(data, start), dtype=float)
    n, m = g0.shape
    lam = default_lambda(n, m, config.lam_scale) if config.lam is None else float(config.lam)

    cache: dict[bytes, InnerResult] = {}
    failures = 0

    def inner_at(beta):
        nonlocal failures
        key = np.asarray(beta, dtype=float).tobytes()
        if key not in cache:
            try:
                H = moment_matrix(moment_fn(data, beta))
            except ValueError:
                cache[key] = InnerResult(False, -math.inf, None, Status.NUMERICAL_FAILURE)
            else:
                res = rel_inner(H, lam, config.solver)
                if res.status not in (Status.OPTIMAL, Status.PRIMAL_INFEASIBLE):
                    failures += 1
                cache[key] = res
        return cache[key]

    nm = nelder_mead(lambda b: -inner_at(b).loglik, start, lo, hi,
                     edge=config.outer_edge, tol=config.outer_tol,
                     max_eval=config.outer_max_eval, restarts=config.restarts)
    if not math.isfinite(nm.fun):
        raise RELInfeasibleError(
            f"all-infeasible: no feasible beta found with lambda={lam:.4g}; try a larger lambda")
    best = inner_at(nm.x)
    log.debug("REL done: %d evaluations, loglik %.6f", nm.nfev, best.loglik)
    return RELResult(beta_hat=nm.x, pi=best.pi, loglik=best.loglik, outer_evals=nm.nfev,
                     inner_failures=failures, lam=lam, converged=nm.converged,
                     duals=best.duals)
