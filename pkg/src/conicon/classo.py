"""Classifier-Lasso (penalized least squares) for latent group structure in
panel slopes.

The K-convex objective

    (1/nT) sum_it (y_it - x_it' b_i)^2 + (lam/n) sum_i prod_k ||b_i - a_k||

is attacked one center at a time. In substep ``k`` of round ``r`` the other
centers enter only through the multiplier ``gamma_i``, which turns the problem
into a convex program in ``(b, a_k)`` that is handed to the conic solver.
Every substep keeps its own copy of the slopes, so ``gamma_i`` is built from
the freshest ``(b^(k), a_k)`` pair of each other center.
"""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.cluster.vq import kmeans2

from .formulations import SubstepInput, classo_substep_conic, decode_substep
from .panel import PanelData, PanelError, pooled_ols, unit_ols, within_demean
from .solver import SolverOptions, solve

log = logging.getLogger(__name__)


class CLassoError(RuntimeError):
    """A substep did not solve; ``round`` and ``group`` are 1-based."""

    def __init__(self, round_: int, group: int, status, detail: str = ""):
        self.round = round_
        self.group = group
        self.status = status
        super().__init__(f"substep failed at round {round_}, group {group}: {status} {detail}".rstrip())


class EmptyGroupError(ValueError):
    def __init__(self, groups):
        self.groups = tuple(int(g) for g in groups)
        super().__init__(f"empty group(s) {list(self.groups)}")


@dataclass(frozen=True)
class CLassoConfig:
    K: int
    lam: float
    max_outer_iter: int = 50
    conv_tol: float = 1e-4
    gamma_floor: float = 1e-8
    kmeans_restarts: int = 10
    seed: int = 0
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if int(self.K) < 1:
            raise ValueError("K must be at least 1")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be finite and nonnegative, got {self.lam}")
        if not self.conv_tol > 0:
            raise ValueError("conv_tol must be positive")
        if self.gamma_floor < 0:
            raise ValueError("gamma_floor must be nonnegative")


@dataclass(eq=False)
class CLassoResult:
    """Slopes ``beta`` (n, p), centers ``alpha`` (K, p), labels ``groups``
    in ``1..K`` and the group-wise pooled refit ``alpha_post``."""

    beta: np.ndarray
    alpha: np.ndarray
    groups: np.ndarray
    alpha_post: np.ndarray
    iterations: int
    converged: bool
    objective_trace: list[float]
    lam: float = math.nan

    @property
    def K(self) -> int:
        return self.alpha.shape[0]

    def relabel(self, perm) -> "CLassoResult":
        """Rename group ``k`` (1-based) to ``perm[k - 1]``."""
        perm = np.asarray(perm, dtype=int)
        inv = np.argsort(perm)
        return replace(self, alpha=self.alpha[inv], alpha_post=self.alpha_post[inv],
                       groups=perm[self.groups - 1])

    def canonical(self) -> "CLassoResult":
        """Relabel so the rows of ``alpha`` ascend in their first coordinate."""
        order = np.lexsort(self.alpha.T[::-1])
        perm = np.empty(self.K, dtype=int)
        perm[order] = np.arange(1, self.K + 1)
        return self.relabel(perm)

    def to_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "alpha": self.alpha.tolist(),
            "groups": [int(g) for g in self.groups],
            "alpha_post": [[None if not math.isfinite(v) else v for v in row]
                           for row in self.alpha_post.tolist()],
            "iterations": self.iterations,
            "converged": self.converged,
            "objective_trace": list(self.objective_trace),
            "lambda": self.lam,
        }


# -- pieces ---------------------------------------------------------------------

def classify(beta, alpha) -> np.ndarray:
    """Label each unit with its nearest center (1-based; ties go to the
    smallest index)."""
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    d = np.linalg.norm(beta[:, None, :] - alpha[None, :, :], axis=2)
    return np.argmin(d, axis=1) + 1


def post_lasso(panel: PanelData, labels, K: int | None = None) -> np.ndarray:
    """Pooled least squares within each estimated group, shape (K, p)."""
    labels = np.asarray(labels, dtype=int)
    K = int(labels.max()) if K is None else int(K)
    empty = [k for k in range(1, K + 1) if not np.any(labels == k)]
    if empty:
        raise EmptyGroupError(empty)
    return np.stack([pooled_ols(panel, np.flatnonzero(labels == k)) for k in range(1, K + 1)])


def full_objective(panel: PanelData, beta, alpha, lam: float) -> float:
    resid = panel.y - np.einsum("itp,ip->it", panel.x, beta)
    d = np.linalg.norm(beta[:, None, :] - alpha[None, :, :], axis=2)
    return float((resid ** 2).sum() / (panel.n * panel.T) + lam / panel.n * np.prod(d, axis=1).sum())


def _init_centers(b0: np.ndarray, K: int, restarts: int, seed: int) -> np.ndarray:
    """k-means++ on the unit slopes, best inertia over ``restarts`` runs.

    Units are put in lexicographic order first so the result does not depend
    on how the panel happens to be sorted.
    """
    if K == 1:
        return b0.mean(axis=0, keepdims=True)
    data = b0[np.lexsort(b0.T[::-1])]
    rng = np.random.default_rng(seed)
    best, best_in = None, np.inf
    for _ in range(max(1, restarts)):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cent, lab = kmeans2(data, K, iter=50, minit="++", seed=rng)
        inertia = float(((data - cent[lab]) ** 2).sum())
        if len(np.unique(lab)) == K and inertia < best_in:
            best, best_in = cent, inertia
    if best is None:
        raise CLassoError(0, 0, "init", "k-means found fewer distinct groups than K")
    return best[np.lexsort(best.T[::-1])]


def _penalty_weights(B, A, k, floor):
    """``prod_{j != k} ||B[:, :, j] - A[j]||`` floored at ``floor``."""
    K = A.shape[0]
    g = np.ones(B.shape[0])
    for j in range(K):
        if j != k:
            g *= np.linalg.norm(B[:, :, j] - A[j], axis=1)
    return np.maximum(g, floor)


# -- driver ---------------------------------------------------------------------

def classo_pls(panel: PanelData, config: CLassoConfig) -> CLassoResult:
    if not panel.demeaned:
        panel = within_demean(panel)
    n, T, p = panel.n, panel.T, panel.p
    K = int(config.K)
    if K > n:
        raise ValueError(f"K={K} exceeds the number of units n={n}")
    if n * T <= p:
        raise PanelError("need nT > p")
    lam = float(config.lam)

    b0 = unit_ols(panel)
    A = _init_centers(b0, K, config.kmeans_restarts, config.seed)
    B = np.repeat(b0[:, :, None], K, axis=2)
    trace = [full_objective(panel, b0, A, lam)]

    converged = False
    r = 0
    for r in range(1, config.max_outer_iter + 1):
        B_old, A_old = B.copy(), A.copy()
        for k in range(K):
            gamma = _penalty_weights(B, A, k, config.gamma_floor)
            prob = classo_substep_conic(SubstepInput(panel, k + 1, gamma, lam))
            sol = solve(prob, config.solver)
            if not sol.ok:
                raise CLassoError(r, k + 1, sol.status.value, sol.info.get("hint", ""))
            B[:, :, k], A[k] = decode_substep(sol.x, n, T, p)
        beta, _ = _select(B, A)
        trace.append(full_objective(panel, beta, A, lam))
        change = max(np.max(np.abs(B - B_old)), np.max(np.abs(A - A_old)))
        log.debug("round %d change %.3e objective %.6f", r, change, trace[-1])
        if change < config.conv_tol:
            converged = True
            break

    beta, groups = _select(B, A)
    # empty groups are left as NaN rows rather than failing the fit
    alpha_post = np.full((K, p), np.nan)
    for k in range(1, K + 1):
        if np.any(groups == k):
            alpha_post[k - 1] = pooled_ols(panel, np.flatnonzero(groups == k))
    res = CLassoResult(beta=beta, alpha=A.copy(), groups=groups, alpha_post=alpha_post,
                       iterations=r, converged=converged, objective_trace=trace, lam=lam)
    return res.canonical()


def _select(B, A):
    """Per unit, take the substep copy closest to its own center."""
    d = np.stack([np.linalg.norm(B[:, :, k] - A[k], axis=1) for k in range(A.shape[0])], axis=1)
    lab = np.argmin(d, axis=1)
    beta = B[np.arange(B.shape[0]), :, lab]
    return beta, lab + 1


# -- tuning ----------------------------------------------------------------------

def ic_value(panel: PanelData, groups, alpha_post) -> tuple[float, float]:
    """``(IC, sigma2)`` with ``IC = log sigma2 + (2/3) (nT)^(-1/2) p K``."""
    if not panel.demeaned:
        panel = within_demean(panel)
    fit = np.einsum("itp,ip->it", panel.x, alpha_post[np.asarray(groups) - 1])
    sigma2 = float(((panel.y - fit) ** 2).mean())
    K = alpha_post.shape[0]
    rho = (2.0 / 3.0) / math.sqrt(panel.n * panel.T)
    return math.log(sigma2) + rho * panel.p * K, sigma2


def information_criterion(panel: PanelData, K_grid, lambda_grid, config: CLassoConfig):
    """Fit every ``(K, lam)`` cell and return ``(K*, lam*, table)``.

    ``table`` has one dict per cell; cells whose fit fails carry ``ok=False``
    and the error text and are left out of the minimization.
    """
    K_grid, lambda_grid = list(K_grid), list(lambda_grid)
    if not K_grid or not lambda_grid:
        raise ValueError("K and lambda grids must be nonempty")
    if not panel.demeaned:
        panel = within_demean(panel)
    table = []
    for K, lam in itertools.product(K_grid, lambda_grid):
        row = {"K": int(K), "lambda": float(lam), "ic": math.nan, "sigma2": math.nan,
               "ok": False, "error": ""}
        try:
            res = classo_pls(panel, replace(config, K=int(K), lam=float(lam)))
            if not np.all(np.isfinite(res.alpha_post)):
                raise EmptyGroupError([k + 1 for k in range(res.K)
                                       if not np.all(np.isfinite(res.alpha_post[k]))])
            row["ic"], row["sigma2"] = ic_value(panel, res.groups, res.alpha_post)
            row["ok"] = True
        except (CLassoError, EmptyGroupError, ValueError, np.linalg.LinAlgError) as exc:
            row["error"] = str(exc)
            log.warning("IC cell K=%s lambda=%g failed: %s", K, lam, exc)
        table.append(row)
    good = [row for row in table if row["ok"]]
    if not good:
        raise RuntimeError("every information-criterion cell failed")
    best = min(good, key=lambda row: row["ic"])
    return best["K"], best["lambda"], table
