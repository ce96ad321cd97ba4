"""Data-generating processes, Monte Carlo metrics and seeded replication studies."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources

import numpy as np

from .classo import CLassoConfig, classo_pls
from .formulations import moment_matrix
from .panel import PanelData, within_demean
from .rel import IVData, RELConfig, linear_iv_moments, rel_estimate

log = logging.getLogger(__name__)

ALPHA0 = ((0.4, 1.6), (1.0, 1.0), (1.6, 0.4))
BETA0 = (1.0, 1.0)
REL_SIGMA = ((0.25, 0.15, 0.15), (0.15, 0.25, 0.0), (0.15, 0.0, 0.25))


class StudyError(ValueError):
    pass


class StudyAbortError(RuntimeError):
    def __init__(self, message, records):
        self.records = records
        super().__init__(message)


# -- DGPs ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CLassoDgpSpec:
    n: int
    T: int
    seed: int = 0
    proportions: tuple = (0.3, 0.3, 0.4)
    alpha0: tuple = ALPHA0

    def __post_init__(self):
        if self.n < 1 or self.T < 1:
            raise ValueError("n and T must be positive")
        if abs(sum(self.proportions) - 1.0) > 1e-12 or min(self.proportions) < 0:
            raise ValueError("proportions must be nonnegative and sum to 1")
        if len(self.proportions) != len(self.alpha0):
            raise ValueError("one proportion per group truth")

    def group_sizes(self) -> np.ndarray:
        """Floor for all but the last group, which takes the remainder."""
        sizes = [math.floor(self.n * p + 1e-9) for p in self.proportions[:-1]]
        return np.array(sizes + [self.n - sum(sizes)], dtype=int)


def dgp_classo(spec: CLassoDgpSpec) -> tuple[PanelData, np.ndarray]:
    """Panel with three latent slope groups and fixed effects correlated with
    the regressors. Returns the raw panel and 1-based true labels."""
    rng = np.random.default_rng(spec.seed)
    n, T = spec.n, spec.T
    alpha0 = np.asarray(spec.alpha0, dtype=float)
    labels = np.repeat(np.arange(1, len(alpha0) + 1), spec.group_sizes())
    mu = rng.standard_normal(n)
    e = rng.standard_normal((n, T, alpha0.shape[1]))
    eps = rng.standard_normal((n, T))
    x = 0.2 * mu[:, None, None] + e
    y = np.einsum("itp,ip->it", x, alpha0[labels - 1]) + mu[:, None] + eps
    return PanelData(y=y, x=x), labels


@dataclass(frozen=True)
class RelDgpSpec:
    n: int
    m: int
    seed: int = 0
    beta0: tuple = BETA0
    sigma: tuple = REL_SIGMA

    def __post_init__(self):
        if self.m < 4:
            raise ValueError("the IV design needs m >= 4 instruments")
        S = np.asarray(self.sigma, dtype=float)
        if not np.allclose(S, S.T) or np.linalg.eigvalsh(S).min() <= 0:
            raise ValueError("error covariance must be symmetric positive definite")


def dgp_rel(spec: RelDgpSpec) -> IVData:
    """Linear IV model with two endogenous regressors, each driven by two of
    the first four instruments; the remaining instruments are irrelevant."""
    rng = np.random.default_rng(spec.seed)
    n, m = spec.n, spec.m
    z = rng.standard_normal((n, m))
    L = np.linalg.cholesky(np.asarray(spec.sigma, dtype=float))
    e = rng.standard_normal((n, 3)) @ L.T
    x = np.column_stack([0.5 * z[:, 0] + 0.5 * z[:, 1] + e[:, 1],
                         0.5 * z[:, 2] + 0.5 * z[:, 3] + e[:, 2]])
    y = x @ np.asarray(spec.beta0, dtype=float) + e[:, 0]
    return IVData(y=y, x=x, z=z)


def default_lambda_classo(panel: PanelData) -> float:
    """``0.5 * var(y) * T^(-1/3)`` on the demeaned outcome (denominator nT - 1)."""
    if not panel.demeaned:
        panel = within_demean(panel)
    return 0.5 * float(panel.y.var(ddof=1)) * panel.T ** (-1.0 / 3.0)


# -- metrics -------------------------------------------------------------------------

def _sorted_rows(a):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return a[np.lexsort(a.T[::-1])]


def alpha_sq_error(alpha, truths, group_sizes) -> float:
    """``sum_k (n_k / n) (a_k1 - a0_k1)^2`` after sorting both by the first coordinate."""
    w = np.asarray(group_sizes, dtype=float)
    w = w / w.sum()
    d = _sorted_rows(alpha)[:, 0] - _sorted_rows(truths)[:, 0]
    return float(np.sum(w * d * d))


def rmse_alpha(results, truths, group_sizes) -> float:
    """Root of the replication average of :func:`alpha_sq_error`."""
    results = list(results)
    if not results:
        raise ValueError("no replications")
    return math.sqrt(sum(alpha_sq_error(a, truths, group_sizes) for a in results) / len(results))


def correct_ratio(labels, true_labels) -> float:
    """Share of matching labels under the best renaming of estimated groups."""
    labels = np.asarray(labels, dtype=int)
    true_labels = np.asarray(true_labels, dtype=int)
    if labels.shape != true_labels.shape or labels.size == 0:
        raise ValueError("label vectors must be nonempty and the same length")
    est = np.unique(labels)
    tru = np.unique(true_labels)
    K = max(est.size, tru.size)
    if K > 8:
        raise ValueError("exhaustive alignment supports at most 8 groups")
    names = np.union1d(est, tru)
    idx_e = np.searchsorted(names, labels)
    idx_t = np.searchsorted(names, true_labels)
    C = np.zeros((names.size, names.size), dtype=np.int64)
    np.add.at(C, (idx_e, idx_t), 1)
    best = max(sum(C[i, p[i]] for i in range(names.size))
               for p in itertools.permutations(range(names.size)))
    return best / labels.size


def bias_rmse(beta_hats, beta_true) -> tuple[float, float]:
    """Bias and RMSE of the first coefficient."""
    b = np.asarray(beta_hats, dtype=float)
    b = b[:, 0] if b.ndim == 2 else b.reshape(-1)
    t = np.asarray(beta_true, dtype=float).reshape(-1)[0]
    if b.size == 0:
        raise ValueError("no replications")
    err = b - t
    return float(err.mean()), float(math.sqrt(np.mean(err * err)))


# -- studies -------------------------------------------------------------------------

@dataclass(frozen=True)
class StudySpec:
    """A replication study: one estimator over one or more design cells.

    ``cells`` holds ``{"n": .., "T": ..}`` for C-Lasso and ``{"n": .., "m": ..}``
    for REL. ``lam`` of ``None`` means the estimator's default rule.
    """

    estimator: str
    cells: tuple
    R: int
    base_seed: int = 1
    K: int = 3
    lam: float | None = None
    lam_scale: float = 1.0
    name: str = "study"
    max_fail_share: float = 0.10

    def __post_init__(self):
        if self.estimator not in ("classo", "rel"):
            raise StudyError(f"unknown estimator {self.estimator!r}")
        if int(self.R) < 1:
            raise StudyError("empty study")
        if not self.cells:
            raise StudyError("study has no cells")
        key = "T" if self.estimator == "classo" else "m"
        for c in self.cells:
            if set(c) != {"n", key}:
                raise StudyError(f"cell {c} must have exactly the keys n and {key}")

    @classmethod
    def from_dict(cls, d: dict) -> "StudySpec":
        d = dict(d)
        if "R" not in d or "estimator" not in d or "cells" not in d:
            raise StudyError("study needs estimator, cells and R")
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise StudyError(f"unknown study fields {sorted(extra)}")
        d["cells"] = tuple(dict((k, int(v)) for k, v in c.items()) for c in d["cells"])
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["cells"] = [dict(c) for c in self.cells]
        out["lambda"] = out.pop("lam")
        return out


def load_study(path) -> StudySpec:
    """Read a study JSON file; bare names resolve to the bundled studies."""
    p = os.fspath(path)
    if not os.path.exists(p):
        name = os.path.basename(p)
        name = name if name.endswith(".json") else name + ".json"
        res = resources.files("conicon") / "studies" / name
        if not res.is_file():
            raise FileNotFoundError(p)
        text = res.read_text()
    else:
        with open(p) as fh:
            text = fh.read()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StudyError(f"bad study JSON: {exc}") from exc
    return StudySpec.from_dict(d)


@dataclass
class ReplicationSummary:
    estimator: str
    cell: dict
    R: int
    metrics: dict
    records: list = field(default_factory=list)

    @property
    def failures(self) -> int:
        return sum(1 for r in self.records if not r["ok"])

    def to_dict(self) -> dict:
        return {"estimator": self.estimator, "cell": self.cell, "R": self.R,
                "failures": self.failures, "metrics": self.metrics, "records": self.records}


def _classo_record(study: StudySpec, cell: dict, seed: int) -> dict:
    spec = CLassoDgpSpec(n=cell["n"], T=cell["T"], seed=seed)
    raw, truth = dgp_classo(spec)
    panel = within_demean(raw)
    lam = default_lambda_classo(panel) * study.lam_scale if study.lam is None else study.lam
    rec = {"seed": seed, "ok": False, "error": "", "lambda": lam}
    try:
        res = classo_pls(panel, CLassoConfig(K=study.K, lam=lam, seed=seed))
    except Exception as exc:  # recorded, excluded from metrics
        rec["error"] = f"{type(exc).__name__}: {exc}"
        return rec
    sizes = spec.group_sizes()
    a0 = np.asarray(spec.alpha0)
    post_ok = bool(np.all(np.isfinite(res.alpha_post)))
    rec.update(
        ok=True,
        correct_ratio=correct_ratio(res.groups, truth),
        sq_err_post=alpha_sq_error(res.alpha_post, a0, sizes) if post_ok else None,
        sq_err_pen=alpha_sq_error(res.alpha, a0, sizes),
        alpha=res.alpha.tolist(),
        alpha_post=[[None if not math.isfinite(v) else v for v in row]
                    for row in res.alpha_post.tolist()],
        iterations=res.iterations,
        converged=res.converged,
        objective_start=res.objective_trace[0],
        objective_end=res.objective_trace[-1],
    )
    return rec


def _rel_record(study: StudySpec, cell: dict, seed: int) -> dict:
    spec = RelDgpSpec(n=cell["n"], m=cell["m"], seed=seed)
    data = dgp_rel(spec)
    rec = {"seed": seed, "ok": False, "error": ""}
    try:
        res = rel_estimate(data, config=RELConfig(lam=study.lam, lam_scale=study.lam_scale))
    except Exception as exc:
        rec["error"] = f"{type(exc).__name__}: {exc}"
        return rec
    # weight diagnostics, so the invariants can be audited from the records
    H = moment_matrix(linear_iv_moments(data, res.beta_hat)).H
    rec.update(ok=True, beta_hat=res.beta_hat.tolist(), lambda_=res.lam, loglik=res.loglik,
               outer_evals=res.outer_evals, inner_failures=res.inner_failures,
               converged=res.converged, pi_sum=float(res.pi.sum()), pi_min=float(res.pi.min()),
               pi_max=float(res.pi.max()),
               slack_excess=float(np.max(np.abs(res.pi @ H)) - res.lam))
    rec["lambda"] = rec.pop("lambda_")
    return rec


def _task(args):
    study, cell, seed = args
    fn = _classo_record if study.estimator == "classo" else _rel_record
    return fn(study, cell, seed)


def summarize(estimator: str, cell: dict, records: list) -> ReplicationSummary:
    """Metrics from per-seed records; failed seeds are excluded."""
    good = [r for r in records if r["ok"]]
    metrics: dict = {}
    if estimator == "classo":
        if good:
            metrics["correct_ratio"] = float(np.mean([r["correct_ratio"] for r in good]))
            metrics["rmse_penalized"] = math.sqrt(float(np.mean([r["sq_err_pen"] for r in good])))
            post = [r["sq_err_post"] for r in good if r["sq_err_post"] is not None]
            metrics["rmse"] = math.sqrt(float(np.mean(post))) if post else math.nan
        else:
            metrics.update(correct_ratio=math.nan, rmse_penalized=math.nan, rmse=math.nan)
    else:
        if good:
            bias, rmse = bias_rmse([r["beta_hat"] for r in good], BETA0)
        else:
            bias = rmse = math.nan
        metrics.update(bias=bias, rmse=rmse)
    return ReplicationSummary(estimator, dict(cell), len(records), metrics, records)


def run_replications(study: StudySpec, workers: int = 1) -> list[ReplicationSummary]:
    """Run every cell of ``study``; replication ``i`` uses seed ``base_seed + i``.

    Results are merged in seed order, so the output does not depend on
    ``workers``. Raises :class:`StudyAbortError` when a cell loses more than
    ``max_fail_share`` of its replications.
    """
    out = []
    for cell in study.cells:
        tasks = [(study, cell, study.base_seed + i) for i in range(study.R)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                records = list(pool.map(_task, tasks, chunksize=1))
        else:
            records = [_task(t) for t in tasks]
        records.sort(key=lambda r: r["seed"])
        summ = summarize(study.estimator, cell, records)
        log.info("cell %s: %s (%d failures)", cell, summ.metrics, summ.failures)
        if summ.failures > study.max_fail_share * study.R:
            causes = sorted({r["error"] for r in records if not r["ok"]})
            raise StudyAbortError(
                f"cell {cell}: {summ.failures} of {study.R} replications failed; causes: "
                + "; ".join(causes[:5]), records)
        out.append(summ)
    return out


CLASSO_COLUMNS = ["estimator", "n", "T", "R", "failures", "rmse", "rmse_penalized", "correct_ratio"]
REL_COLUMNS = ["estimator", "n", "m", "R", "failures", "bias", "rmse"]


def summary_csv(summaries: list[ReplicationSummary]) -> str:
    """One row per cell; floats written with ``repr`` so reruns are byte-identical."""
    if not summaries:
        raise ValueError("no summaries")
    cols = CLASSO_COLUMNS if summaries[0].estimator == "classo" else REL_COLUMNS
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(cols)
    for s in summaries:
        row = {"estimator": s.estimator, "R": s.R, "failures": s.failures, **s.cell, **s.metrics}
        wr.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
    return buf.getvalue()


def summary_json(summaries: list[ReplicationSummary]) -> str:
    return json.dumps([s.to_dict() for s in summaries], indent=1, sort_keys=True)
