"""Batch command line: ``conicon {solve,classo,rel,tune,study}``.

Exit codes: 0 success, 1 usage or I/O error, 2 infeasible, 3 numerical trouble.
Progress goes to stderr (level from ``CONICON_LOG``); results go to files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import problem as problem_io
from .classo import CLassoConfig, CLassoError, EmptyGroupError, classo_pls, information_criterion
from .panel import PanelError, read_panel_csv, within_demean
from .rel import IVData, RELConfig, RELInfeasibleError, rel_estimate
from .simulation import (StudyAbortError, StudyError, default_lambda_classo, load_study,
                         run_replications, summary_csv, summary_json)
from .solver import InvalidProblemError, SolverOptions, Status, solve

log = logging.getLogger("conicon")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        self.code = code
        super().__init__(message)


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, np.generic):
        return _jsonable(v.item())
    return v


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=1, sort_keys=True) + "\n")


def _opts(args) -> SolverOptions:
    if args.tol is None:
        return SolverOptions()
    if not args.tol > 0:
        raise CliError("--tol must be positive")
    return SolverOptions(feas_tol=args.tol, gap_tol=args.tol)


def _out(args, src: str, suffix: str) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d / f"{Path(src).stem}.{suffix}"


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise CliError(f"bad {what} list: {text!r}") from None


def _lambda(text: str, panel) -> float:
    if text == "auto":
        return default_lambda_classo(panel)
    try:
        v = float(text)
    except ValueError:
        raise CliError(f"lambda must be a number or 'auto', got {text!r}") from None
    if not (v >= 0 and math.isfinite(v)):
        raise CliError("lambda must be finite and nonnegative")
    return v


# -- commands --------------------------------------------------------------------

def cmd_solve(args) -> int:
    try:
        prob = problem_io.load(args.problem)
    except (OSError, problem_io.ProblemFormatError, ValueError) as exc:
        raise CliError(f"cannot read problem: {exc}") from exc
    try:
        sol = solve(prob, _opts(args))
    except InvalidProblemError as exc:
        raise CliError(str(exc)) from exc
    doc = {
        "status": sol.status.value, "objective": sol.objective, "gap": sol.gap,
        "x": sol.x, "y": sol.y, "iterations": sol.iterations,
        "dual_objective": sol.dual_objective,
        "kkt": None if sol.kkt is None else sol.kkt.__dict__,
        "certificate": sol.certificate,
    }
    _write_json(_out(args, args.problem, "solution.json"), doc)
    print(f"{sol.status.value} objective={sol.objective!r}")
    if sol.status is Status.OPTIMAL:
        return EXIT_OK
    if sol.status in (Status.PRIMAL_INFEASIBLE, Status.DUAL_INFEASIBLE):
        return EXIT_INFEASIBLE
    return EXIT_NUMERICAL


def _read_panel(path):
    try:
        return read_panel_csv(path)
    except OSError as exc:
        raise CliError(f"cannot read panel: {exc}") from exc
    except PanelError as exc:
        raise CliError(str(exc)) from exc


def _write_labels(path: Path, units, groups) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["unit", "group"])
        for u, g in zip(units, groups):
            wr.writerow([u, int(g)])


def cmd_classo(args) -> int:
    panel, units, _ = _read_panel(args.panel)
    panel = within_demean(panel)
    cfg = CLassoConfig(K=1, lam=0.0, seed=args.seed, solver=_opts(args))
    if args.ic:
        Ks = [int(k) for k in _floats(args.K_grid or str(args.K), "K")]
        lams = ([_lambda(t, panel) for t in args.lambda_grid.split(",")]
                if args.lambda_grid else [_lambda(args.lam, panel)])
        K, lam, table = information_criterion(panel, Ks, lams, cfg)
        log.info("IC picked K=%d lambda=%g", K, lam)
        _write_table(_out(args, args.panel, "summary.csv"), table)
    else:
        K, lam = args.K, _lambda(args.lam, panel)
    if K > panel.n:
        raise CliError(f"K={K} exceeds the number of units {panel.n}")
    res = classo_pls(panel, replace(cfg, K=K, lam=lam))
    doc = res.to_dict()
    doc["units"] = units
    _write_json(_out(args, args.panel, "solution.json"), doc)
    _write_labels(_out(args, args.panel, "labels.csv"), units, res.groups)
    print(f"OK K={K} lambda={lam!r} iterations={res.iterations} converged={res.converged}")
    return EXIT_OK


def _write_table(path: Path, table) -> None:
    cols = ["K", "lambda", "ic", "sigma2", "ok", "error"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(cols)
        for row in table:
            wr.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])


def cmd_tune(args) -> int:
    panel, _, _ = _read_panel(args.panel)
    panel = within_demean(panel)
    Ks = [int(k) for k in _floats(args.K_grid, "K")]
    if args.lambda_grid == "auto":
        base = default_lambda_classo(panel)
        lams = [base * c for c in (0.25, 0.5, 1.0, 2.0, 4.0)]
    else:
        lams = [_lambda(t, panel) for t in args.lambda_grid.split(",")]
    cfg = CLassoConfig(K=1, lam=0.0, seed=args.seed, solver=_opts(args))
    K, lam, table = information_criterion(panel, Ks, lams, cfg)
    _write_table(_out(args, args.panel, "summary.csv"), table)
    print(f"OK K={K} lambda={lam!r}")
    return EXIT_OK


def _read_iv(path) -> IVData:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise CliError(f"cannot read data: {exc}") from exc
    if not rows:
        raise CliError("empty CSV")
    header = [h.strip() for h in rows[0]]
    xi = [i for i, h in enumerate(header) if h.startswith("x")]
    zi = [i for i, h in enumerate(header) if h.startswith("z")]
    if "y" not in header or not xi or not zi:
        raise CliError("header must contain y, x1..xD and z1..zm columns")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise CliError(f"bad number in data: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise CliError("ragged CSV rows")
    return IVData(y=data[:, header.index("y")], x=data[:, xi], z=data[:, zi])


def cmd_rel(args) -> int:
    data = _read_iv(args.data)
    lam = None if args.lam == "auto" else float(args.lam)
    cfg = RELConfig(lam=lam, solver=_opts(args))
    try:
        res = rel_estimate(data, config=cfg)
    except RELInfeasibleError as exc:
        print(f"PRIMAL_INFEASIBLE {exc}")
        return EXIT_INFEASIBLE
    _write_json(_out(args, args.data, "solution.json"), res.to_dict())
    print(f"OK beta={res.beta_hat.tolist()} loglik={res.loglik!r}")
    return EXIT_OK


def cmd_study(args) -> int:
    try:
        study = load_study(args.study)
    except FileNotFoundError as exc:
        raise CliError(f"study not found: {exc}") from exc
    except StudyError as exc:
        raise CliError(str(exc)) from exc
    if args.seed_given:
        study = replace(study, base_seed=args.seed)
    if args.R is not None:
        try:
            study = replace(study, R=args.R)
        except StudyError as exc:
            raise CliError(str(exc)) from exc
    try:
        summaries = run_replications(study, workers=max(1, args.workers))
    except StudyAbortError as exc:
        raise CliError(str(exc), EXIT_NUMERICAL) from exc
    stem = Path(args.study).stem
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / f"{stem}.summary.csv").write_text(summary_csv(summaries))
    (d / f"{stem}.summary.json").write_text(summary_json(summaries) + "\n")
    for s in summaries:
        print(f"OK {s.cell} R={s.R} failures={s.failures} "
              + " ".join(f"{k}={v:.4f}" for k, v in sorted(s.metrics.items())))
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def _add_globals(p, top: bool):
    dflt = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
    p.add_argument("--seed", type=int, default=dflt(None), help="random seed")
    p.add_argument("--workers", type=int, default=dflt(1), help="worker processes for studies")
    p.add_argument("--tol", type=float, default=dflt(None), help="solver feasibility and gap tolerance")
    p.add_argument("--out-dir", default=dflt("."), help="directory for output files")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="conicon", description=__doc__.splitlines()[0])
    _add_globals(ap, True)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a serialized conic problem")
    p.add_argument("problem")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("classo", help="C-Lasso on a long-format panel CSV")
    p.add_argument("panel")
    p.add_argument("--K", type=int, default=3)
    p.add_argument("--lambda", dest="lam", default="auto")
    p.add_argument("--ic", action="store_true", help="pick K and lambda by the information criterion")
    p.add_argument("--K-grid", dest="K_grid")
    p.add_argument("--lambda-grid", dest="lambda_grid")
    p.set_defaults(func=cmd_classo)

    p = sub.add_parser("tune", help="information-criterion grid for C-Lasso")
    p.add_argument("panel")
    p.add_argument("--K-grid", dest="K_grid", default="1,2,3,4")
    p.add_argument("--lambda-grid", dest="lambda_grid", default="auto")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("rel", help="relaxed empirical likelihood on a linear IV CSV")
    p.add_argument("data")
    p.add_argument("--lambda", dest="lam", default="auto")
    p.set_defaults(func=cmd_rel)

    p = sub.add_parser("study", help="run a replication study JSON")
    p.add_argument("study")
    p.add_argument("--R", type=int, default=None, help="override the replication count")
    p.set_defaults(func=cmd_study)

    for name, sp_ in sub.choices.items():
        _add_globals(sp_, False)
    return ap


def main(argv=None) -> int:
    level = os.environ.get("CONICON_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    ap = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (CLassoError, EmptyGroupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
