"""Problem model: linear objective, separable log/exp terms, ranged rows,
variable bounds and quadratic cones.

A problem reads::

    min/max  c'x + sum_k f_k * phi_k(g_k * x[j_k] + h_k)
    s.t.     blc <= A x <= buc
             blx <=   x <= bux
             x[cone[0]] >= ||x[cone[1:]]||_2   for each cone

with ``phi`` either ``log`` or ``exp``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .sparse import SparseMatrix

FORMAT_NAME = "conicon-problem"
FORMAT_VERSION = 1


class Sense(str, Enum):
    MIN = "min"
    MAX = "max"


class TermKind(str, Enum):
    LOG = "LOG"
    EXP = "EXP"


@dataclass(frozen=True)
class QuadCone:
    """``x[indices[0]] >= ||x[indices[1:]]||_2``; the first index is the head."""

    indices: tuple[int, ...]

    def __init__(self, indices: Sequence[int]):
        object.__setattr__(self, "indices", tuple(int(i) for i in indices))

    @property
    def head(self) -> int:
        return self.indices[0]

    @property
    def tail(self) -> tuple[int, ...]:
        return self.indices[1:]

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class SeparableTerm:
    """Adds ``f * log(g * x[j] + h)`` or ``f * exp(g * x[j] + h)`` to the objective."""

    kind: TermKind
    j: int
    f: float
    g: float = 1.0
    h: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", TermKind(self.kind))
        object.__setattr__(self, "j", int(self.j))
        for name in ("f", "g", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))


def _vec(v, n=None, fill=0.0) -> np.ndarray:
    if v is None:
        return np.full(n, fill, dtype=float)
    return np.array(v, dtype=float).reshape(-1)


@dataclass(eq=False)
class ConicProblem:
    c: np.ndarray
    A: SparseMatrix
    blc: np.ndarray | None = None
    buc: np.ndarray | None = None
    blx: np.ndarray | None = None
    bux: np.ndarray | None = None
    cones: list[QuadCone] = field(default_factory=list)
    separable: list[SeparableTerm] = field(default_factory=list)
    sense: Sense = Sense.MIN

    def __post_init__(self):
        self.sense = Sense(self.sense)
        self.c = _vec(self.c)
        if not isinstance(self.A, SparseMatrix):
            if sp.issparse(self.A):
                self.A = SparseMatrix.from_scipy(self.A)
            else:
                arr = np.asarray(self.A, dtype=float)
                if arr.size == 0:
                    arr = arr.reshape(arr.shape[0] if arr.ndim == 2 else 0, self.c.size)
                self.A = SparseMatrix.from_dense(arr) if arr.size else SparseMatrix.zeros(*arr.shape)
        m, n = self.A.shape
        self.blc = _vec(self.blc, m, -np.inf)
        self.buc = _vec(self.buc, m, np.inf)
        self.blx = _vec(self.blx, n, -np.inf)
        self.bux = _vec(self.bux, n, np.inf)
        self.cones = [cn if isinstance(cn, QuadCone) else QuadCone(cn) for cn in self.cones]
        self.separable = [t if isinstance(t, SeparableTerm) else SeparableTerm(*t)
                          for t in self.separable]

    @property
    def n(self) -> int:
        return int(self.c.size)

    @property
    def m(self) -> int:
        return self.A.rows

    def objective(self, x: np.ndarray) -> float:
        """Objective in the problem's own sense."""
        x = np.asarray(x, dtype=float)
        return float(self.c @ x + separable_value(self.separable, x))


# -- separable terms --------------------------------------------------------

def _term_arrays(terms: Sequence[SeparableTerm]):
    is_log = np.array([t.kind is TermKind.LOG for t in terms], dtype=bool)
    j = np.array([t.j for t in terms], dtype=np.int64)
    f = np.array([t.f for t in terms], dtype=float)
    g = np.array([t.g for t in terms], dtype=float)
    h = np.array([t.h for t in terms], dtype=float)
    return is_log, j, f, g, h


def separable_value(terms: Sequence[SeparableTerm], x: np.ndarray) -> float:
    if not terms:
        return 0.0
    is_log, j, f, g, h = _term_arrays(terms)
    u = g * x[j] + h
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        val = np.where(is_log, np.log(np.where(is_log, u, 1.0)),
                       np.exp(np.where(is_log, 0.0, u)))
        if np.any(is_log & (u <= 0)):
            return -math.inf if np.all(f[is_log & (u <= 0)] > 0) else math.inf
        return float(np.sum(f * val))


# -- validation -------------------------------------------------------------

@dataclass(frozen=True)
class Diagnostic:
    path: str
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code} on {self.path}: {self.message}"


def validate(problem: ConicProblem) -> list[Diagnostic]:
    """Check every structural invariant; an empty list means the problem is
    well formed."""
    out: list[Diagnostic] = []
    A = problem.A
    for msg in A.check():
        out.append(Diagnostic("A", "invalid-sparse", msg))
    m, n = A.rows, A.cols
    for name, vec, size in (("c", problem.c, n), ("blx", problem.blx, n),
                            ("bux", problem.bux, n), ("blc", problem.blc, m),
                            ("buc", problem.buc, m)):
        if vec.size != size:
            out.append(Diagnostic(name, "dimension-mismatch",
                                  f"length {vec.size}, expected {size}"))
    if not np.all(np.isfinite(problem.c)):
        out.append(Diagnostic("c", "non-finite", "objective has NaN/inf"))
    for lo, hi, label in (("blc", "buc", "constraint"), ("blx", "bux", "variable")):
        lv, hv = getattr(problem, lo), getattr(problem, hi)
        if lv.size == hv.size:
            if np.any(np.isnan(lv)) or np.any(np.isnan(hv)):
                out.append(Diagnostic(lo, "nan-bound", f"{label} bound is NaN"))
            bad = np.flatnonzero(lv > hv)
            for i in bad[:10]:
                out.append(Diagnostic(f"{lo}[{i}]", "crossed-bounds",
                                      f"{label} lower {lv[i]} > upper {hv[i]}"))
            bad = np.flatnonzero((lv == np.inf) | (hv == -np.inf))
            for i in bad[:10]:
                out.append(Diagnostic(f"{lo}[{i}]", "infinite-bound",
                                      f"{label} bound excludes every value"))
    owner: dict[int, int] = {}
    for k, cone in enumerate(problem.cones):
        idx = cone.indices
        path = f"cones[{k}]"
        if len(idx) < 1:
            out.append(Diagnostic(path, "empty-cone", "cone has no members"))
            continue
        bad = [i for i in idx if i < 0 or i >= n]
        if bad:
            out.append(Diagnostic(path, "index-out-of-range",
                                  f"indices {bad} not in [0, {n})"))
        if len(set(idx)) != len(idx):
            out.append(Diagnostic(path, "repeated-index", "cone member listed twice"))
        for i in set(idx):
            if i in owner:
                out.append(Diagnostic(path, "shared-variable",
                                      f"variable {i} already in cones[{owner[i]}]"))
            else:
                owner[i] = k
    for k, t in enumerate(problem.separable):
        path = f"separable[{k}]"
        if not (0 <= t.j < n):
            out.append(Diagnostic(path, "index-out-of-range", f"j={t.j} not in [0, {n})"))
            continue
        if not all(math.isfinite(v) for v in (t.f, t.g, t.h)):
            out.append(Diagnostic(path, "non-finite", "f, g, h must be finite"))
            continue
        # convexity of the minimization form
        f_min = t.f if problem.sense is Sense.MIN else -t.f
        if t.kind is TermKind.LOG:
            if f_min > 0:
                out.append(Diagnostic(path, "nonconvex", "LOG term must be concave in the objective sense"))
            if t.g == 0 and t.h <= 0:
                out.append(Diagnostic(path, "empty-domain", "log argument is constant and nonpositive"))
            elif t.g != 0 and n == problem.blx.size:
                lo, hi = problem.blx[t.j], problem.bux[t.j]
                # domain g*x + h > 0 must meet the variable box
                if t.g > 0 and hi < np.inf and t.g * hi + t.h <= 0:
                    out.append(Diagnostic(path, "empty-domain", "bounds exclude log domain"))
                if t.g < 0 and lo > -np.inf and t.g * lo + t.h <= 0:
                    out.append(Diagnostic(path, "empty-domain", "bounds exclude log domain"))
        elif f_min < 0:
            out.append(Diagnostic(path, "nonconvex", "EXP term must be convex in the objective sense"))
    return out


# -- JSON -------------------------------------------------------------------

def _enc(v: np.ndarray) -> list:
    return [("inf" if x > 0 else "-inf") if math.isinf(x) else float(x) for x in v]


def _dec(v) -> np.ndarray:
    return np.array([float(x) for x in v], dtype=float)


class ProblemFormatError(ValueError):
    pass


def problem_to_dict(problem: ConicProblem) -> dict:
    A = problem.A
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "sense": problem.sense.value,
        "c": _enc(problem.c),
        "A": {
            "rows": A.rows,
            "cols": A.cols,
            "col_offsets": [int(i) for i in A.col_offsets],
            "row_indices": [int(i) for i in A.row_indices],
            "values": _enc(A.values),
        },
        "blc": _enc(problem.blc),
        "buc": _enc(problem.buc),
        "blx": _enc(problem.blx),
        "bux": _enc(problem.bux),
        "cones": [{"indices": list(cn.indices)} for cn in problem.cones],
        "separable": [{"kind": t.kind.value, "j": t.j, "f": t.f, "g": t.g, "h": t.h}
                      for t in problem.separable],
    }


def problem_from_dict(doc: dict) -> ConicProblem:
    """Parse a problem document. Raises :class:`ProblemFormatError` naming the
    offending field."""
    path = "$"
    try:
        if not isinstance(doc, dict):
            raise ProblemFormatError("$: expected an object")
        version = doc.get("version", FORMAT_VERSION)
        if version != FORMAT_VERSION:
            raise ProblemFormatError(f"$.version: unsupported version {version!r}")
        path = "$.A"
        a = doc["A"]
        A = SparseMatrix(
            rows=int(a["rows"]), cols=int(a["cols"]),
            col_offsets=np.array(a["col_offsets"], dtype=np.int64),
            row_indices=np.array(a["row_indices"], dtype=np.int64),
            values=_dec(a["values"]),
        )
        kw = {}
        for key in ("c", "blc", "buc", "blx", "bux"):
            path = f"$.{key}"
            kw[key] = _dec(doc[key])
        path = "$.cones"
        cones = [QuadCone(cn["indices"]) for cn in doc.get("cones", [])]
        path = "$.separable"
        terms = [SeparableTerm(t["kind"], t["j"], t["f"], t.get("g", 1.0), t.get("h", 0.0))
                 for t in doc.get("separable", [])]
        path = "$.sense"
        sense = Sense(doc.get("sense", "min"))
    except ProblemFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ProblemFormatError(f"{path}: {exc!r}") from exc
    return ConicProblem(sense=sense, A=A, cones=cones, separable=terms, **kw)


def dumps(problem: ConicProblem, **kw) -> str:
    return json.dumps(problem_to_dict(problem), **kw)


def loads(text: str) -> ConicProblem:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFormatError(f"$: malformed JSON ({exc.msg} at line {exc.lineno})") from exc
    return problem_from_dict(doc)


def save(problem: ConicProblem, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(problem, indent=1))


def load(path) -> ConicProblem:
    with open(path) as fh:
        return loads(fh.read())
