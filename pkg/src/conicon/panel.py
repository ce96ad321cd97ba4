"""Balanced panel container, within transformation and CSV I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np


class PanelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PanelData:
    """Balanced panel with ``y`` of shape (n, T) and ``x`` of shape (n, T, p)."""

    y: np.ndarray
    x: np.ndarray
    demeaned: bool = False

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 2:
            x = x[:, :, None]
        if y.ndim != 2 or x.ndim != 3 or x.shape[:2] != y.shape:
            raise PanelError(f"inconsistent panel shapes y{y.shape} x{x.shape}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise PanelError("panel has missing or non-finite cells")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def T(self) -> int:
        return self.y.shape[1]

    @property
    def p(self) -> int:
        return self.x.shape[2]

    def take(self, units) -> "PanelData":
        units = np.asarray(units)
        return replace(self, y=self.y[units], x=self.x[units])


def within_demean(panel: PanelData) -> PanelData:
    """Subtract per-unit time means from ``y`` and every regressor."""
    if panel.T < 2:
        raise PanelError("within transformation needs T >= 2")
    y = panel.y - panel.y.mean(axis=1, keepdims=True)
    x = panel.x - panel.x.mean(axis=1, keepdims=True)
    return PanelData(y=y, x=x, demeaned=True)


def unit_ols(panel: PanelData) -> np.ndarray:
    """Per-unit least squares slopes, shape (n, p)."""
    out = np.empty((panel.n, panel.p))
    for i in range(panel.n):
        out[i] = np.linalg.lstsq(panel.x[i], panel.y[i], rcond=None)[0]
    return out


def pooled_ols(panel: PanelData, units=None) -> np.ndarray:
    if units is not None:
        panel = panel.take(units)
    X = panel.x.reshape(-1, panel.p)
    return np.linalg.lstsq(X, panel.y.reshape(-1), rcond=None)[0]


# -- CSV ---------------------------------------------------------------------

def read_panel_csv(path) -> tuple[PanelData, list, list]:
    """Read a long-format CSV with header ``unit,period,y,x1..xp``.

    Returns the panel plus the sorted unit and period labels. Raises
    :class:`PanelError` ("panel not balanced") on missing or duplicate cells.
    """
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        try:
            header = [h.strip() for h in next(rd)]
        except StopIteration:
            raise PanelError("empty CSV") from None
        if header[:3] != ["unit", "period", "y"] or len(header) < 4:
            raise PanelError("header must be unit,period,y,x1..xp")
        rows = [r for r in rd if r and any(c.strip() for c in r)]
    p = len(header) - 3
    cells = {}
    for k, r in enumerate(rows):
        if len(r) != p + 3:
            raise PanelError(f"row {k + 2} has {len(r)} fields, expected {p + 3}")
        key = (r[0].strip(), r[1].strip())
        if key in cells:
            raise PanelError(f"panel not balanced: duplicate cell {key}")
        try:
            cells[key] = [float(v) for v in r[2:]]
        except ValueError as exc:
            raise PanelError(f"row {k + 2}: {exc}") from exc

    def _key(v):
        try:
            return (0, float(v), v)
        except ValueError:
            return (1, 0.0, v)

    units = sorted({k[0] for k in cells}, key=_key)
    periods = sorted({k[1] for k in cells}, key=_key)
    if len(cells) != len(units) * len(periods):
        raise PanelError("panel not balanced")
    y = np.empty((len(units), len(periods)))
    x = np.empty((len(units), len(periods), p))
    for i, u in enumerate(units):
        for t, s in enumerate(periods):
            vals = cells[(u, s)]
            y[i, t] = vals[0]
            x[i, t] = vals[1:]
    return PanelData(y=y, x=x), units, periods


def write_panel_csv(panel: PanelData, path, units=None, periods=None) -> None:
    units = units if units is not None else list(range(1, panel.n + 1))
    periods = periods if periods is not None else list(range(1, panel.T + 1))
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["unit", "period", "y"] + [f"x{j + 1}" for j in range(panel.p)])
        for i, u in enumerate(units):
            for t, s in enumerate(periods):
                wr.writerow([u, s, repr(float(panel.y[i, t]))]
                            + [repr(float(v)) for v in panel.x[i, t]])
