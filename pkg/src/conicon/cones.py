"""Jordan-algebra operations on a product of a nonnegative orthant and
second-order cones, plus Nesterov-Todd scaling.

A slack vector is laid out as ``[nonneg (l entries) | soc_1 | soc_2 | ...]``
and every operation works on the whole vector at once.
"""

from __future__ import annotations

import numpy as np


class ConeProduct:
    def __init__(self, l: int, soc_sizes):
        self.l = int(l)
        self.q = np.asarray(soc_sizes, dtype=np.int64).reshape(-1)
        self.nsoc = int(self.q.size)
        self.dim = self.l + int(self.q.sum())
        # local offsets into the soc part
        self.starts = (np.cumsum(self.q) - self.q).astype(np.int64)
        self.seg = np.repeat(np.arange(self.nsoc), self.q)
        self.head = np.zeros(int(self.q.sum()), dtype=bool)
        self.head[self.starts] = True
        self.jsign = np.where(self.head, 1.0, -1.0)
        self.degree = self.l + self.nsoc
        # coordinates of the dense W^{-2} blocks within the soc part
        rows, cols = [], []
        for st, qq in zip(self.starts, self.q):
            r = np.repeat(np.arange(qq), qq) + st
            c = np.tile(np.arange(qq), qq) + st
            rows.append(r)
            cols.append(c)
        if rows:
            self.blk_rows = np.concatenate(rows)
            self.blk_cols = np.concatenate(cols)
        else:
            self.blk_rows = np.zeros(0, dtype=np.int64)
            self.blk_cols = np.zeros(0, dtype=np.int64)
        self.blk_seg = self.seg[self.blk_rows] if self.blk_rows.size else self.blk_rows

    # -- helpers ---------------------------------------------------------
    def _split(self, u):
        return u[: self.l], u[self.l:]

    def _cdot(self, a, b):
        """Per-cone inner products of the soc parts."""
        if self.nsoc == 0:
            return np.zeros(0)
        return np.add.reduceat(a * b, self.starts)

    def identity(self) -> np.ndarray:
        e = np.ones(self.dim)
        e[self.l:] = np.where(self.head, 1.0, 0.0)
        return e

    def inner(self, u, v) -> float:
        return float(u @ v)

    # -- Jordan algebra --------------------------------------------------
    def jprod(self, u, v):
        ul, us = self._split(u)
        vl, vs = self._split(v)
        out = np.empty(self.dim)
        out[: self.l] = ul * vl
        if self.nsoc:
            u0 = us[self.starts]
            v0 = vs[self.starts]
            res = u0[self.seg] * vs + v0[self.seg] * us
            res[self.starts] = self._cdot(us, vs)
            out[self.l:] = res
        return out

    def jdiv(self, u, v):
        """Solve ``u o x = v`` for ``x`` (u in the interior)."""
        ul, us = self._split(u)
        vl, vs = self._split(v)
        out = np.empty(self.dim)
        out[: self.l] = vl / ul
        if self.nsoc:
            u0 = us[self.starts]
            v0 = vs[self.starts]
            tail_uv = self._cdot(us, vs) - u0 * v0
            tail_uu = self._cdot(us, us) - u0 * u0
            det = u0 * u0 - tail_uu
            x0 = (u0 * v0 - tail_uv) / det
            res = (vs - x0[self.seg] * us) / u0[self.seg]
            res[self.starts] = x0
            out[self.l:] = res
        return out

    def jdet(self, u):
        """u0^2 - ||u1||^2 per cone."""
        us = u[self.l:]
        u0 = us[self.starts]
        return u0 * u0 - (self._cdot(us, us) - u0 * u0)

    def margin(self, u) -> float:
        """Smallest distance-like measure to the boundary (positive iff interior)."""
        vals = []
        if self.l:
            vals.append(u[: self.l].min())
        if self.nsoc:
            us = u[self.l:]
            u0 = us[self.starts]
            nt = np.sqrt(np.maximum(self._cdot(us, us) - u0 * u0, 0.0))
            vals.append((u0 - nt).min())
        return min(vals) if vals else np.inf

    def shift_interior(self, u):
        """Return ``u + (1 + a) e`` if ``u`` is outside the interior, else ``u``."""
        a = -self.margin(u)
        if self.dim == 0 or a < 0:
            return u.copy()
        return u + (1.0 + a) * self.identity()

    def max_step(self, u, du) -> float:
        """Largest ``t`` with ``u + t du`` in the cone (``inf`` if unbounded)."""
        t = np.inf
        if self.l:
            ul, dl = u[: self.l], du[: self.l]
            neg = dl < 0
            if np.any(neg):
                t = min(t, float(np.min(-ul[neg] / dl[neg])))
        if self.nsoc:
            us, ds = u[self.l:], du[self.l:]
            u0, d0 = us[self.starts], ds[self.starts]
            a = 2 * d0 * d0 - self._cdot(ds, ds)
            b = 2 * (2 * u0 * d0 - self._cdot(us, ds))
            c = 2 * u0 * u0 - self._cdot(us, us)
            c = np.maximum(c, 0.0)
            disc = b * b - 4 * a * c
            sq = np.sqrt(np.maximum(disc, 0.0))
            with np.errstate(divide="ignore", invalid="ignore"):
                den1 = -b + sq
                den2 = -b - sq
                r1 = np.where(den1 > 0, 2 * c / den1, np.inf)
                r2 = np.where(den2 > 0, 2 * c / den2, np.inf)
            r = np.minimum(r1, r2)
            r = np.where((disc < 0) & (a >= 0), np.inf, r)
            with np.errstate(divide="ignore", invalid="ignore"):
                rh = np.where(d0 < 0, -u0 / d0, np.inf)
            t = min(t, float(np.min(np.minimum(r, rh))))
        return t

    # -- Nesterov-Todd scaling -------------------------------------------
    def nt_scaling(self, s, z):
        sl, ss = self._split(s)
        zl, zs = self._split(z)
        sc = {"d": np.sqrt(sl / zl)}
        if self.nsoc:
            s0, z0 = ss[self.starts], zs[self.starts]
            sdet = np.maximum(s0 * s0 - (self._cdot(ss, ss) - s0 * s0), 1e-300)
            zdet = np.maximum(z0 * z0 - (self._cdot(zs, zs) - z0 * z0), 1e-300)
            sn = ss / np.sqrt(sdet)[self.seg]
            zn = zs / np.sqrt(zdet)[self.seg]
            gam = np.sqrt(np.maximum((1.0 + self._cdot(sn, zn)) / 2.0, 1e-300))
            wbar = (sn + self.jsign * zn) / (2.0 * gam[self.seg])
            # W = beta (2 v v' - J) with v = (wbar + e) / sqrt(2 (wbar_0 + 1))
            w0 = wbar[self.starts]
            v = wbar + self.head
            v = v / np.sqrt(2.0 * (w0 + 1.0))[self.seg]
            sc["beta"] = (sdet / zdet) ** 0.25
            sc["w"] = v
        return sc

    def scale(self, sc, v, inverse=False):
        """Apply ``W`` (or ``W^{-1}``) to ``v``."""
        out = np.empty(self.dim)
        out[: self.l] = v[: self.l] / sc["d"] if inverse else v[: self.l] * sc["d"]
        if self.nsoc:
            vs = v[self.l:]
            w = sc["w"]
            beta = sc["beta"]
            if inverse:
                u = self.jsign * w
                proj = self._cdot(u, vs)
                res = (2.0 * u * proj[self.seg] - self.jsign * vs) / beta[self.seg]
            else:
                proj = self._cdot(w, vs)
                res = beta[self.seg] * (2.0 * w * proj[self.seg] - self.jsign * vs)
            out[self.l:] = res
        return out

    def inv_sq_blocks(self, sc):
        """Data of ``W^{-2}``: diagonal for the orthant, block values for the
        cones in (blk_rows, blk_cols) order."""
        diag = 1.0 / sc["d"] ** 2
        if not self.nsoc:
            return diag, np.zeros(0)
        u = self.jsign * sc["w"]
        uu = self._cdot(u, u)
        r, c = self.blk_rows, self.blk_cols
        k = self.blk_seg
        vals = u[r] * u[c] * (4.0 * uu[k] - 2.0 * self.jsign[c] - 2.0 * self.jsign[r])
        vals = vals + (r == c)
        vals = vals / (sc["beta"][k] ** 2)
        return diag, vals
