"""Column-compressed sparse matrix used for constraint data.

The solver hands the arithmetic to :mod:`scipy.sparse`; this class owns the
storage invariants and the exact, serializable representation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Immutable CSC matrix.

    Attributes
    ----------
    rows, cols : int
        Shape of the matrix.
    col_offsets : (cols + 1,) int array
        ``row_indices[col_offsets[j]:col_offsets[j + 1]]`` are the stored rows
        of column ``j``.
    row_indices : (nnz,) int array
        Strictly increasing within each column.
    values : (nnz,) float array
        Nonzero values; explicit zeros are not allowed.
    """

    rows: int
    cols: int
    col_offsets: np.ndarray
    row_indices: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    # -- constructors -----------------------------------------------------
    @classmethod
    def from_scipy(cls, mat) -> "SparseMatrix":
        csc = sp.csc_matrix(mat, dtype=float, copy=True)
        csc.eliminate_zeros()
        csc.sum_duplicates()
        csc.sort_indices()
        return cls(
            rows=int(csc.shape[0]),
            cols=int(csc.shape[1]),
            col_offsets=np.asarray(csc.indptr, dtype=np.int64),
            row_indices=np.asarray(csc.indices, dtype=np.int64),
            values=np.asarray(csc.data, dtype=float),
        )

    @classmethod
    def from_dense(cls, arr) -> "SparseMatrix":
        arr = np.atleast_2d(np.asarray(arr, dtype=float))
        return cls.from_scipy(sp.csc_matrix(arr))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "SparseMatrix":
        return cls(rows, cols, np.zeros(cols + 1, dtype=np.int64),
                   np.zeros(0, dtype=np.int64), np.zeros(0))

    # -- conversions ------------------------------------------------------
    def to_scipy(self) -> sp.csc_matrix:
        return sp.csc_matrix(
            (self.values, self.row_indices, self.col_offsets),
            shape=(self.rows, self.cols),
        )

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.to_scipy() @ np.asarray(x, dtype=float)

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        return self.to_scipy().T @ np.asarray(y, dtype=float)

    # -- invariants -------------------------------------------------------
    def check(self) -> list[str]:
        """Return a list of storage-invariant violations (empty when valid)."""
        errs = []
        if self.rows < 0 or self.cols < 0:
            errs.append("negative shape")
            return errs
        off = np.asarray(self.col_offsets)
        if off.shape != (self.cols + 1,):
            errs.append(f"col_offsets has length {off.size}, expected {self.cols + 1}")
            return errs
        if off[0] != 0 or np.any(np.diff(off) < 0):
            errs.append("col_offsets not nondecreasing from 0")
            return errs
        nnz = int(off[-1])
        if self.row_indices.size != nnz or self.values.size != nnz:
            errs.append("row_indices/values length does not match col_offsets[-1]")
            return errs
        ri = np.asarray(self.row_indices)
        if nnz and (ri.min() < 0 or ri.max() >= self.rows):
            errs.append("row index out of range")
        for j in range(self.cols):
            seg = ri[off[j]:off[j + 1]]
            if seg.size > 1 and np.any(np.diff(seg) <= 0):
                errs.append(f"row indices not strictly increasing in column {j}")
                break
        vals = np.asarray(self.values)
        if np.any(vals == 0):
            errs.append("explicit zero stored")
        if not np.all(np.isfinite(vals)):
            errs.append("non-finite value stored")
        return errs

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.col_offsets, other.col_offsets)
                and np.array_equal(self.row_indices, other.row_indices)
                and np.array_equal(self.values, other.values))

    def __repr__(self) -> str:
        return f"SparseMatrix({self.rows}x{self.cols}, nnz={self.nnz})"
