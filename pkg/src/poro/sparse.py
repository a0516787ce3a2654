"""CSR sparse matrix container with the handful of operations the solvers need.

Matrices are immutable after construction and safe to share between
concurrent solver runs. All arithmetic that combines matrices goes through
a deterministic COO merge, so assembly order never depends on thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class SparseMatrix:
    """Compressed sparse row matrix with strictly increasing columns per row."""

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    symmetric: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # -- construction -------------------------------------------------------

    @classmethod
    def from_coo(cls, n_rows, n_cols, rows, cols, vals, symmetric=False):
        """Build from triplets; duplicate entries are summed deterministically."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if rows.size:
            if rows.min() < 0 or rows.max() >= n_rows:
                raise DimensionError("row index out of bounds")
            if cols.min() < 0 or cols.max() >= n_cols:
                raise DimensionError("column index out of bounds")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size:
            first = np.concatenate(([True], (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])))
            starts = np.flatnonzero(first)
            rows = rows[starts]
            cols = cols[starts]
            vals = np.add.reduceat(vals, starts)
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.add.at(offsets, rows + 1, 1)
        np.cumsum(offsets, out=offsets)
        return cls(n_rows, n_cols, offsets, cols, vals, symmetric)

    @classmethod
    def from_dense(cls, a, symmetric=False, tol=0.0):
        a = np.asarray(a, dtype=np.float64)
        rows, cols = np.nonzero(np.abs(a) > tol)
        return cls.from_coo(a.shape[0], a.shape[1], rows, cols, a[rows, cols], symmetric)

    @classmethod
    def identity(cls, n):
        idx = np.arange(n, dtype=np.int64)
        return cls(n, n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n), symmetric=True)

    @classmethod
    def from_diagonal(cls, d):
        d = np.asarray(d, dtype=np.float64)
        n = d.size
        idx = np.arange(n, dtype=np.int64)
        return cls(n, n, np.arange(n + 1, dtype=np.int64), idx, d.copy(), symmetric=True)

    @classmethod
    def zeros(cls, n_rows, n_cols):
        return cls(n_rows, n_cols, np.zeros(n_rows + 1, dtype=np.int64),
                   np.empty(0, dtype=np.int64), np.empty(0))

    # -- basic queries -------------------------------------------------------

    @property
    def nnz(self):
        return int(self.values.size)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    def to_dense(self):
        a = np.zeros((self.n_rows, self.n_cols))
        for i in range(self.n_rows):
            sl = slice(self.row_offsets[i], self.row_offsets[i + 1])
            a[i, self.col_indices[sl]] = self.values[sl]
        return a

    def diagonal(self):
        d = np.zeros(min(self.n_rows, self.n_cols))
        for i in range(d.size):
            sl = slice(self.row_offsets[i], self.row_offsets[i + 1])
            pos = np.searchsorted(self.col_indices[sl], i)
            if pos < sl.stop - sl.start and self.col_indices[sl.start + pos] == i:
                d[i] = self.values[sl.start + pos]
        return d

    # -- operations ----------------------------------------------------------

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_cols,):
            raise DimensionError(f"matvec: expected vector of length {self.n_cols}, got {x.shape}")
        return kernels.spmv(self.row_offsets, self.col_indices, self.values, x)

    def transpose(self):
        if "transpose" not in self._cache:
            rows = np.repeat(np.arange(self.n_rows, dtype=np.int64),
                             np.diff(self.row_offsets))
            t = SparseMatrix.from_coo(self.n_cols, self.n_rows, self.col_indices,
                                      rows, self.values, self.symmetric)
            self._cache["transpose"] = t
        return self._cache["transpose"]

    def scaled(self, s):
        return SparseMatrix(self.n_rows, self.n_cols, self.row_offsets,
                            self.col_indices, self.values * float(s), self.symmetric)

    def add(self, other, alpha=1.0):
        """Return self + alpha * other."""
        if self.shape != other.shape:
            raise DimensionError("add: shape mismatch")
        rows_a = np.repeat(np.arange(self.n_rows, dtype=np.int64), np.diff(self.row_offsets))
        rows_b = np.repeat(np.arange(other.n_rows, dtype=np.int64), np.diff(other.row_offsets))
        return SparseMatrix.from_coo(
            self.n_rows, self.n_cols,
            np.concatenate([rows_a, rows_b]),
            np.concatenate([self.col_indices, other.col_indices]),
            np.concatenate([self.values, alpha * other.values]),
            symmetric=self.symmetric and other.symmetric)

    def lower_triangle(self):
        """Lower triangle including the diagonal, as CSR (used by IC(0))."""
        keep = self.col_indices <= np.repeat(np.arange(self.n_rows, dtype=np.int64),
                                             np.diff(self.row_offsets))
        rows = np.repeat(np.arange(self.n_rows, dtype=np.int64), np.diff(self.row_offsets))
        return SparseMatrix.from_coo(self.n_rows, self.n_cols, rows[keep],
                                     self.col_indices[keep], self.values[keep])

    # -- validation ----------------------------------------------------------

    def validate(self):
        """Check the CSR invariants; raises ValueError on violation."""
        off = self.row_offsets
        if off.shape != (self.n_rows + 1,):
            raise ValueError("row_offsets has wrong length")
        if off[0] != 0 or off[-1] != self.values.size:
            raise ValueError("row_offsets endpoints inconsistent with values")
        if np.any(np.diff(off) < 0):
            raise ValueError("row_offsets not monotone")
        if self.col_indices.size:
            if self.col_indices.min() < 0 or self.col_indices.max() >= self.n_cols:
                raise ValueError("column index out of bounds")
        for i in range(self.n_rows):
            c = self.col_indices[off[i]:off[i + 1]]
            if c.size > 1 and np.any(np.diff(c) <= 0):
                raise ValueError(f"columns not strictly increasing in row {i}")
        if self.symmetric:
            if self.n_rows != self.n_cols:
                raise ValueError("symmetric flag on a non-square matrix")
            t = self.transpose()
            if (not np.array_equal(t.row_offsets, self.row_offsets)
                    or not np.array_equal(t.col_indices, self.col_indices)):
                raise ValueError("symmetric flag set but sparsity pattern is not symmetric")
            scale = np.maximum(np.abs(self.values), np.abs(t.values))
            bad = np.abs(self.values - t.values) > 1e-14 * np.maximum(scale, 1e-300)
            if np.any(bad):
                raise ValueError("symmetric flag set but entries disagree beyond 1e-14")
        return self


def spmv(a: SparseMatrix, x):
    """Matrix-vector product y_i = sum_j a_ij x_j with fixed per-row order."""
    return a.matvec(x)


# ---------------------------------------------------------------------------
# Matrix Market coordinate / array format
# ---------------------------------------------------------------------------

def write_matrix_market(a, path):
    """Write a SparseMatrix (coordinate format) or ndarray (array format)."""
    with open(path, "w", encoding="utf-8") as fh:
        if isinstance(a, SparseMatrix):
            sym = "symmetric" if a.symmetric else "general"
            fh.write(f"%%MatrixMarket matrix coordinate real {sym}\n")
            rows = np.repeat(np.arange(a.n_rows, dtype=np.int64), np.diff(a.row_offsets))
            cols = a.col_indices
            vals = a.values
            if a.symmetric:
                keep = rows >= cols
                rows, cols, vals = rows[keep], cols[keep], vals[keep]
            fh.write(f"{a.n_rows} {a.n_cols} {vals.size}\n")
            for r, c, v in zip(rows, cols, vals):
                fh.write(f"{r + 1} {c + 1} {v:.17g}\n")
        else:
            arr = np.atleast_2d(np.asarray(a, dtype=np.float64))
            if arr.shape[0] == 1 and arr.size > 1:
                arr = arr.T
            fh.write("%%MatrixMarket matrix array real general\n")
            fh.write(f"{arr.shape[0]} {arr.shape[1]}\n")
            for j in range(arr.shape[1]):
                for i in range(arr.shape[0]):
                    fh.write(f"{arr[i, j]:.17g}\n")


def read_matrix_market(path):
    """Read a Matrix Market file; returns SparseMatrix or ndarray per format."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("%%MatrixMarket"):
            raise ValueError(f"{path}: not a Matrix Market file")
        parts = header.strip().lower().split()
        fmt, sym = parts[2], parts[4]
        line = fh.readline()
        while line.startswith("%"):
            line = fh.readline()
        dims = line.split()
        if fmt == "array":
            m, n = int(dims[0]), int(dims[1])
            data = np.array([float(fh.readline()) for _ in range(m * n)])
            arr = data.reshape((n, m)).T
            return arr[:, 0] if n == 1 else arr
        m, n, nz = int(dims[0]), int(dims[1]), int(dims[2])
        rows = np.empty(nz, dtype=np.int64)
        cols = np.empty(nz, dtype=np.int64)
        vals = np.empty(nz)
        for k in range(nz):
            r, c, v = fh.readline().split()
            rows[k], cols[k], vals[k] = int(r) - 1, int(c) - 1, float(v)
        if sym == "symmetric":
            off = rows != cols
            rows = np.concatenate([rows, cols[off]])
            cols2 = np.concatenate([cols, rows[:nz][off]])
            vals = np.concatenate([vals, vals[off]])
            cols = cols2
        return SparseMatrix.from_coo(m, n, rows, cols, vals, symmetric=sym == "symmetric")
