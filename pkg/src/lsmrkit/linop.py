"""Linear operators with forward and adjoint products.

The solvers only ever touch ``A`` through :func:`apply` and
:func:`apply_adjoint`, so anything that can form ``A @ v`` and ``A.T @ u``
can be plugged in.  Two concrete storage backends are provided: a compressed
sparse row matrix and a dense matrix (used mainly by the test oracles).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = np.finfo(float).eps


class DimensionError(ValueError):
    """A vector does not match the operator dimension it is applied to."""


class ScalingError(ValueError):
    """Column scaling is impossible (zero column or zero right-hand side)."""


class LinearOperator:
    """Abstract ``m x n`` real operator.

    Subclasses implement ``_matvec`` and ``_rmatvec``; dimension checks are
    done once in :meth:`matvec` / :meth:`rmatvec`.
    """

    def __init__(self, nrows: int, ncols: int):
        if nrows < 1 or ncols < 1:
            raise DimensionError(f"operator dimensions must be positive, got {nrows}x{ncols}")
        self.nrows = int(nrows)
        self.ncols = int(ncols)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)

    def matvec(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.ncols,):
            raise DimensionError(f"forward product expects length {self.ncols}, got shape {v.shape}")
        return self._matvec(v)

    def rmatvec(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.nrows,):
            raise DimensionError(f"adjoint product expects length {self.nrows}, got shape {u.shape}")
        return self._rmatvec(u)

    def _matvec(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _rmatvec(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def frobenius_norm(self) -> float:
        """Frobenius norm, by materializing columns unless a subclass knows better."""
        return float(np.linalg.norm(to_dense(self)))

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.nrows}x{self.ncols}>"


def apply(op: LinearOperator, v) -> np.ndarray:
    """Return ``A @ v``."""
    return op.matvec(v)


def apply_adjoint(op: LinearOperator, u) -> np.ndarray:
    """Return ``A.T @ u``."""
    return op.rmatvec(u)


class IdentityOperator(LinearOperator):
    def __init__(self, n: int):
        super().__init__(n, n)

    def _matvec(self, v):
        return v.copy()

    def _rmatvec(self, u):
        return u.copy()

    def frobenius_norm(self) -> float:
        return float(np.sqrt(self.ncols))


class ZeroOperator(LinearOperator):
    def _matvec(self, v):
        return np.zeros(self.nrows)

    def _rmatvec(self, u):
        return np.zeros(self.ncols)

    def frobenius_norm(self) -> float:
        return 0.0


class DenseMatrix(LinearOperator):
    """Row-major dense matrix backend."""

    def __init__(self, entries):
        a = np.array(entries, dtype=float, order="C")
        if a.ndim != 2:
            raise DimensionError(f"dense matrix needs a 2-D array, got ndim={a.ndim}")
        if not np.all(np.isfinite(a)):
            raise ValueError("dense matrix entries must be finite")
        super().__init__(*a.shape)
        a.flags.writeable = False
        self.array = a

    def _matvec(self, v):
        return self.array @ v

    def _rmatvec(self, u):
        return self.array.T @ u

    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.array))


class CsrMatrix(LinearOperator):
    """Compressed sparse row matrix.

    ``row_starts`` has ``nrows + 1`` entries; row ``i`` owns the slice
    ``row_starts[i]:row_starts[i+1]`` of ``col_indices`` and ``values``.
    Column indices are strictly increasing within a row.
    """

    def __init__(self, nrows, ncols, row_starts, col_indices, values):
        super().__init__(nrows, ncols)
        row_starts = np.asarray(row_starts, dtype=np.int64)
        col_indices = np.asarray(col_indices, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        if row_starts.shape != (self.nrows + 1,):
            raise ValueError("row_starts must have nrows + 1 entries")
        if col_indices.shape != values.shape or col_indices.ndim != 1:
            raise ValueError("col_indices and values must be 1-D and of equal length")
        if row_starts[0] != 0 or row_starts[-1] != len(values) or np.any(np.diff(row_starts) < 0):
            raise ValueError("row_starts must be nondecreasing from 0 to the number of entries")
        if len(col_indices) and (col_indices.min() < 0 or col_indices.max() >= self.ncols):
            raise ValueError("column index out of range")
        row_of = np.repeat(np.arange(self.nrows), np.diff(row_starts))
        if len(col_indices) > 1:
            same_row = row_of[1:] == row_of[:-1]
            if np.any(same_row & (col_indices[1:] <= col_indices[:-1])):
                raise ValueError("column indices must be strictly increasing within each row")
        for arr in (row_starts, col_indices, values, row_of):
            arr.flags.writeable = False
        self.row_starts = row_starts
        self.col_indices = col_indices
        self.values = values
        self._row_of = row_of

    @classmethod
    def from_coo(cls, nrows, ncols, rows, cols, vals) -> "CsrMatrix":
        """Build from 0-based triplets, summing duplicates."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        if len(rows) and (rows.min() < 0 or rows.max() >= nrows or cols.min() < 0 or cols.max() >= ncols):
            raise ValueError("triplet index out of range")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if len(rows):
            new = np.ones(len(rows), dtype=bool)
            new[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            starts = np.flatnonzero(new)
            vals = np.add.reduceat(vals, starts)
            rows, cols = rows[starts], cols[starts]
        counts = np.bincount(rows, minlength=nrows)
        row_starts = np.concatenate(([0], np.cumsum(counts)))
        return cls(nrows, ncols, row_starts, cols, vals)

    @classmethod
    def from_dense(cls, a) -> "CsrMatrix":
        a = np.asarray(a, dtype=float)
        rows, cols = np.nonzero(a)
        return cls.from_coo(a.shape[0], a.shape[1], rows, cols, a[rows, cols])

    @property
    def nnz(self) -> int:
        return len(self.values)

    def _matvec(self, v):
        return np.bincount(self._row_of, weights=self.values * v[self.col_indices], minlength=self.nrows)

    def _rmatvec(self, u):
        return np.bincount(self.col_indices, weights=self.values * u[self._row_of], minlength=self.ncols)

    def column_norms(self) -> np.ndarray:
        return np.sqrt(np.bincount(self.col_indices, weights=self.values**2, minlength=self.ncols))

    def scale_columns(self, factors) -> "CsrMatrix":
        factors = np.asarray(factors, dtype=float)
        return CsrMatrix(self.nrows, self.ncols, self.row_starts, self.col_indices,
                         self.values * factors[self.col_indices])

    def transpose(self) -> "CsrMatrix":
        return CsrMatrix.from_coo(self.ncols, self.nrows, self.col_indices, self._row_of, self.values)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self._row_of, self.col_indices] = self.values
        return out

    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.values))


class AugmentedOperator(LinearOperator):
    """The stacked operator ``[A; lam * I]`` of a damped least-squares problem."""

    def __init__(self, op: LinearOperator, lam: float):
        super().__init__(op.nrows + op.ncols, op.ncols)
        self.op = op
        self.lam = float(lam)

    def _matvec(self, v):
        return np.concatenate((self.op.matvec(v), self.lam * v))

    def _rmatvec(self, u):
        m = self.op.nrows
        return self.op.rmatvec(u[:m]) + self.lam * u[m:]


class CountingOperator(LinearOperator):
    """Wraps an operator and counts forward and adjoint products."""

    def __init__(self, op: LinearOperator):
        super().__init__(op.nrows, op.ncols)
        self.op = op
        self.forward_calls = 0
        self.adjoint_calls = 0

    def _matvec(self, v):
        self.forward_calls += 1
        return self.op.matvec(v)

    def _rmatvec(self, u):
        self.adjoint_calls += 1
        return self.op.rmatvec(u)


def as_operator(a) -> LinearOperator:
    """Accept a :class:`LinearOperator` or anything convertible to a dense 2-D array."""
    if isinstance(a, LinearOperator):
        return a
    return DenseMatrix(a)


def to_dense(op: LinearOperator) -> np.ndarray:
    """Materialize an operator column by column (desk-scale use only)."""
    if isinstance(op, DenseMatrix):
        return op.array.copy()
    if isinstance(op, CsrMatrix):
        return op.to_dense()
    cols = [op.matvec(e) for e in np.eye(op.ncols)]
    return np.column_stack(cols)


@dataclass(frozen=True)
class ScalingReport:
    """Norms removed by :func:`column_unit_scale`, needed to map solutions back."""

    column_norms_before: np.ndarray
    rhs_norm_before: float

    def unscale(self, x_scaled) -> np.ndarray:
        """Solution of the original problem from the scaled one."""
        return np.asarray(x_scaled) / self.column_norms_before * self.rhs_norm_before


def column_unit_scale(A, b):
    """Scale the columns of ``A`` and ``b`` to unit 2-norm.

    Returns ``(A_scaled, b_scaled, report)``.  ``A`` may be a :class:`CsrMatrix`
    or a :class:`DenseMatrix`; the result has the same type.

    Raises
    ------
    ScalingError
        If any column of ``A`` is zero, or ``b`` is zero.
    """
    b = np.asarray(b, dtype=float)
    if b.shape != (A.nrows,):
        raise DimensionError(f"rhs must have length {A.nrows}, got shape {b.shape}")
    if isinstance(A, CsrMatrix):
        norms = A.column_norms()
    elif isinstance(A, DenseMatrix):
        norms = np.linalg.norm(A.array, axis=0)
    else:
        raise TypeError(f"cannot scale columns of {type(A).__name__}")
    zero = np.flatnonzero(norms == 0)
    if len(zero):
        raise ScalingError(f"{len(zero)} zero column(s) in A, first at index {zero[0]}")
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0:
        raise ScalingError("right-hand side is zero")
    if isinstance(A, CsrMatrix):
        scaled = A.scale_columns(1.0 / norms)
    else:
        scaled = DenseMatrix(A.array / norms)
    report = ScalingReport(column_norms_before=norms, rhs_norm_before=bnorm)
    return scaled, b / bnorm, report
