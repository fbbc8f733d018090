"""Matrix Market and plain-text vector files.

Only real-valued matrices are supported (``real``, ``double`` and ``integer``
fields) in either ``coordinate`` or ``array`` layout, with ``general``,
``symmetric`` or ``skew-symmetric`` symmetry.  Indices in files are 1-based.
"""

from __future__ import annotations

import numpy as np

from .linop import CsrMatrix

_REAL_FIELDS = {"real", "double", "integer"}
_SYMMETRIES = {"general", "symmetric", "skew-symmetric"}


class MatrixMarketError(ValueError):
    pass


def _data_lines(fh):
    for lineno, line in enumerate(fh, start=2):
        s = line.strip()
        if s and not s.startswith("%"):
            yield lineno, s


def read_matrix_market(path) -> CsrMatrix:
    """Read a Matrix Market file into a :class:`CsrMatrix`.

    Symmetric and skew-symmetric files store one triangle; the other is
    filled in.  Duplicate coordinate entries are summed.
    """
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline()
        tokens = header.strip().lower().split()
        if len(tokens) != 5 or tokens[0] != "%%matrixmarket" or tokens[1] != "matrix":
            raise MatrixMarketError(f"{path}: malformed header {header.strip()!r}")
        layout, field, symmetry = tokens[2:]
        if layout not in ("coordinate", "array"):
            raise MatrixMarketError(f"{path}: unknown layout {layout!r}")
        if field not in _REAL_FIELDS:
            raise MatrixMarketError(f"{path}: unsupported field {field!r}")
        if symmetry not in _SYMMETRIES:
            raise MatrixMarketError(f"{path}: unsupported symmetry {symmetry!r}")
        lines = _data_lines(fh)
        try:
            lineno, size_line = next(lines)
        except StopIteration:
            raise MatrixMarketError(f"{path}: missing size line") from None
        try:
            dims = [int(t) for t in size_line.split()]
        except ValueError:
            raise MatrixMarketError(f"{path}:{lineno}: bad size line {size_line!r}") from None
        if layout == "coordinate":
            if len(dims) != 3:
                raise MatrixMarketError(f"{path}:{lineno}: coordinate size line needs 3 integers")
            m, n, nnz = dims
            rows, cols, vals = _read_coordinate(path, lines, m, n, nnz)
        else:
            if len(dims) != 2:
                raise MatrixMarketError(f"{path}:{lineno}: array size line needs 2 integers")
            m, n = dims
            rows, cols, vals = _read_array(path, lines, m, n, symmetry)
    if m < 1 or n < 1:
        raise MatrixMarketError(f"{path}: nonpositive dimensions {m}x{n}")
    if symmetry != "general":
        if m != n:
            raise MatrixMarketError(f"{path}: {symmetry} matrix must be square")
        off = rows != cols
        sign = -1.0 if symmetry == "skew-symmetric" else 1.0
        rows, cols, vals = (np.concatenate((rows, cols[off])),
                            np.concatenate((cols, rows[off])),
                            np.concatenate((vals, sign * vals[off])))
    return CsrMatrix.from_coo(m, n, rows, cols, vals)


def _read_coordinate(path, lines, m, n, nnz):
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz)
    count = 0
    for lineno, s in lines:
        if count == nnz:
            raise MatrixMarketError(f"{path}:{lineno}: more entries than declared ({nnz})")
        parts = s.split()
        if len(parts) != 3:
            raise MatrixMarketError(f"{path}:{lineno}: expected 'row col value', got {s!r}")
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise MatrixMarketError(f"{path}:{lineno}: cannot parse {s!r}") from None
        if not (1 <= i <= m and 1 <= j <= n):
            raise MatrixMarketError(f"{path}:{lineno}: index ({i},{j}) outside {m}x{n}")
        rows[count], cols[count], vals[count] = i - 1, j - 1, v
        count += 1
    if count != nnz:
        raise MatrixMarketError(f"{path}: declared {nnz} entries, found {count}")
    return rows, cols, vals


def _read_array(path, lines, m, n, symmetry):
    values = []
    for lineno, s in lines:
        try:
            values.append(float(s))
        except ValueError:
            raise MatrixMarketError(f"{path}:{lineno}: cannot parse {s!r}") from None
    # column-major; symmetric files hold the lower triangle, skew files the strict lower
    if symmetry == "general":
        jj, ii = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
        ii, jj = ii.ravel(), jj.ravel()
    else:
        strict = symmetry == "skew-symmetric"
        pairs = [(i, j) for j in range(n) for i in range(j + int(strict), m)]
        ii = np.array([p[0] for p in pairs], dtype=np.int64)
        jj = np.array([p[1] for p in pairs], dtype=np.int64)
    if len(values) != len(ii):
        raise MatrixMarketError(f"{path}: expected {len(ii)} array values, found {len(values)}")
    vals = np.asarray(values)
    keep = vals != 0
    return ii[keep], jj[keep], vals[keep]


def write_matrix_market(path, A: CsrMatrix, comment: str | None = None) -> None:
    """Write ``coordinate real general`` with 17 significant digits."""
    rows = np.repeat(np.arange(A.nrows), np.diff(A.row_starts))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        if comment:
            for line in comment.splitlines():
                fh.write(f"% {line}\n")
        fh.write(f"{A.nrows} {A.ncols} {A.nnz}\n")
        for i, j, v in zip(rows, A.col_indices, A.values):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")


def read_vector(path) -> np.ndarray:
    """One decimal number per line; blank lines and ``%``/``#`` comments are skipped."""
    out = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s[0] in "%#":
                continue
            try:
                out.append(float(s))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: not a number: {s!r}") from None
    return np.asarray(out, dtype=float)


def write_vector(path, x) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for v in np.asarray(x, dtype=float):
            fh.write(f"{v:.17g}\n")
