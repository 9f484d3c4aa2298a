"""Sparse symmetric storage, vector/dense validation, and Matrix Market IO.

``SparseSymMatrix`` pins the storage contract used everywhere else: both
triangles stored explicitly in compressed-row form, columns sorted within
each row, no explicitly stored zeros, and mirrored entries bit-identical.
Matrix-vector products delegate to scipy's CSR kernel (zero-copy view over
the same arrays) and funnel through a global per-matrix counter so that
solver cost accounting stays exact.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from hiereig.errors import AsymmetricMatrixError, DimensionMismatchError, InputFormatError


class MatvecCounter:
    """Atomic tally of matvec calls keyed by matrix label."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counts: dict[str, int] = {}

    def bump(self, label: str) -> None:
        with self._lock:
            self._counts[label] = self._counts.get(label, 0) + 1

    def get(self, label: str) -> int:
        with self._lock:
            return self._counts.get(label, 0)

    def total(self) -> int:
        with self._lock:
            return sum(self._counts.values())

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(self._counts)

    def reset(self) -> None:
        with self._lock:
            self._counts.clear()


MATVEC_COUNTER = MatvecCounter()


def as_vector(values, length: int | None = None) -> np.ndarray:
    """Validate and return a finite 1-D float64 vector."""
    x = np.ascontiguousarray(values, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatchError(f"expected 1-D vector, got shape {x.shape}")
    if length is not None and x.shape[0] != length:
        raise DimensionMismatchError(f"expected length {length}, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.isfinite(x))[0])
        raise ValueError(f"non-finite entry at index {bad}")
    return x


def as_dense(values, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Validate and return a finite 2-D float64 array (column-major)."""
    a = np.asfortranarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatchError(f"expected 2-D array, got shape {a.shape}")
    if rows is not None and a.shape[0] != rows:
        raise DimensionMismatchError(f"expected {rows} rows, got {a.shape[0]}")
    if cols is not None and a.shape[1] != cols:
        raise DimensionMismatchError(f"expected {cols} cols, got {a.shape[1]}")
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite entry in dense matrix")
    return a


class SparseSymMatrix:
    """Symmetric sparse matrix with both triangles stored in CSR layout.

    Invariants enforced at construction: row_offsets monotone, col_indices
    strictly increasing within each row, stored values finite and nonzero,
    and the (i, j) value bit-identical to the (j, i) value.
    """

    __slots__ = ("dim", "row_offsets", "col_indices", "values", "label", "_csr")

    def __init__(self, dim, row_offsets, col_indices, values, label="A", _skip_checks=False):
        self.dim = int(dim)
        self.row_offsets = np.ascontiguousarray(row_offsets, dtype=np.int64)
        self.col_indices = np.ascontiguousarray(col_indices, dtype=np.int64)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.label = label
        self._csr = None
        if not _skip_checks:
            self._validate()

    def _validate(self):
        if self.dim <= 0:
            raise ValueError("matrix dimension must be positive")
        if self.row_offsets.shape[0] != self.dim + 1 or self.row_offsets[0] != 0:
            raise ValueError("malformed row_offsets")
        if np.any(np.diff(self.row_offsets) < 0):
            raise ValueError("row_offsets must be nondecreasing")
        if self.col_indices.shape[0] != self.values.shape[0]:
            raise ValueError("col_indices/values length mismatch")
        if self.values.size and (self.col_indices.min() < 0 or self.col_indices.max() >= self.dim):
            raise ValueError("column index out of range")
        for i in range(self.dim):
            cols = self.col_indices[self.row_offsets[i]:self.row_offsets[i + 1]]
            if cols.size > 1 and np.any(np.diff(cols) <= 0):
                raise ValueError(f"columns not strictly increasing in row {i}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite stored value")
        if np.any(self.values == 0.0):
            raise ValueError("explicitly stored zero entry")
        csr = self.to_scipy()
        if (csr != csr.T).nnz != 0:
            raise AsymmetricMatrixError("stored triangles are not bit-identical")

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_coo(cls, rows, cols, vals, dim: int, label: str = "A",
                 mode: str = "check", rel_tol: float = 1e-12) -> "SparseSymMatrix":
        """Build from COO triplets.

        mode="mirror": triplets give one triangle (or a symmetric subset);
        missing mirror entries are added. mode="check": triplets must already
        contain symmetric content within ``rel_tol`` relative; the upper
        triangle value is stored on both sides so mirrored entries are
        bit-identical.
        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        coo = sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim))
        coo.sum_duplicates()
        a = coo.tocsr()
        at = a.T.tocsr()
        if mode == "mirror":
            lower = sp.tril(a, k=-1)
            upper = sp.triu(a, k=1)
            if lower.nnz and upper.nnz:
                diff = (lower - upper.T)
                if diff.nnz and np.max(np.abs(diff.data)) > rel_tol * max(np.max(np.abs(a.data)), 1.0):
                    raise AsymmetricMatrixError("mirror mode given conflicting triangles")
                tri = upper.tocoo()
            else:
                tri = (upper + lower.T).tocoo()
            diag = a.diagonal()
            r = np.concatenate([tri.row, tri.col, np.arange(dim)])
            c = np.concatenate([tri.col, tri.row, np.arange(dim)])
            v = np.concatenate([tri.data, tri.data, diag])
            full = sp.coo_matrix((v, (r, c)), shape=(dim, dim)).tocsr()
        else:
            d = a - at
            if d.nnz:
                scale = np.max(np.abs(a.data)) if a.nnz else 1.0
                bad = np.argmax(np.abs(d.data))
                if np.abs(d.data[bad]) > rel_tol * scale:
                    dc = d.tocoo()
                    i, j = int(dc.row[bad]), int(dc.col[bad])
                    raise AsymmetricMatrixError(
                        f"asymmetric content at entry ({i}, {j}): "
                        f"|a_ij - a_ji| = {abs(d.data[bad]):.3e}")
            # store the upper-triangle value on both sides: bit-identical mirror
            up = sp.triu(a, k=0).tocoo()
            mask = up.row != up.col
            r = np.concatenate([up.row, up.col[mask]])
            c = np.concatenate([up.col, up.row[mask]])
            v = np.concatenate([up.data, up.data[mask]])
            full = sp.coo_matrix((v, (r, c)), shape=(dim, dim)).tocsr()
        full.sort_indices()
        full.eliminate_zeros()  # exact zeros only
        return cls(dim, full.indptr, full.indices, full.data, label=label, _skip_checks=True)

    @classmethod
    def from_scipy(cls, a, label: str = "A", mode: str = "check") -> "SparseSymMatrix":
        coo = sp.coo_matrix(a)
        return cls.from_coo(coo.row, coo.col, coo.data, coo.shape[0], label=label, mode=mode)

    @classmethod
    def from_dense(cls, a, label: str = "A") -> "SparseSymMatrix":
        a = np.asarray(a, dtype=np.float64)
        r, c = np.nonzero(a)
        return cls.from_coo(r, c, a[r, c], a.shape[0], label=label)

    @classmethod
    def identity(cls, dim: int, label: str = "I") -> "SparseSymMatrix":
        idx = np.arange(dim, dtype=np.int64)
        return cls(dim, np.arange(dim + 1), idx, np.ones(dim), label=label, _skip_checks=True)

    # -- access ------------------------------------------------------------

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    def to_scipy(self) -> sp.csr_matrix:
        if self._csr is None:
            self._csr = sp.csr_matrix(
                (self.values, self.col_indices, self.row_offsets), shape=(self.dim, self.dim))
        return self._csr

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def diagonal(self) -> np.ndarray:
        return self.to_scipy().diagonal()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] != self.dim:
            raise DimensionMismatchError(
                f"matvec: vector length {x.shape[0]} vs matrix dim {self.dim}")
        MATVEC_COUNTER.bump(self.label)
        return self.to_scipy().dot(x)

    def __repr__(self):
        return f"SparseSymMatrix(dim={self.dim}, nnz={self.nnz}, label={self.label!r})"


def matvec(a: SparseSymMatrix, x) -> np.ndarray:
    """Counted product A @ x."""
    return a.matvec(as_vector(x, a.dim))


# -- Matrix Market IO -------------------------------------------------------

_MM_HEADER = "%%MatrixMarket matrix coordinate real"


def read_matrix_market(path) -> SparseSymMatrix:
    """Read a coordinate-format real Matrix Market file as a symmetric matrix.

    Symmetric files are expanded to both triangles. General files must carry
    symmetric content within 1e-12 relative; the offending entry is named
    otherwise.
    """
    with open(path, "r") as fh:
        header = fh.readline().strip()
        parts = header.lower().split()
        if len(parts) != 5 or parts[0] != "%%matrixmarket" or parts[1] != "matrix" \
                or parts[2] != "coordinate" or parts[3] != "real":
            raise InputFormatError(f"unsupported Matrix Market header: {header!r}")
        kind = parts[4]
        if kind not in ("symmetric", "general"):
            raise InputFormatError(f"unsupported symmetry kind: {kind!r}")
        line = fh.readline()
        while line.startswith("%"):
            line = fh.readline()
        try:
            nrows, ncols, nnz = (int(t) for t in line.split())
        except Exception as exc:
            raise InputFormatError(f"malformed size line: {line!r}") from exc
        if nrows != ncols:
            raise InputFormatError(f"matrix is {nrows}x{ncols}, expected square")
        if nrows == 0:
            raise InputFormatError("empty matrix")
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=np.float64)
        for k in range(nnz):
            toks = fh.readline().split()
            if len(toks) != 3:
                raise InputFormatError(f"malformed entry line {k + 1}")
            rows[k] = int(toks[0]) - 1
            cols[k] = int(toks[1]) - 1
            vals[k] = float(toks[2])
    mode = "mirror" if kind == "symmetric" else "check"
    return SparseSymMatrix.from_coo(rows, cols, vals, nrows, mode=mode)


def write_matrix_market(m: SparseSymMatrix, path) -> None:
    """Write the lower triangle in symmetric coordinate format, 17 significant digits."""
    if m.dim == 0:
        raise ValueError("empty matrix")
    low = sp.tril(m.to_scipy()).tocoo()
    with open(path, "w") as fh:
        fh.write(_MM_HEADER + " symmetric\n")
        fh.write(f"{m.dim} {m.dim} {low.nnz}\n")
        for i, j, v in zip(low.row, low.col, low.data):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")


def write_sparse_market(a, path) -> None:
    """Write a general (not necessarily symmetric) sparse matrix in MM coordinate form."""
    coo = sp.coo_matrix(a)
    if coo.shape[0] == 0 or coo.shape[1] == 0:
        raise ValueError("empty matrix")
    with open(path, "w") as fh:
        fh.write(_MM_HEADER + " general\n")
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")


def read_sparse_market(path) -> sp.csr_matrix:
    """Read a general coordinate MM file into a scipy CSR matrix."""
    with open(path, "r") as fh:
        header = fh.readline().strip().lower().split()
        if header[:4] != ["%%matrixmarket", "matrix", "coordinate", "real"]:
            raise InputFormatError("unsupported Matrix Market header")
        kind = header[4]
        line = fh.readline()
        while line.startswith("%"):
            line = fh.readline()
        nrows, ncols, nnz = (int(t) for t in line.split())
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=np.float64)
        for k in range(nnz):
            i, j, v = fh.readline().split()
            rows[k], cols[k], vals[k] = int(i) - 1, int(j) - 1, float(v)
    a = sp.coo_matrix((vals, (rows, cols)), shape=(nrows, ncols))
    if kind == "symmetric":
        off = rows != cols
        a = a + sp.coo_matrix((vals[off], (cols[off], rows[off])), shape=(nrows, ncols))
    return a.tocsr()


def write_dense_csv(d: np.ndarray, path, header: list[str] | None = None) -> None:
    """Write a dense matrix as CSV with a header row, 17 significant digits."""
    d = np.atleast_2d(np.asarray(d, dtype=np.float64))
    if d.size == 0:
        raise ValueError("empty matrix")
    names = header if header is not None else [f"c{j}" for j in range(d.shape[1])]
    if len(names) != d.shape[1]:
        raise ValueError("header length mismatch")
    with open(path, "w") as fh:
        fh.write(",".join(names) + "\n")
        for row in d:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
