"""Compressed-column sparse matrices and a cached LDL^T factorization.

The factorization is the plain up-looking LDL^T with a signed diagonal: it
succeeds without dynamic pivoting on symmetric quasi-definite matrices, which
is the class produced by the reduced consensus KKT systems.  A factorization
keeps its symbolic analysis (elimination tree, column pointers, permutation
and the value-gather map) so that refactorizing a matrix with identical
sparsity is a pure numeric pass and bitwise identical to a fresh factorization
of the same values.

Matrices and factorizations are immutable after construction and safe to share
across threads; construction itself is single-threaded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as _sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from . import _kernels

DEFAULT_PIVOT_EPS = 1e-12
PIVOT_FAIL_BELOW = 1e-14


class FactorizationError(RuntimeError):
    """LDL^T elimination hit a vanishing or non-finite pivot."""

    def __init__(self, pivot, message=None):
        self.pivot = int(pivot)
        super().__init__(message or f"factorization failed at pivot {pivot}")


@dataclass
class SparseMatrix:
    """Sparse matrix in zero-based compressed-column (CSC) storage.

    Rows are strictly increasing within each column, which also rules out
    duplicate entries.  ``indptr`` and ``indices`` are int64, ``data``
    float64.
    """

    nrows: int
    ncols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        self.indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.nrows < 0 or self.ncols < 0:
            raise ValueError("matrix dimensions must be non-negative")
        if self.indptr.shape != (self.ncols + 1,):
            raise ValueError("indptr must have ncols+1 entries")
        if self.indptr[0] != 0 or np.any(np.diff(self.indptr) < 0):
            raise ValueError("column pointers must be monotone and start at 0")
        nnz = int(self.indptr[-1])
        if self.indices.shape != (nnz,) or self.data.shape != (nnz,):
            raise ValueError("indices/data length must match indptr[-1]")
        if nnz:
            if self.indices.min() < 0 or self.indices.max() >= self.nrows:
                raise ValueError("row index out of range")
            # strictly increasing rows inside each column
            d = np.diff(self.indices)
            starts = self.indptr[1:-1]
            d[starts[(starts > 0) & (starts < nnz)] - 1] = 1
            if np.any(d <= 0):
                raise ValueError("rows must be strictly increasing per column")

    @property
    def nnz(self):
        return int(self.indptr[-1])

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        m = m.tocsc()
        m.sort_indices()
        m.sum_duplicates()
        m.eliminate_zeros()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def from_dense(cls, m) -> "SparseMatrix":
        return cls.from_scipy(_sp.csc_matrix(np.asarray(m, dtype=float)))

    @classmethod
    def from_triplets(cls, nrows, ncols, rows, cols, values) -> "SparseMatrix":
        coo = _sp.coo_matrix(
            (np.asarray(values, dtype=float),
             (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
            shape=(nrows, ncols),
        )
        return cls.from_scipy(coo)

    @classmethod
    def identity(cls, n) -> "SparseMatrix":
        return cls.from_scipy(_sp.eye(n, format="csc"))

    def to_scipy(self) -> _sp.csc_matrix:
        return _sp.csc_matrix(
            (self.data, self.indices, self.indptr), shape=(self.nrows, self.ncols)
        )

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def with_data(self, data) -> "SparseMatrix":
        """Same sparsity, new values."""
        return SparseMatrix(self.nrows, self.ncols, self.indptr, self.indices, data)

    def diagonal(self) -> np.ndarray:
        return self.to_scipy().diagonal()


def spmv(m: SparseMatrix, x, transposed: bool = False) -> np.ndarray:
    """Matrix-vector product m @ x (or m.T @ x).

    Entries are accumulated in column-major storage order, so the result is
    deterministic across calls.
    """
    x = np.asarray(x, dtype=float)
    expected = m.nrows if transposed else m.ncols
    if x.shape != (expected,):
        raise ValueError(
            f"dimension mismatch: vector has shape {x.shape}, expected ({expected},)"
        )
    if transposed:
        out = np.empty(m.ncols)
        _kernels.csc_matvec_transpose(m.ncols, m.indptr, m.indices, m.data, x, out)
    else:
        out = np.empty(m.nrows)
        _kernels.csc_matvec(m.ncols, m.indptr, m.indices, m.data, x, out)
    return out


@dataclass
class _Symbolic:
    """Reusable symbolic analysis of one sparsity pattern."""

    n: int
    perm: np.ndarray          # row/col permutation applied before elimination
    parent: np.ndarray        # elimination tree
    lp: np.ndarray            # column pointers of L (strictly lower part)
    up_indptr: np.ndarray     # pattern of the permuted upper triangle
    up_indices: np.ndarray
    gather: np.ndarray        # permuted-upper data = source data[gather]
    src_indptr: np.ndarray    # sparsity of the source matrix, for reuse checks
    src_indices: np.ndarray


@dataclass
class LdltFactorization:
    """P M P^T = L D L^T with unit lower-triangular L and signed diagonal D."""

    symbolic: _Symbolic
    lx: np.ndarray
    li: np.ndarray
    d: np.ndarray
    regularized: bool

    @property
    def n(self):
        return self.symbolic.n

    @property
    def perm(self):
        return self.symbolic.perm

    @property
    def L(self) -> SparseMatrix:
        """Unit lower-triangular factor, materialized with its diagonal."""
        s = self.symbolic
        strict = _sp.csc_matrix((self.lx, self.li, s.lp), shape=(s.n, s.n))
        return SparseMatrix.from_scipy(strict + _sp.eye(s.n, format="csc"))

    @property
    def D(self) -> np.ndarray:
        return self.d


def _permuted_upper(m: SparseMatrix, perm: np.ndarray) -> _Symbolic:
    """Symbolic setup: lower triangle of m, permuted, stored as upper CSC.

    Only the lower triangle of ``m`` is read.  The returned gather map turns
    ``m.data`` into the permuted-upper value array with one fancy index.
    """
    n = m.nrows
    coo = m.to_scipy().tocoo()  # preserves CSC data order
    lower = np.flatnonzero(coo.row >= coo.col)
    ip = np.empty(n, dtype=np.int64)
    ip[perm] = np.arange(n, dtype=np.int64)
    a = ip[coo.row[lower]]
    b = ip[coo.col[lower]]
    ur = np.minimum(a, b)
    uc = np.maximum(a, b)
    order = np.lexsort((ur, uc))
    gather = lower[order]
    up_indices = ur[order]
    counts = np.bincount(uc[order], minlength=n)
    up_indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=up_indptr[1:])

    parent = np.empty(n, dtype=np.int64)
    lnz = np.empty(n, dtype=np.int64)
    flag = np.empty(n, dtype=np.int64)
    _kernels.ldlt_symbolic(n, up_indptr, up_indices, parent, lnz, flag)
    lp = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(lnz, out=lp[1:])
    return _Symbolic(
        n=n,
        perm=perm,
        parent=parent,
        lp=lp,
        up_indptr=up_indptr,
        up_indices=up_indices,
        gather=gather,
        src_indptr=m.indptr,
        src_indices=m.indices,
    )


def _resolve_ordering(m: SparseMatrix, ordering) -> np.ndarray:
    n = m.nrows
    if isinstance(ordering, str):
        if ordering == "natural":
            return np.arange(n, dtype=np.int64)
        if ordering == "rcm":
            s = m.to_scipy()
            low = _sp.tril(s, format="csc")
            full = low + _sp.triu(low.T, 1)
            return np.asarray(
                reverse_cuthill_mckee(full.tocsr(), symmetric_mode=True),
                dtype=np.int64,
            )
        raise ValueError(f"unknown ordering {ordering!r}")
    perm = np.asarray(ordering, dtype=np.int64)
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValueError("explicit ordering must be a permutation of 0..n-1")
    return perm


def ldlt_factor(m: SparseMatrix, pattern: LdltFactorization | None = None,
                ordering="natural", regularize: bool = True) -> LdltFactorization:
    """Factorize a symmetric matrix as P M P^T = L D L^T.

    Only the lower triangle of ``m`` is read.  Passing a previous
    factorization of a matrix with identical sparsity as ``pattern`` reuses
    its symbolic analysis (and its ordering), making the call a pure numeric
    refactorization.

    ``ordering`` selects the fill-reducing permutation: "natural" keeps the
    given order (right for banded, MPC-structured systems), "rcm" applies
    reverse Cuthill-McKee for general sparsity, and an explicit permutation
    array is used as-is.

    Pivots that underflow ``1e-12`` in magnitude get a sign-preserving shift
    of the same size when ``regularize`` is on; a pivot that is still below
    ``1e-14`` (or non-finite) raises :class:`FactorizationError` carrying the
    pivot index in the original ordering.
    """
    if m.nrows != m.ncols:
        raise ValueError("ldlt_factor requires a square matrix")
    if pattern is not None:
        s = pattern.symbolic
        same = (s.src_indptr is m.indptr or np.array_equal(s.src_indptr, m.indptr)) and (
            s.src_indices is m.indices or np.array_equal(s.src_indices, m.indices)
        )
        if not same:
            raise ValueError("pattern reuse requires identical sparsity")
    else:
        perm = _resolve_ordering(m, ordering)
        s = _permuted_upper(m, perm)

    n = s.n
    nnz_l = int(s.lp[-1])
    li = np.empty(nnz_l, dtype=np.int64)
    lx = np.empty(nnz_l)
    d = np.empty(n)
    lnz = np.empty(n, dtype=np.int64)
    flag = np.empty(n, dtype=np.int64)
    pat = np.empty(n, dtype=np.int64)
    y = np.empty(n)
    up_data = m.data[s.gather]
    bad = _kernels.ldlt_numeric(
        n, s.up_indptr, s.up_indices, up_data, s.lp, s.parent, lnz, flag, pat, y,
        li, lx, d, regularize, DEFAULT_PIVOT_EPS, PIVOT_FAIL_BELOW,
    )
    if bad >= 0:
        raise FactorizationError(int(s.perm[bad]))
    return LdltFactorization(symbolic=s, lx=lx, li=li, d=d, regularized=regularize)


def ldlt_solve(f: LdltFactorization, b) -> np.ndarray:
    """Solve M x = b using a previously computed factorization."""
    b = np.asarray(b, dtype=float)
    if b.shape != (f.n,):
        raise ValueError(
            f"dimension mismatch: rhs has shape {b.shape}, expected ({f.n},)"
        )
    s = f.symbolic
    work = b[s.perm].copy()
    _kernels.ldlt_solve_inplace(s.n, s.lp, f.li, f.lx, f.d, work)
    out = np.empty_like(work)
    out[s.perm] = work
    return out
