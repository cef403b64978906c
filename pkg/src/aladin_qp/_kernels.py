"""Numba kernels behind the sparse matrix operations.

Every kernel walks its arrays in a fixed (column-major) order so that repeated
calls with identical inputs are bitwise reproducible.  Index arrays are int64,
values float64.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def csc_matvec(ncols, indptr, indices, data, x, out):
    """out = A @ x for A in compressed-column form."""
    for i in range(out.size):
        out[i] = 0.0
    for j in range(ncols):
        xj = x[j]
        for p in range(indptr[j], indptr[j + 1]):
            out[indices[p]] += data[p] * xj


@njit(cache=True)
def csc_matvec_transpose(ncols, indptr, indices, data, x, out):
    """out = A.T @ x for A in compressed-column form."""
    for j in range(ncols):
        acc = 0.0
        for p in range(indptr[j], indptr[j + 1]):
            acc += data[p] * x[indices[p]]
        out[j] = acc


@njit(cache=True)
def ldlt_symbolic(n, ap, ai, parent, lnz, flag):
    """Elimination tree and per-column factor counts.

    Input is the upper triangle of the (permuted) matrix in CSC form.  Fills
    ``parent`` (etree) and ``lnz`` (strictly-lower entry count per column).
    """
    for k in range(n):
        parent[k] = -1
        flag[k] = k
        lnz[k] = 0
        for p in range(ap[k], ap[k + 1]):
            i = ai[p]
            if i >= k:
                continue
            while flag[i] != k:
                if parent[i] == -1:
                    parent[i] = k
                lnz[i] += 1
                flag[i] = k
                i = parent[i]


@njit(cache=True)
def ldlt_numeric(n, ap, ai, ax, lp, parent, lnz, flag, pattern, y,
                 li, lx, d, regularize, reg_eps, fail_below):
    """Up-looking LDL^T with signed pivots and no dynamic pivoting.

    ``ap/ai/ax`` hold the upper triangle of the permuted matrix; ``lp`` comes
    from a prior symbolic pass.  Pivots with magnitude below ``reg_eps`` get a
    sign-preserving shift of ``reg_eps`` when ``regularize`` is set.  Returns
    -1 on success, else the index of the offending pivot.
    """
    for i in range(n):
        flag[i] = -1
        lnz[i] = 0
        y[i] = 0.0
    for k in range(n):
        top = n
        flag[k] = k
        for p in range(ap[k], ap[k + 1]):
            i = ai[p]
            if i > k:
                continue
            y[i] += ax[p]
            plen = 0
            while flag[i] != k:
                pattern[plen] = i
                plen += 1
                flag[i] = k
                i = parent[i]
            while plen > 0:
                plen -= 1
                top -= 1
                pattern[top] = pattern[plen]
        dk = y[k]
        y[k] = 0.0
        for t in range(top, n):
            i = pattern[t]
            yi = y[i]
            y[i] = 0.0
            p2 = lp[i] + lnz[i]
            for p in range(lp[i], p2):
                y[li[p]] -= lx[p] * yi
            lki = yi / d[i]
            dk -= lki * yi
            li[p2] = k
            lx[p2] = lki
            lnz[i] += 1
        if regularize and abs(dk) < reg_eps:
            dk = dk + (reg_eps if dk >= 0.0 else -reg_eps)
        if not (abs(dk) >= fail_below):
            return k
        d[k] = dk
    return -1


@njit(cache=True)
def ldlt_solve_inplace(n, lp, li, lx, d, x):
    """Solve (I+L) D (I+L)^T x = b in place; L strictly lower, by columns."""
    for j in range(n):
        xj = x[j]
        for p in range(lp[j], lp[j + 1]):
            x[li[p]] -= lx[p] * xj
    for j in range(n):
        x[j] /= d[j]
    for j in range(n - 1, -1, -1):
        acc = 0.0
        for p in range(lp[j], lp[j + 1]):
            acc += lx[p] * x[li[p]]
        x[j] -= acc


@njit(cache=True)
def projected_gradient_box(m, zl, zu, z, step, iters):
    """Fixed-step projected gradient for min 0.5 z'Mz over a box, in place."""
    n = z.size
    g = np.zeros(n)
    for _ in range(iters):
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += m[i, j] * z[j]
            g[i] = acc
        for i in range(n):
            v = z[i] - step * g[i]
            if v < zl[i]:
                v = zl[i]
            elif v > zu[i]:
                v = zu[i]
            z[i] = v
