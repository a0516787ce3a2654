"""Hot CSR kernels: SpMV, IC(0) factorization, triangular solves.

Every kernel exists twice: a loop version compiled with numba.njit and a
plain-numpy (or plain-Python) fallback. The active backend is picked at
import time: numba is used when importable unless the environment variable
``PORO_NUMBA`` is set to ``0``. ``benchmarks/bench_kernels.py`` times both.
"""

from __future__ import annotations

import os

import numpy as np

_env = os.environ.get("PORO_NUMBA", "").strip()

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via PORO_NUMBA=0 instead
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _env != "0"
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# SpMV
# ---------------------------------------------------------------------------

def _spmv_loop(offsets, cols, vals, x, out):
    n = offsets.shape[0] - 1
    for i in range(n):
        acc = 0.0
        for k in range(offsets[i], offsets[i + 1]):
            acc += vals[k] * x[cols[k]]
        out[i] = acc
    return out


def spmv_numpy(offsets, cols, vals, x):
    """Vectorized CSR matvec; per-row segment sums via a prefix sum."""
    prod = vals * x[cols]
    csum = np.concatenate(([0.0], np.cumsum(prod)))
    return csum[offsets[1:]] - csum[offsets[:-1]]


# ---------------------------------------------------------------------------
# Incomplete Cholesky, zero fill-in, on the lower triangle of an SPD matrix
# ---------------------------------------------------------------------------

def _ic0_loop(n, offsets, cols, vals, lvals):
    # offsets/cols describe the lower triangle incl. diagonal, columns sorted.
    # lvals starts as a copy of vals and is factorized in place.
    for i in range(n):
        start = offsets[i]
        end = offsets[i + 1]
        if cols[end - 1] != i:
            return i  # missing structural diagonal
        for kk in range(start, end):
            k = cols[kk]
            # dot of rows i and k restricted to columns < k
            s = 0.0
            a = start
            b = offsets[k]
            bend = offsets[k + 1] - 1  # exclude diagonal of row k
            while a < kk and b < bend:
                ca = cols[a]
                cb = cols[b]
                if ca == cb:
                    s += lvals[a] * lvals[b]
                    a += 1
                    b += 1
                elif ca < cb:
                    a += 1
                else:
                    b += 1
            if k == i:
                d = vals[kk] - s
                if d <= 0.0:
                    return i + 1 + n  # breakdown marker
                lvals[kk] = np.sqrt(d)
            else:
                dk = lvals[offsets[k + 1] - 1]
                lvals[kk] = (vals[kk] - s) / dk
    return -1


def _lower_solve_loop(offsets, cols, vals, b, out):
    # Solve L z = b with L lower triangular CSR, diagonal last in each row.
    n = offsets.shape[0] - 1
    for i in range(n):
        acc = b[i]
        end = offsets[i + 1] - 1
        for k in range(offsets[i], end):
            acc -= vals[k] * out[cols[k]]
        out[i] = acc / vals[end]
    return out


def _lower_t_solve_loop(offsets, cols, vals, b, out):
    # Solve L^T w = b using the CSR storage of L (column sweep backwards).
    n = offsets.shape[0] - 1
    for i in range(n):
        out[i] = b[i]
    for i in range(n - 1, -1, -1):
        end = offsets[i + 1] - 1
        wi = out[i] / vals[end]
        out[i] = wi
        for k in range(offsets[i], end):
            out[cols[k]] -= vals[k] * wi
    return out


if USE_NUMBA:
    _spmv_jit = numba.njit(cache=True)(_spmv_loop)
    _ic0_jit = numba.njit(cache=True)(_ic0_loop)
    _lower_jit = numba.njit(cache=True)(_lower_solve_loop)
    _lower_t_jit = numba.njit(cache=True)(_lower_t_solve_loop)


def spmv(offsets, cols, vals, x):
    if USE_NUMBA:
        out = np.empty(offsets.shape[0] - 1, dtype=np.float64)
        return _spmv_jit(offsets, cols, vals, x, out)
    return spmv_numpy(offsets, cols, vals, x)


def ic0_factor(n, offsets, cols, vals):
    """Factorize the lower triangle in place; returns the L values array.

    Raises RuntimeError on a non-positive pivot or missing diagonal entry.
    """
    lvals = vals.copy()
    if USE_NUMBA:
        flag = _ic0_jit(n, offsets, cols, vals, lvals)
    else:
        flag = _ic0_loop(n, offsets, cols, vals, lvals)
    if flag >= 0:
        if flag >= n:
            raise RuntimeError(f"ic0 breakdown: non-positive pivot in row {flag - n - 1}")
        raise RuntimeError(f"ic0: missing diagonal entry in row {flag}")
    return lvals


def lower_solve(offsets, cols, vals, b):
    out = np.empty_like(b)
    if USE_NUMBA:
        return _lower_jit(offsets, cols, vals, b, out)
    return _lower_solve_loop(offsets, cols, vals, b, out)


def lower_transpose_solve(offsets, cols, vals, b):
    out = np.empty_like(b)
    if USE_NUMBA:
        return _lower_t_jit(offsets, cols, vals, b, out)
    return _lower_t_solve_loop(offsets, cols, vals, b, out)


def spmv_numba(offsets, cols, vals, x):
    """Explicit numba path, used by the kernel benchmark."""
    if not USE_NUMBA:
        raise RuntimeError("numba backend not active (PORO_NUMBA=0 or numba missing)")
    out = np.empty(offsets.shape[0] - 1, dtype=np.float64)
    return _spmv_jit(offsets, cols, vals, x, out)
