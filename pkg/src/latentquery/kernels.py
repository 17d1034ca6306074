"""Hot numeric kernels with an optional numba backend.

Every kernel exists twice: a plain python/numpy version and an ``@njit``
version.  The numba path is used when numba imports cleanly and the
environment variable ``LATENTQUERY_NUMBA`` is not set to ``0``.  Both paths
return identical results; ``benchmarks/bench_kernels.py`` times them.
"""
from __future__ import annotations

import os
import warnings

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_FLAG = os.environ.get("LATENTQUERY_NUMBA", "1").strip().lower()
USE_NUMBA = numba is not None and _FLAG not in ("0", "false", "no", "off")

if _FLAG not in ("0", "false", "no", "off") and numba is None:  # pragma: no cover
    warnings.warn("numba not importable; falling back to numpy kernels")


def _njit(fn):
    if numba is None:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# longest common subsequence
# ---------------------------------------------------------------------------


def _lcs_suffix_table_py(a, b):
    n, m = len(a), len(b)
    al = [int(x) for x in a]
    bl = [int(x) for x in b]
    rows = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        ai = al[i]
        row, below = rows[i], rows[i + 1]
        for j in range(m - 1, -1, -1):
            if ai == bl[j]:
                row[j] = below[j + 1] + 1
            else:
                x, y = below[j], row[j + 1]
                row[j] = x if x >= y else y
    return np.asarray(rows, dtype=np.int32).reshape(n + 1, m + 1)


def _lcs_suffix_table_nb_impl(a, b):
    n = a.shape[0]
    m = b.shape[0]
    table = np.zeros((n + 1, m + 1), dtype=np.int32)
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            if a[i] == b[j]:
                table[i, j] = table[i + 1, j + 1] + 1
            else:
                x = table[i + 1, j]
                y = table[i, j + 1]
                table[i, j] = x if x >= y else y
    return table


def _lcs_earliest_py(a, b, table):
    # Greedy walk over the suffix table.  Taking the smallest feasible
    # document position, then the smallest matching target position, gives
    # the lexicographically smallest document index vector.
    n, m = len(a), len(b)
    al = [int(x) for x in a]
    bl = [int(x) for x in b]
    remaining = int(table[0, 0])
    pos_a = []
    pos_b = []
    i = j = 0
    while remaining > 0:
        p = i
        while p < n:
            jj = j
            ap = al[p]
            while jj < m and bl[jj] != ap:
                jj += 1
            if jj < m and table[p + 1, jj + 1] == remaining - 1:
                break
            p += 1
        pos_a.append(p)
        pos_b.append(jj)
        i, j = p + 1, jj + 1
        remaining -= 1
    return np.asarray(pos_a, dtype=np.int64), np.asarray(pos_b, dtype=np.int64)


def _lcs_earliest_nb_impl(a, b, table):
    n = a.shape[0]
    m = b.shape[0]
    remaining = table[0, 0]
    pos_a = np.empty(remaining, dtype=np.int64)
    pos_b = np.empty(remaining, dtype=np.int64)
    i = 0
    j = 0
    k = 0
    while remaining > 0:
        p = i
        jj = j
        while p < n:
            jj = j
            while jj < m and b[jj] != a[p]:
                jj += 1
            if jj < m and table[p + 1, jj + 1] == remaining - 1:
                break
            p += 1
        pos_a[k] = p
        pos_b[k] = jj
        k += 1
        i = p + 1
        j = jj + 1
        remaining -= 1
    return pos_a, pos_b


# ---------------------------------------------------------------------------
# skip-bigrams
# ---------------------------------------------------------------------------


def _skip_bigram_codes_py(ids, max_skip, base):
    ids = np.asarray(ids, dtype=np.int64)
    gaps = [k for k in range(1, max_skip + 2) if k < len(ids)]
    if not gaps:
        return np.zeros(0, dtype=np.int64)
    codes = np.concatenate([ids[:-k] * base + ids[k:] for k in gaps])
    first = np.concatenate([np.arange(len(ids) - k) for k in gaps])
    gap = np.concatenate([np.full(len(ids) - k, k) for k in gaps])
    return codes[np.lexsort((gap, first))]  # same (i, j) order as the compiled kernel


def _skip_bigram_codes_nb_impl(ids, max_skip, base):
    n = ids.shape[0]
    count = 0
    for i in range(n):
        hi = min(n, i + max_skip + 2)
        count += hi - i - 1
    out = np.empty(count, dtype=np.int64)
    k = 0
    for i in range(n):
        hi = min(n, i + max_skip + 2)
        for j in range(i + 1, hi):
            out[k] = ids[i] * base + ids[j]
            k += 1
    return out


# ---------------------------------------------------------------------------
# layer normalization over the last axis of a 2-D array
# ---------------------------------------------------------------------------


def _layernorm_fwd_py(x, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return xc * inv, inv[:, 0]


def _layernorm_bwd_py(g_hat, x_hat, inv):
    # g_hat is the gradient w.r.t. the normalized output (gain applied).
    m1 = g_hat.mean(axis=1, keepdims=True)
    m2 = (g_hat * x_hat).mean(axis=1, keepdims=True)
    return (g_hat - m1 - x_hat * m2) * inv[:, None]


def _layernorm_fwd_nb_impl(x, eps):
    n, d = x.shape
    out = np.empty_like(x)
    inv = np.empty(n, dtype=x.dtype)
    for r in range(n):
        mu = 0.0
        for c in range(d):
            mu += x[r, c]
        mu /= d
        var = 0.0
        for c in range(d):
            t = x[r, c] - mu
            var += t * t
        var /= d
        s = 1.0 / np.sqrt(var + eps)
        inv[r] = s
        for c in range(d):
            out[r, c] = (x[r, c] - mu) * s
    return out, inv


def _layernorm_bwd_nb_impl(g_hat, x_hat, inv):
    n, d = g_hat.shape
    out = np.empty_like(g_hat)
    for r in range(n):
        m1 = 0.0
        m2 = 0.0
        for c in range(d):
            m1 += g_hat[r, c]
            m2 += g_hat[r, c] * x_hat[r, c]
        m1 /= d
        m2 /= d
        for c in range(d):
            out[r, c] = (g_hat[r, c] - m1 - x_hat[r, c] * m2) * inv[r]
    return out


_lcs_suffix_table_nb = _njit(_lcs_suffix_table_nb_impl)
_lcs_earliest_nb = _njit(_lcs_earliest_nb_impl)
_skip_bigram_codes_nb = _njit(_skip_bigram_codes_nb_impl)
_layernorm_fwd_nb = _njit(_layernorm_fwd_nb_impl)
_layernorm_bwd_nb = _njit(_layernorm_bwd_nb_impl)


def _as_ids(x):
    return np.ascontiguousarray(np.asarray(x, dtype=np.int64).reshape(-1))


def lcs_suffix_table(a, b, use_numba: bool | None = None) -> np.ndarray:
    """``table[i, j]`` is the LCS length of ``a[i:]`` and ``b[j:]``."""
    a, b = _as_ids(a), _as_ids(b)
    if USE_NUMBA if use_numba is None else use_numba:
        return _lcs_suffix_table_nb(a, b)
    return _lcs_suffix_table_py(a, b)


def lcs_earliest(a, b, use_numba: bool | None = None):
    """Positions ``(pos_a, pos_b)`` of the maximal common subsequence whose
    positions in ``a`` are lexicographically smallest."""
    a, b = _as_ids(a), _as_ids(b)
    nb = USE_NUMBA if use_numba is None else use_numba
    if nb:
        table = _lcs_suffix_table_nb(a, b)
        return _lcs_earliest_nb(a, b, table)
    table = _lcs_suffix_table_py(a, b)
    return _lcs_earliest_py(a, b, table)


def lcs_length(a, b, use_numba: bool | None = None) -> int:
    a, b = _as_ids(a), _as_ids(b)
    if len(a) == 0 or len(b) == 0:
        return 0
    return int(lcs_suffix_table(a, b, use_numba)[0, 0])


def skip_bigram_codes(ids, max_skip: int, base: int, use_numba: bool | None = None) -> np.ndarray:
    """Codes ``ids[i] * base + ids[j]`` for every ``i < j <= i + max_skip + 1``."""
    ids = _as_ids(ids)
    if USE_NUMBA if use_numba is None else use_numba:
        return _skip_bigram_codes_nb(ids, max_skip, base)
    return _skip_bigram_codes_py(ids, max_skip, base)


def layernorm_forward(x2d: np.ndarray, eps: float, use_numba: bool | None = None):
    if USE_NUMBA if use_numba is None else use_numba:
        return _layernorm_fwd_nb(np.ascontiguousarray(x2d), x2d.dtype.type(eps))
    return _layernorm_fwd_py(x2d, eps)


def layernorm_backward(g_hat: np.ndarray, x_hat: np.ndarray, inv: np.ndarray,
                       use_numba: bool | None = None) -> np.ndarray:
    if USE_NUMBA if use_numba is None else use_numba:
        return _layernorm_bwd_nb(np.ascontiguousarray(g_hat), x_hat, inv)
    return _layernorm_bwd_py(g_hat, x_hat, inv)
