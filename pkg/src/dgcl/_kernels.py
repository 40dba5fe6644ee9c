"""Hot loops behind the sparse / ranking code paths.

Every kernel has a numba implementation and a pure-numpy twin with the same
signature.  Set ``DGCL_NUMBA=0`` in the environment to force the numpy path
(numba is also skipped automatically when it cannot be imported).
"""

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _flag_enabled():
    value = os.environ.get("DGCL_NUMBA", "1").strip().lower()
    return value not in ("0", "false", "no", "off")


USE_NUMBA = HAVE_NUMBA and _flag_enabled()


# ---------------------------------------------------------------- numpy path


def csr_matmul_numpy(indptr, indices, data, x):
    n_rows = indptr.shape[0] - 1
    out = np.zeros((n_rows, x.shape[1]), dtype=np.float64)
    if indices.shape[0] == 0:
        return out
    rows = np.repeat(np.arange(n_rows), np.diff(indptr))
    np.add.at(out, rows, data[:, None] * x[indices])
    return out


def scatter_add_rows_numpy(n_rows, ids, grad):
    out = np.zeros((n_rows, grad.shape[1]), dtype=np.float64)
    np.add.at(out, ids, grad)
    return out


def csr_contains_numpy(indptr, indices, rows, cols):
    """For each (rows[k], cols[k]) report whether it is a stored entry.

    Column indices inside each CSR row must be sorted.
    """
    out = np.zeros(rows.shape[0], dtype=np.bool_)
    for k in range(rows.shape[0]):
        lo, hi = indptr[rows[k]], indptr[rows[k] + 1]
        pos = lo + np.searchsorted(indices[lo:hi], cols[k])
        out[k] = pos < hi and indices[pos] == cols[k]
    return out


def masked_topk_numpy(scores, indptr, indices, k):
    scores = np.array(scores, dtype=np.float64, copy=True)
    rows = np.repeat(np.arange(scores.shape[0]), np.diff(indptr))
    scores[rows, indices] = -np.inf
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k].astype(np.int64)
    order[np.take_along_axis(scores, order, axis=1) == -np.inf] = -1
    if order.shape[1] < k:
        order = np.pad(order, ((0, 0), (0, k - order.shape[1])), constant_values=-1)
    return order


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def csr_matmul_numba(indptr, indices, data, x):
        n_rows = indptr.shape[0] - 1
        d = x.shape[1]
        out = np.zeros((n_rows, d), dtype=np.float64)
        for r in range(n_rows):
            for p in range(indptr[r], indptr[r + 1]):
                c = indices[p]
                w = data[p]
                for j in range(d):
                    out[r, j] += w * x[c, j]
        return out

    @numba.njit(cache=True)
    def scatter_add_rows_numba(n_rows, ids, grad):
        d = grad.shape[1]
        out = np.zeros((n_rows, d), dtype=np.float64)
        for k in range(ids.shape[0]):
            r = ids[k]
            for j in range(d):
                out[r, j] += grad[k, j]
        return out

    @numba.njit(cache=True)
    def csr_contains_numba(indptr, indices, rows, cols):
        out = np.zeros(rows.shape[0], dtype=np.bool_)
        for k in range(rows.shape[0]):
            lo = indptr[rows[k]]
            hi = indptr[rows[k] + 1]
            target = cols[k]
            while lo < hi:
                mid = (lo + hi) // 2
                if indices[mid] < target:
                    lo = mid + 1
                else:
                    hi = mid
            out[k] = lo < indptr[rows[k] + 1] and indices[lo] == target
        return out

    @numba.njit(cache=True)
    def masked_topk_numba(scores, indptr, indices, k):
        # bounded insertion: scanning columns in order with a strict ">" keeps
        # the lower id first on ties, matching the stable sort of the numpy path
        n_rows, n_cols = scores.shape
        out = np.full((n_rows, k), -1, dtype=np.int64)
        best = np.empty(k, dtype=np.float64)
        masked = np.zeros(n_cols, dtype=np.bool_)
        for r in range(n_rows):
            for p in range(indptr[r], indptr[r + 1]):
                masked[indices[p]] = True
            filled = 0
            for c in range(n_cols):
                v = scores[r, c]
                if masked[c] or v == -np.inf:
                    continue
                if filled == k and not v > best[k - 1]:
                    continue
                j = filled if filled < k else k - 1
                while j > 0 and v > best[j - 1]:
                    best[j] = best[j - 1]
                    out[r, j] = out[r, j - 1]
                    j -= 1
                best[j] = v
                out[r, j] = c
                if filled < k:
                    filled += 1
            for p in range(indptr[r], indptr[r + 1]):
                masked[indices[p]] = False
        return out

else:  # pragma: no cover
    csr_matmul_numba = csr_matmul_numpy
    scatter_add_rows_numba = scatter_add_rows_numpy
    csr_contains_numba = csr_contains_numpy
    masked_topk_numba = masked_topk_numpy


def _pick(fast, slow):
    return fast if USE_NUMBA else slow


def csr_matmul(indptr, indices, data, x):
    """Dense product ``A @ x`` for a CSR matrix ``A``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _pick(csr_matmul_numba, csr_matmul_numpy)(indptr, indices, data, x)


def scatter_add_rows(n_rows, ids, grad):
    """Return an ``n_rows x d`` array with ``grad[k]`` added into row ``ids[k]``."""
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    return _pick(scatter_add_rows_numba, scatter_add_rows_numpy)(int(n_rows), ids, grad)


def csr_contains(indptr, indices, rows, cols):
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    return _pick(csr_contains_numba, csr_contains_numpy)(indptr, indices, rows, cols)


def masked_topk(scores, indptr, indices, k):
    """Top-``k`` column ids per row with the CSR-listed entries excluded.

    Ties resolve to the lower column id on both paths.  Slots left over when
    a row has fewer than ``k`` admissible columns hold ``-1``.
    """
    k = min(int(k), scores.shape[1])
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    return _pick(masked_topk_numba, masked_topk_numpy)(scores, indptr, indices, k)
