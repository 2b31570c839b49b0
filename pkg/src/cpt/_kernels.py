"""Hot sparse kernels with a numba path and a pure-numpy fallback.

The numba versions are used when numba is importable and the environment
variable ``CPT_DISABLE_NUMBA`` is unset or ``0``. Both paths produce the
same CSR structure bit-for-bit; the sparse-dense product agrees to
rounding (reduction order differs).
"""

import os

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def _env_disabled() -> bool:
    return os.environ.get("CPT_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


USE_NUMBA = HAVE_NUMBA and not _env_disabled()


# --- symmetric-normalized adjacency with self loops -------------------------

def norm_adj_numpy(num_nodes, edges):
    """CSR arrays of D^-1/2 (A + I) D^-1/2 for canonical undirected ``edges``."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    u, v = edges[:, 0], edges[:, 1]
    loops = np.arange(num_nodes, dtype=np.int64)
    rows = np.concatenate([u, v, loops])
    cols = np.concatenate([v, u, loops])
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    deg_tilde = np.bincount(rows, minlength=num_nodes).astype(np.float64)
    data = 1.0 / np.sqrt(deg_tilde[rows] * deg_tilde[cols])
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(deg_tilde.astype(np.int64), out=indptr[1:])
    return indptr, cols, data


@njit(cache=True)
def _norm_adj_nb(num_nodes, edges):
    counts = np.ones(num_nodes, dtype=np.int64)
    for e in range(edges.shape[0]):
        counts[edges[e, 0]] += 1
        counts[edges[e, 1]] += 1
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    for i in range(num_nodes):
        indptr[i + 1] = indptr[i] + counts[i]
    nnz = indptr[num_nodes]
    indices = np.empty(nnz, dtype=np.int64)
    fill = indptr[:-1].copy()
    for i in range(num_nodes):
        indices[fill[i]] = i
        fill[i] += 1
    for e in range(edges.shape[0]):
        a = edges[e, 0]
        b = edges[e, 1]
        indices[fill[a]] = b
        fill[a] += 1
        indices[fill[b]] = a
        fill[b] += 1
    for i in range(num_nodes):
        indices[indptr[i]:indptr[i + 1]].sort()
    data = np.empty(nnz, dtype=np.float64)
    for i in range(num_nodes):
        for k in range(indptr[i], indptr[i + 1]):
            data[k] = 1.0 / np.sqrt(np.float64(counts[i]) * np.float64(counts[indices[k]]))
    return indptr, indices, data


def norm_adj_numba(num_nodes, edges):
    edges = np.ascontiguousarray(np.asarray(edges, dtype=np.int64).reshape(-1, 2))
    return _norm_adj_nb(np.int64(num_nodes), edges)


# --- CSR x dense ------------------------------------------------------------

def spmm_numpy(indptr, indices, data, dense):
    """Return ``A @ dense`` for CSR ``A``. Every row must be non-empty."""
    dense = np.asarray(dense)
    if indices.size == 0:
        return np.zeros((indptr.size - 1, dense.shape[1]), dtype=np.result_type(data, dense))
    contrib = data[:, None] * dense[indices]
    return np.add.reduceat(contrib, indptr[:-1], axis=0)


@njit(cache=True)
def _spmm_nb(indptr, indices, data, dense):
    n = indptr.shape[0] - 1
    m = dense.shape[1]
    out = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            w = data[k]
            for c in range(m):
                out[i, c] += w * dense[j, c]
    return out


def spmm_numba(indptr, indices, data, dense):
    dense = np.ascontiguousarray(dense, dtype=np.float64)
    return _spmm_nb(indptr, indices, data, dense)


if USE_NUMBA:
    norm_adj = norm_adj_numba
    spmm = spmm_numba
else:
    norm_adj = norm_adj_numpy
    spmm = spmm_numpy
