# Compiled inner loops for kNN selection and neighbor max pooling.
# Must stay bit-for-bit equal to _kernels_py.py (same accumulation order).
import numpy as np

cimport numpy as cnp

cnp.import_array()


def knn_indices(const double[:, :, ::1] feats, Py_ssize_t k):
    """k nearest other rows per batch item; ties go to the lower index."""
    cdef Py_ssize_t nb = feats.shape[0]
    cdef Py_ssize_t n = feats.shape[1]
    cdef Py_ssize_t nc = feats.shape[2]
    if k < 1 or k >= n:
        raise ValueError(f"k must satisfy 1 <= k < n (k={k}, n={n})")

    out = np.empty((nb, n, k), dtype=np.int64)
    cdef cnp.int64_t[:, :, ::1] o = out
    cdef double[::1] bestd = np.empty(k, dtype=np.float64)
    cdef cnp.int64_t[::1] besti = np.empty(k, dtype=np.int64)
    cdef Py_ssize_t b, i, j, c, count, pos
    cdef double d, t
    cdef const double* fi
    cdef const double* fj

    with nogil:
        for b in range(nb):
            for i in range(n):
                count = 0
                fi = &feats[b, i, 0]
                for j in range(n):
                    if j == i:
                        continue
                    fj = &feats[b, j, 0]
                    d = 0.0
                    for c in range(nc):
                        t = fi[c] - fj[c]
                        d = d + t * t
                    if count < k:
                        pos = count
                        count = count + 1
                    elif d < bestd[k - 1]:
                        pos = k - 1
                    else:
                        continue
                    # strict comparison keeps earlier (lower) indices first on ties
                    while pos > 0 and bestd[pos - 1] > d:
                        bestd[pos] = bestd[pos - 1]
                        besti[pos] = besti[pos - 1]
                        pos = pos - 1
                    bestd[pos] = d
                    besti[pos] = j
                for j in range(k):
                    o[b, i, j] = besti[j]
    return out


def neighbor_max(const double[:, :, ::1] v, const cnp.int64_t[:, :, ::1] idx):
    """out[b,i,c] = max_s v[b, idx[b,i,s], c]; slot holds the first argmax s."""
    cdef Py_ssize_t nb = idx.shape[0]
    cdef Py_ssize_t n = idx.shape[1]
    cdef Py_ssize_t k = idx.shape[2]
    cdef Py_ssize_t nc = v.shape[2]
    if k < 1:
        raise ValueError("neighbor axis is empty")

    out = np.empty((nb, n, nc), dtype=np.float64)
    slot = np.empty((nb, n, nc), dtype=np.int64)
    cdef double[:, :, ::1] o = out
    cdef cnp.int64_t[:, :, ::1] sl = slot
    cdef Py_ssize_t b, i, s, c
    cdef double x
    cdef bint gt
    cdef const double* vrow
    cdef double* orow
    cdef cnp.int64_t* srow

    with nogil:
        for b in range(nb):
            for i in range(n):
                orow = &o[b, i, 0]
                srow = &sl[b, i, 0]
                vrow = &v[b, idx[b, i, 0], 0]
                for c in range(nc):
                    orow[c] = vrow[c]
                    srow[c] = 0
                for s in range(1, k):
                    vrow = &v[b, idx[b, i, s], 0]
                    for c in range(nc):
                        x = vrow[c]
                        gt = x > orow[c]
                        # ternaries compile to selects, avoiding branch misses
                        orow[c] = x if gt else orow[c]
                        srow[c] = s if gt else srow[c]
    return out, slot


def neighbor_max_backward(const double[:, :, ::1] grad,
                          const cnp.int64_t[:, :, ::1] idx,
                          const cnp.int64_t[:, :, ::1] slot,
                          Py_ssize_t n_src):
    """Scatter-add grad back onto the rows selected by neighbor_max."""
    cdef Py_ssize_t nb = grad.shape[0]
    cdef Py_ssize_t n = grad.shape[1]
    cdef Py_ssize_t nc = grad.shape[2]
    gv = np.zeros((nb, n_src, nc), dtype=np.float64)
    cdef double[:, :, ::1] g = gv
    cdef Py_ssize_t b, i, c, j

    with nogil:
        for b in range(nb):
            for i in range(n):
                for c in range(nc):
                    j = idx[b, i, slot[b, i, c]]
                    g[b, j, c] = g[b, j, c] + grad[b, i, c]
    return gv
