# Compiled hot kernels: nearest-centroid assignment, fixed-order centroid
# accumulation, and cosine-kNN neighbor centrality.
#
# The NC kernel accumulates strictly sequentially in float64 (the extension is
# built with -ffp-contract=off), so its scores are bit-identical to a naive
# left-to-right recomputation. The assignment kernel routes the cross term
# through BLAS sgemm; only behavioral tolerances apply there.

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, sqrt
from libc.stdlib cimport free, malloc
from scipy.linalg.cython_blas cimport sgemm

cnp.import_array()

BACKEND = "compiled"


def assign_labels(float[:, ::1] x, float[:, ::1] centroids):
    """Nearest-centroid assignment; ties go to the lower centroid index."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t c = centroids.shape[0]
    if centroids.shape[1] != d:
        raise ValueError("centroid dimension mismatch")

    labels_arr = np.empty(n, dtype=np.int64)
    mindist_arr = np.empty(n, dtype=np.float64)
    cross_arr = np.empty((n, c), dtype=np.float32)
    xsq_arr = np.empty(n, dtype=np.float64)
    csq_arr = np.empty(c, dtype=np.float64)

    cdef long[::1] labels = labels_arr
    cdef double[::1] mindist = mindist_arr
    cdef float[:, ::1] cross = cross_arr
    cdef double[::1] xsq = xsq_arr
    cdef double[::1] csq = csq_arr

    cdef Py_ssize_t i, j, t, best
    cdef double acc, dist, bestdist
    cdef int mm, nn, kk, lda, ldb, ldc
    cdef float alpha = 1.0, beta = 0.0
    cdef char ta = b'T', tb = b'N'

    with nogil:
        for i in range(n):
            acc = 0.0
            for t in range(d):
                acc += (<double> x[i, t]) * (<double> x[i, t])
            xsq[i] = acc
        for j in range(c):
            acc = 0.0
            for t in range(d):
                acc += (<double> centroids[j, t]) * (<double> centroids[j, t])
            csq[j] = acc

        # cross[i, j] = dot(x[i], centroids[j]). Row-major (n, c) output seen
        # column-major is (c, n) = centroids_cm^T * x_cm with both operands
        # (d, rows) column-major views of the row-major inputs.
        mm = <int> c
        nn = <int> n
        kk = <int> d
        lda = <int> d
        ldb = <int> d
        ldc = <int> c
        if n > 0 and c > 0 and d > 0:
            sgemm(&ta, &tb, &mm, &nn, &kk, &alpha,
                  &centroids[0, 0], &lda, &x[0, 0], &ldb, &beta,
                  &cross[0, 0], &ldc)

        for i in range(n):
            best = 0
            bestdist = INFINITY
            for j in range(c):
                dist = xsq[i] - 2.0 * (<double> cross[i, j]) + csq[j]
                if dist < 0.0:
                    dist = 0.0
                if dist < bestdist:
                    bestdist = dist
                    best = j
            labels[i] = best
            mindist[i] = bestdist

    return labels_arr, mindist_arr


def sum_by_label(float[:, ::1] x, long[::1] labels, Py_ssize_t n_clusters):
    """Per-cluster float64 feature sums and counts, accumulated in row order."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    sums_arr = np.zeros((n_clusters, d), dtype=np.float64)
    counts_arr = np.zeros(n_clusters, dtype=np.int64)
    cdef double[:, ::1] sums = sums_arr
    cdef long[::1] counts = counts_arr
    cdef Py_ssize_t i, t
    cdef long lab
    with nogil:
        for i in range(n):
            lab = labels[i]
            counts[lab] += 1
            for t in range(d):
                sums[lab, t] += <double> x[i, t]
    return sums_arr, counts_arr


def nc_topk(double[:, ::1] x, Py_ssize_t k):
    """Mean cosine similarity of each row to its k nearest rows.

    Self excluded; requires 2 <= m and 1 <= k <= m - 1. Similarities are
    clamped to [-1, 1]; ties break toward the lower row index. All arithmetic
    is sequential float64 so results match a naive recomputation exactly.
    Returns (scores float64[m], neighbor indices int64[m, k] in rank order).
    """
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    if m < 2 or k < 1 or k > m - 1:
        raise ValueError("nc_topk requires m >= 2 and 1 <= k <= m - 1")

    cdef Py_ssize_t zero_row = -1
    cdef Py_ssize_t i, j, t, pos, q
    cdef double acc, s, mean

    scores_arr = np.empty(m, dtype=np.float64)
    neighbors_arr = np.empty((m, k), dtype=np.int64)
    xn_arr = np.empty((m, d), dtype=np.float64)
    cdef double[::1] scores = scores_arr
    cdef long[:, ::1] neighbors = neighbors_arr
    cdef double[:, ::1] xn = xn_arr

    cdef double* best = <double*> malloc(k * sizeof(double))
    cdef long* best_idx = <long*> malloc(k * sizeof(long))
    if best is NULL or best_idx is NULL:
        if best is not NULL:
            free(best)
        if best_idx is not NULL:
            free(best_idx)
        raise MemoryError()

    try:
        with nogil:
            for i in range(m):
                acc = 0.0
                for t in range(d):
                    acc += x[i, t] * x[i, t]
                if acc == 0.0:
                    zero_row = i
                    break
                acc = sqrt(acc)
                for t in range(d):
                    xn[i, t] = x[i, t] / acc

            if zero_row < 0:
                for i in range(m):
                    for q in range(k):
                        best[q] = -INFINITY
                        best_idx[q] = -1
                    for j in range(m):
                        if j == i:
                            continue
                        s = 0.0
                        for t in range(d):
                            s += xn[i, t] * xn[j, t]
                        if s > 1.0:
                            s = 1.0
                        elif s < -1.0:
                            s = -1.0
                        # keep k best; strict > keeps the earlier (lower) row
                        # index in front on ties since j only grows
                        if s > best[k - 1]:
                            pos = k - 1
                            while pos > 0 and s > best[pos - 1]:
                                best[pos] = best[pos - 1]
                                best_idx[pos] = best_idx[pos - 1]
                                pos -= 1
                            best[pos] = s
                            best_idx[pos] = j
                    mean = 0.0
                    for q in range(k):
                        mean += best[q]
                        neighbors[i, q] = best_idx[q]
                    scores[i] = mean / (<double> k)
    finally:
        free(best)
        free(best_idx)

    if zero_row >= 0:
        from ..errors import ZeroNormFeature
        raise ZeroNormFeature(f"zero-norm feature row at index {zero_row}")
    return scores_arr, neighbors_arr
