# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Must stay numerically in step with ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sqrt

cnp.import_array()


def mf_sgd_epoch(const long long[:] users, const long long[:] items,
                 const double[:] rewards, const long long[:] order,
                 double[:, ::1] P, double[:, ::1] Q,
                 double[::1] bu, double[::1] bi,
                 double gb, double lr, double l2):
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t d = P.shape[1]
    cdef Py_ssize_t t, f
    cdef long long e, u, i
    cdef double pred, err, pu, qi, sse = 0.0
    for t in range(n):
        e = order[t]
        u = users[e]
        i = items[e]
        pred = gb + bu[u] + bi[i]
        for f in range(d):
            pred = pred + P[u, f] * Q[i, f]
        err = rewards[e] - pred
        sse = sse + err * err
        bu[u] = bu[u] + lr * (err - l2 * bu[u])
        bi[i] = bi[i] + lr * (err - l2 * bi[i])
        for f in range(d):
            pu = P[u, f]
            qi = Q[i, f]
            P[u, f] = pu + lr * (err * qi - l2 * pu)
            Q[i, f] = qi + lr * (err * pu - l2 * qi)
    return sse


cdef inline double _sq_euclidean(const double[:, ::1] X, Py_ssize_t a, Py_ssize_t b) nogil:
    cdef Py_ssize_t f
    cdef double acc = 0.0, diff
    for f in range(X.shape[1]):
        diff = X[a, f] - X[b, f]
        acc = acc + diff * diff
    return acc


def knn_topk(const double[:, ::1] X, const long long[:] queries,
             const long long[:] candidates, Py_ssize_t k, int cosine,
             int include_self):
    """Exact k smallest distances per query; ties go to the smaller index."""
    cdef Py_ssize_t nq = queries.shape[0]
    cdef Py_ssize_t nc = candidates.shape[0]
    cdef Py_ssize_t qi, ci, j, filled
    cdef long long q, c
    cdef double dist
    cdef double[:, ::1] gram
    cdef double[::1] qn, cn
    out_idx_arr = np.empty((nq, k), dtype=np.int64)
    out_dist_arr = np.empty((nq, k), dtype=np.float64)
    cdef long long[:, ::1] out_idx = out_idx_arr
    cdef double[:, ::1] out_dist = out_dist_arr
    if cosine:
        # the dot products go through BLAS; only the selection runs here
        Xa = np.asarray(X)
        Xq = Xa[np.asarray(queries)]
        Xc = Xa[np.asarray(candidates)]
        gram = np.ascontiguousarray(Xq @ Xc.T)
        qn = np.sqrt(np.einsum("ij,ij->i", Xq, Xq))
        cn = np.sqrt(np.einsum("ij,ij->i", Xc, Xc))
    for qi in range(nq):
        q = queries[qi]
        filled = 0
        for ci in range(nc):
            c = candidates[ci]
            if c == q:
                if not include_self:
                    continue
                dist = 0.0
            else:
                if cosine:
                    dist = 1.0 - gram[qi, ci] / (qn[qi] * cn[ci])
                else:
                    dist = sqrt(_sq_euclidean(X, q, c))
                if dist < 0.0:
                    dist = 0.0
                # same 1e-12 grid as the fallback so exact ties stay ties
                dist = floor(dist * 1e12 + 0.5) / 1e12
            # insertion into a sorted buffer of size k
            if filled < k:
                j = filled
                filled += 1
            elif dist < out_dist[qi, k - 1] or (dist == out_dist[qi, k - 1] and c < out_idx[qi, k - 1]):
                j = k - 1
            else:
                continue
            while j > 0 and (out_dist[qi, j - 1] > dist or (out_dist[qi, j - 1] == dist and out_idx[qi, j - 1] > c)):
                out_dist[qi, j] = out_dist[qi, j - 1]
                out_idx[qi, j] = out_idx[qi, j - 1]
                j -= 1
            out_dist[qi, j] = dist
            out_idx[qi, j] = c
    return out_idx_arr, out_dist_arr
