# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: pairwise similarity, folder DBSCAN, duplicate scans.

Same contracts as ``_kernels_py``; accumulation in double precision.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def pairwise_similarity(const float[:, ::1] a, const float[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t n = b.shape[0]
    cdef Py_ssize_t d = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc
    if b.shape[1] != d:
        raise ValueError("dimension mismatch")
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(m):
            for j in range(n):
                acc = 0.0
                for k in range(d):
                    acc += (<double> a[i, k]) * (<double> b[j, k])
                o[i, j] = acc
    return out


def dbscan_labels(const double[:, ::1] sim, double eps, int min_pts):
    cdef Py_ssize_t m = sim.shape[0]
    cdef Py_ssize_t i, j, p, deg, top
    cdef double thr = 1.0 - eps
    cdef long long cid = 0
    labels_arr = np.full(m, -1, dtype=np.int64)
    if m == 0:
        return labels_arr
    cdef long long[::1] labels = labels_arr
    core_arr = np.zeros(m, dtype=np.uint8)
    cdef unsigned char[::1] core = core_arr
    stack_arr = np.empty(m, dtype=np.int64)
    cdef long long[::1] stack = stack_arr
    with nogil:
        # the point itself always counts toward the neighbor total
        for i in range(m):
            deg = 0
            for j in range(m):
                if j == i or sim[i, j] >= thr:
                    deg += 1
            if deg >= min_pts:
                core[i] = 1
        for i in range(m):
            if core[i] and labels[i] == -1:
                labels[i] = cid
                stack[0] = i
                top = 1
                while top > 0:
                    top -= 1
                    p = stack[top]
                    for j in range(m):
                        if core[j] and labels[j] == -1 and sim[p, j] >= thr:
                            labels[j] = cid
                            stack[top] = j
                            top += 1
                cid += 1
        for i in range(m):
            if not core[i]:
                for j in range(m):
                    if core[j] and sim[i, j] >= thr:
                        labels[i] = labels[j]
                        break
    return labels_arr


def dedup_keep(const double[:, ::1] sim, double threshold):
    cdef Py_ssize_t m = sim.shape[0]
    cdef Py_ssize_t i, j, count, pos
    keep_arr = np.ones(m, dtype=bool)
    if m < 2:
        return keep_arr
    cdef unsigned char[::1] keep = keep_arr.view(np.uint8)
    count = 0
    with nogil:
        for i in range(m - 1):
            for j in range(i + 1, m):
                if sim[i, j] > threshold:
                    count += 1
    if count == 0:
        return keep_arr
    ii_arr = np.empty(count, dtype=np.int64)
    jj_arr = np.empty(count, dtype=np.int64)
    ss_arr = np.empty(count, dtype=np.float64)
    cdef long long[::1] ii = ii_arr
    cdef long long[::1] jj = jj_arr
    cdef double[::1] ss = ss_arr
    pos = 0
    with nogil:
        for i in range(m - 1):
            for j in range(i + 1, m):
                if sim[i, j] > threshold:
                    ii[pos] = i
                    jj[pos] = j
                    ss[pos] = sim[i, j]
                    pos += 1
    order_arr = np.lexsort((jj_arr, ii_arr, -ss_arr)).astype(np.int64)
    cdef long long[::1] order = order_arr
    cdef Py_ssize_t k, a, b
    with nogil:
        for k in range(count):
            a = ii[order[k]]
            b = jj[order[k]]
            if keep[a] and keep[b]:
                keep[b] = 0
    return keep_arr


def self_similar_pairs(const float[:, ::1] x, double threshold, Py_ssize_t row_stop=-1):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t i, j, k
    cdef Py_ssize_t stop = n - 1
    cdef double acc
    if row_stop >= 0 and row_stop < stop:
        stop = row_stop
    scratch_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] scratch = scratch_arr
    ii_parts = []
    jj_parts = []
    ss_parts = []
    for i in range(stop):
        with nogil:
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(d):
                    acc += (<double> x[i, k]) * (<double> x[j, k])
                scratch[j] = acc
        row = scratch_arr[i + 1 : n]
        hit = np.flatnonzero(row > threshold)
        if hit.size:
            ii_parts.append(np.full(hit.size, i, dtype=np.int64))
            jj_parts.append((hit + (i + 1)).astype(np.int64))
            ss_parts.append(row[hit].copy())
    if ii_parts:
        return (
            np.concatenate(ii_parts),
            np.concatenate(jj_parts),
            np.concatenate(ss_parts),
        )
    empty = np.empty(0, dtype=np.int64)
    return empty, empty.copy(), np.empty(0, dtype=np.float64)


def max_cross_similarity(const float[:, ::1] a, const float[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t n = b.shape[0]
    cdef Py_ssize_t d = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, best
    out = np.full(m, -INFINITY, dtype=np.float64)
    if m == 0 or n == 0:
        return out
    if b.shape[1] != d:
        raise ValueError("dimension mismatch")
    cdef double[::1] o = out
    with nogil:
        for i in range(m):
            best = -INFINITY
            for j in range(n):
                acc = 0.0
                for k in range(d):
                    acc += (<double> a[i, k]) * (<double> b[j, k])
                if acc > best:
                    best = acc
            o[i] = best
    return out
