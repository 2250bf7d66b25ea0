# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled pairwise kernels; mirrors ``splitlab._pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, acos, pow

cnp.import_array()


def pe_angular(z, labels, double delta):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] lab = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t n = zz.shape[0], d = zz.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] u = np.empty((n, d))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gu = np.zeros((n, d))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] grad = np.zeros((n, d))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] norms = np.empty(n)
    cdef Py_ssize_t i, j, k
    cdef double acc, c, cc, theta, w, loss = 0.0
    cdef double lo = -1.0 + delta, hi = 1.0 - delta
    for i in range(n):
        acc = 0.0
        for k in range(d):
            acc += zz[i, k] * zz[i, k]
        acc = sqrt(acc)
        if acc <= 0.0:
            acc = 1.0
        norms[i] = acc
        for k in range(d):
            u[i, k] = zz[i, k] / acc
    for i in range(n):
        for j in range(i + 1, n):
            if lab[i] != lab[j]:
                continue
            c = 0.0
            for k in range(d):
                c += u[i, k] * u[j, k]
            cc = c
            if cc < -1.0:
                cc = -1.0
            elif cc > hi:
                cc = hi
            theta = acos(cc)
            loss += 2.0 / theta
            if c > lo and c < hi:
                # both ordered pairs contribute
                w = 2.0 / (theta * theta * sqrt(1.0 - cc * cc))
                for k in range(d):
                    gu[i, k] += w * u[j, k]
                    gu[j, k] += w * u[i, k]
    for i in range(n):
        acc = 0.0
        for k in range(d):
            acc += gu[i, k] * u[i, k]
        for k in range(d):
            grad[i, k] = (gu[i, k] - acc * u[i, k]) / norms[i]
    return loss, grad


def pe_euclidean(z, labels, double guard):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] lab = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t n = zz.shape[0], d = zz.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] grad = np.zeros((n, d))
    cdef Py_ssize_t i, j, k
    cdef double r2, diff, inv, w, loss = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            if lab[i] != lab[j]:
                continue
            r2 = 0.0
            for k in range(d):
                diff = zz[i, k] - zz[j, k]
                r2 += diff * diff
            inv = 1.0 / sqrt(r2 + guard)
            loss += 2.0 * inv
            w = 2.0 * inv * inv * inv
            for k in range(d):
                diff = zz[i, k] - zz[j, k]
                grad[i, k] -= w * diff
                grad[j, k] += w * diff
    return loss, grad


def riesz_energy_grad(x, double s):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xx = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xx.shape[0], d = xx.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] grad = np.zeros((n, d))
    cdef Py_ssize_t i, j, k
    cdef double r2, diff, rs, w, energy = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            r2 = 1e-18
            for k in range(d):
                diff = xx[i, k] - xx[j, k]
                r2 += diff * diff
            rs = pow(r2, -0.5 * s)
            energy += 2.0 * rs
            w = 2.0 * s * rs / r2
            for k in range(d):
                diff = xx[i, k] - xx[j, k]
                grad[i, k] -= w * diff
                grad[j, k] += w * diff
    return energy, grad


def assign(x, centers):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xx = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cc = np.ascontiguousarray(centers, dtype=np.float64)
    cdef Py_ssize_t n = xx.shape[0], d = xx.shape[1], m = cc.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] labels = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mind = np.empty(n)
    cdef Py_ssize_t i, j, k, best
    cdef double dist, diff, bestd
    for i in range(n):
        best = 0
        bestd = 0.0
        for j in range(m):
            dist = 0.0
            for k in range(d):
                diff = xx[i, k] - cc[j, k]
                dist += diff * diff
            if j == 0 or dist < bestd:
                best = j
                bestd = dist
        labels[i] = best
        mind[i] = bestd
    return labels, mind


def lloyd(x, centers, int max_iter):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xx = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cen = np.array(centers, dtype=np.float64, copy=True)
    cdef Py_ssize_t n = xx.shape[0], d = xx.shape[1], m = cen.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] sums
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts
    cdef cnp.ndarray[cnp.int64_t, ndim=1] labels
    cdef cnp.ndarray[cnp.int64_t, ndim=1] new_labels
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mind
    cdef Py_ssize_t i, j, k, far, old, it
    cdef double fard, total
    labels, mind = assign(xx, cen)
    trace = [float(mind.sum())]
    for it in range(max_iter):
        sums = np.zeros((m, d))
        counts = np.zeros(m, dtype=np.int64)
        for i in range(n):
            counts[labels[i]] += 1
            for k in range(d):
                sums[labels[i], k] += xx[i, k]
        for j in range(m):
            if counts[j] == 0:
                far = 0
                fard = -1.0
                for i in range(n):
                    if counts[labels[i]] > 1 and mind[i] > fard:
                        far = i
                        fard = mind[i]
                old = labels[far]
                for k in range(d):
                    sums[old, k] -= xx[far, k]
                    sums[j, k] = xx[far, k]
                counts[old] -= 1
                counts[j] = 1
                labels[far] = j
                mind[far] = 0.0
        for j in range(m):
            for k in range(d):
                cen[j, k] = sums[j, k] / counts[j]
        new_labels, mind = assign(xx, cen)
        trace.append(float(mind.sum()))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return labels, cen, np.array(trace)
