# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled distance kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def pairwise_sqdist(a, b):
    cdef const double[:, ::1] A = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:, ::1] B = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = A.shape[0], m = B.shape[0], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] O = out
    cdef double dx, dy, dz
    with nogil:
        for i in range(n):
            for j in range(m):
                dx = A[i, 0] - B[j, 0]
                dy = A[i, 1] - B[j, 1]
                dz = A[i, 2] - B[j, 2]
                O[i, j] = dx * dx + dy * dy + dz * dz
    return out


def nearest_neighbors(src, tgt):
    cdef const double[:, ::1] S = np.ascontiguousarray(src, dtype=np.float64)
    cdef const double[:, ::1] T = np.ascontiguousarray(tgt, dtype=np.float64)
    cdef Py_ssize_t n = S.shape[0], m = T.shape[0], i, j, best_j
    idx = np.empty(n, dtype=np.int64)
    d2 = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] I = idx
    cdef double[::1] D = d2
    cdef double dx, dy, dz, v, best
    with nogil:
        for i in range(n):
            best = INFINITY
            best_j = 0
            for j in range(m):
                dx = S[i, 0] - T[j, 0]
                dy = S[i, 1] - T[j, 1]
                dz = S[i, 2] - T[j, 2]
                v = dx * dx + dy * dy + dz * dz
                if v < best:
                    best = v
                    best_j = j
            I[i] = best_j
            D[i] = best
    return idx, d2


cdef inline double _point_box_sqdist(double px, double py, double pz,
                                     const double[::1] lo, const double[::1] hi) noexcept nogil:
    cdef double total = 0.0, e
    if px < lo[0]:
        e = lo[0] - px
        total += e * e
    elif px > hi[0]:
        e = px - hi[0]
        total += e * e
    if py < lo[1]:
        e = lo[1] - py
        total += e * e
    elif py > hi[1]:
        e = py - hi[1]
        total += e * e
    if pz < lo[2]:
        e = lo[2] - pz
        total += e * e
    elif pz > hi[2]:
        e = pz - hi[2]
        total += e * e
    return total


def segment_aabb_sqdist(a, b, lo, hi):
    cdef const double[::1] A = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[::1] Bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef const double[::1] L = np.ascontiguousarray(lo, dtype=np.float64)
    cdef const double[::1] H = np.ascontiguousarray(hi, dtype=np.float64)
    cdef double d[3]
    cdef double knots[8]
    cdef int nk = 2, k, i, j, c
    cdef double s, s0, s1, mid, p, off, qa, qb, qc, val, best = INFINITY, tmp
    cdef double cands[3]
    cdef double bound
    for k in range(3):
        d[k] = Bv[k] - A[k]
    knots[0] = 0.0
    knots[1] = 1.0
    for k in range(3):
        if d[k] != 0.0:
            for j in range(2):
                bound = L[k] if j == 0 else H[k]
                s = (bound - A[k]) / d[k]
                if 0.0 < s < 1.0:
                    knots[nk] = s
                    nk += 1
    # insertion sort, at most 8 entries
    for i in range(1, nk):
        tmp = knots[i]
        j = i - 1
        while j >= 0 and knots[j] > tmp:
            knots[j + 1] = knots[j]
            j -= 1
        knots[j + 1] = tmp
    for i in range(nk - 1):
        s0 = knots[i]
        s1 = knots[i + 1]
        mid = 0.5 * (s0 + s1)
        qa = 0.0
        qb = 0.0
        qc = 0.0
        for k in range(3):
            p = A[k] + mid * d[k]
            if p < L[k]:
                off = A[k] - L[k]
            elif p > H[k]:
                off = A[k] - H[k]
            else:
                continue
            qa += d[k] * d[k]
            qb += 2.0 * off * d[k]
            qc += off * off
        cands[0] = s0
        cands[1] = s1
        c = 2
        if qa > 0.0:
            s = -qb / (2.0 * qa)
            if s0 < s < s1:
                cands[2] = s
                c = 3
        for j in range(c):
            s = cands[j]
            val = _point_box_sqdist(A[0] + s * d[0], A[1] + s * d[1],
                                    A[2] + s * d[2], L, H)
            if val < best:
                best = val
    return best


def points_in_boxes(points, lo, hi):
    cdef const double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, ::1] L = np.ascontiguousarray(lo, dtype=np.float64)
    cdef const double[:, ::1] H = np.ascontiguousarray(hi, dtype=np.float64)
    cdef Py_ssize_t n = P.shape[0], nb = L.shape[0], i, k
    mask = np.zeros(n, dtype=bool)
    cdef cnp.npy_bool[::1] M = mask
    with nogil:
        for i in range(n):
            for k in range(nb):
                if (L[k, 0] < P[i, 0] < H[k, 0] and L[k, 1] < P[i, 1] < H[k, 1]
                        and L[k, 2] < P[i, 2] < H[k, 2]):
                    M[i] = 1
                    break
    return mask
