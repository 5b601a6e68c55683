"""Pure numpy implementations of the distance kernels.

These mirror ``_ckernels.pyx`` operation for operation so both backends
produce bit-identical squared distances: each entry is accumulated as
``dx*dx + dy*dy + dz*dz`` in that order.
"""
import numpy as np

_CHUNK = 512


def _sqdist_block(a, b):
    dx = a[:, 0, None] - b[None, :, 0]
    dy = a[:, 1, None] - b[None, :, 1]
    dz = a[:, 2, None] - b[None, :, 2]
    return dx * dx + dy * dy + dz * dz


def pairwise_sqdist(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    out = np.empty((a.shape[0], b.shape[0]))
    for s in range(0, a.shape[0], _CHUNK):
        out[s:s + _CHUNK] = _sqdist_block(a[s:s + _CHUNK], b)
    return out


def nearest_neighbors(src, tgt):
    """Index of, and squared distance to, the nearest ``tgt`` row for each ``src`` row.

    Ties resolve to the smallest target index (``argmin`` returns the first).
    """
    src = np.ascontiguousarray(src, dtype=np.float64)
    tgt = np.ascontiguousarray(tgt, dtype=np.float64)
    n = src.shape[0]
    idx = np.empty(n, dtype=np.int64)
    d2 = np.empty(n)
    rows = np.arange(min(_CHUNK, n))
    for s in range(0, n, _CHUNK):
        block = _sqdist_block(src[s:s + _CHUNK], tgt)
        j = np.argmin(block, axis=1)
        idx[s:s + _CHUNK] = j
        d2[s:s + _CHUNK] = block[rows[:block.shape[0]], j]
    return idx, d2


def segment_aabb_sqdist(a, b, lo, hi):
    """Exact squared distance between segment ``a``-``b`` and a closed box.

    The squared distance along the segment is a convex piecewise quadratic in
    the segment parameter; breakpoints are where a coordinate crosses a box
    face. Each piece is minimized in closed form.
    """
    a = np.asarray(a, dtype=np.float64)
    d = np.asarray(b, dtype=np.float64) - a
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    knots = [0.0, 1.0]
    for k in range(3):
        if d[k] != 0.0:
            for bound in (lo[k], hi[k]):
                s = (bound - a[k]) / d[k]
                if 0.0 < s < 1.0:
                    knots.append(s)
    knots.sort()
    best = np.inf
    for i in range(len(knots) - 1):
        s0, s1 = knots[i], knots[i + 1]
        mid = 0.5 * (s0 + s1)
        # on this piece each axis is either inside (0), below lo or above hi
        qa = qb = qc = 0.0
        for k in range(3):
            p = a[k] + mid * d[k]
            if p < lo[k]:
                off = a[k] - lo[k]
            elif p > hi[k]:
                off = a[k] - hi[k]
            else:
                continue
            qa += d[k] * d[k]
            qb += 2.0 * off * d[k]
            qc += off * off
        cands = [s0, s1]
        if qa > 0.0:
            s = -qb / (2.0 * qa)
            if s0 < s < s1:
                cands.append(s)
        for s in cands:
            val = _point_box_sqdist(a + s * d, lo, hi)
            if val < best:
                best = val
    return best


def _point_box_sqdist(p, lo, hi):
    total = 0.0
    for k in range(3):
        if p[k] < lo[k]:
            e = lo[k] - p[k]
            total += e * e
        elif p[k] > hi[k]:
            e = p[k] - hi[k]
            total += e * e
    return total


def points_in_boxes(points, lo, hi):
    """Boolean mask of points strictly inside any of the boxes ``lo[k]``..``hi[k]``."""
    points = np.asarray(points, dtype=np.float64)
    mask = np.zeros(points.shape[0], dtype=bool)
    for k in range(lo.shape[0]):
        mask |= np.all((points > lo[k]) & (points < hi[k]), axis=1)
    return mask
