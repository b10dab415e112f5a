"""Compiled GJK distance kernel for convex hulls of point sets.

Spheres and capsules are handled by the caller as a point/segment core plus a
radius, so the kernel only ever sees finite point sets.
"""

import numpy as np
from numba import njit

OK = 0
ITERATION_CAP = 1
NON_FINITE = 2

# subsets of a 4-point simplex, smallest first so ties keep the smaller face
_MASKS = np.array(sorted(range(1, 16), key=lambda m: (bin(m).count("1"), m)), dtype=np.int64)


@njit(cache=True)
def _support(pts, dx, dy, dz):
    best = 0
    bv = pts[0, 0] * dx + pts[0, 1] * dy + pts[0, 2] * dz
    for i in range(1, pts.shape[0]):
        v = pts[i, 0] * dx + pts[i, 1] * dy + pts[i, 2] * dz
        if v > bv:
            bv = v
            best = i
    return best


@njit(cache=True)
def _dot(a, i, b, j):
    return a[i, 0] * b[j, 0] + a[i, 1] * b[j, 1] + a[i, 2] * b[j, 2]


@njit(cache=True)
def _closest_on_simplex(w, k, masks, lam_out, idx_out):
    """Minimum-norm point of conv(w[:k]).

    Every face whose affine projection of the origin has strictly positive
    barycentric weights is a candidate; the candidate of least norm wins.
    Any such candidate lies inside the hull, so the choice is safe even when
    a nearly degenerate face yields an inaccurate projection.
    Returns the subset size; weights and indices are written to the outputs.
    """
    best = np.inf
    best_m = 0
    lam = np.zeros(4)
    idx = np.zeros(4, dtype=np.int64)
    for mi in range(masks.shape[0]):
        mask = masks[mi]
        if mask >= (1 << k):
            continue
        m = 0
        for i in range(k):
            if mask & (1 << i):
                idx[m] = i
                m += 1
        i0 = idx[0]
        if m == 1:
            lam[0] = 1.0
        elif m == 2:
            i1 = idx[1]
            ex = w[i1, 0] - w[i0, 0]
            ey = w[i1, 1] - w[i0, 1]
            ez = w[i1, 2] - w[i0, 2]
            ee = ex * ex + ey * ey + ez * ez
            if ee <= 0.0:
                continue
            t = -(w[i0, 0] * ex + w[i0, 1] * ey + w[i0, 2] * ez) / ee
            if t <= 0.0 or t >= 1.0:
                continue
            lam[0] = 1.0 - t
            lam[1] = t
        elif m == 3:
            i1 = idx[1]
            i2 = idx[2]
            e1 = w[i1] - w[i0]
            e2 = w[i2] - w[i0]
            a = e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]
            b = e1[0] * e2[0] + e1[1] * e2[1] + e1[2] * e2[2]
            c = e2[0] * e2[0] + e2[1] * e2[1] + e2[2] * e2[2]
            r1 = -(w[i0, 0] * e1[0] + w[i0, 1] * e1[1] + w[i0, 2] * e1[2])
            r2 = -(w[i0, 0] * e2[0] + w[i0, 1] * e2[1] + w[i0, 2] * e2[2])
            det = a * c - b * b
            if det <= 1e-15 * a * c or det <= 0.0:
                continue
            l1 = (r1 * c - r2 * b) / det
            l2 = (a * r2 - b * r1) / det
            l0 = 1.0 - l1 - l2
            if l0 <= 0.0 or l1 <= 0.0 or l2 <= 0.0:
                continue
            lam[0] = l0
            lam[1] = l1
            lam[2] = l2
        else:
            e1 = w[idx[1]] - w[i0]
            e2 = w[idx[2]] - w[i0]
            e3 = w[idx[3]] - w[i0]
            g = np.empty((3, 3))
            g[0, 0] = e1 @ e1
            g[0, 1] = e1 @ e2
            g[0, 2] = e1 @ e3
            g[1, 1] = e2 @ e2
            g[1, 2] = e2 @ e3
            g[2, 2] = e3 @ e3
            g[1, 0] = g[0, 1]
            g[2, 0] = g[0, 2]
            g[2, 1] = g[1, 2]
            r = np.empty(3)
            r[0] = -(w[i0] @ e1)
            r[1] = -(w[i0] @ e2)
            r[2] = -(w[i0] @ e3)
            det = np.linalg.det(g)
            if det <= 1e-15 * g[0, 0] * g[1, 1] * g[2, 2] or det <= 0.0:
                continue
            sol = np.linalg.solve(g, r)
            l0 = 1.0 - sol[0] - sol[1] - sol[2]
            if l0 <= 0.0 or sol[0] <= 0.0 or sol[1] <= 0.0 or sol[2] <= 0.0:
                continue
            lam[0] = l0
            lam[1] = sol[0]
            lam[2] = sol[1]
            lam[3] = sol[2]
        vx = 0.0
        vy = 0.0
        vz = 0.0
        for j in range(m):
            vx += lam[j] * w[idx[j], 0]
            vy += lam[j] * w[idx[j], 1]
            vz += lam[j] * w[idx[j], 2]
        nn = vx * vx + vy * vy + vz * vz
        if nn < best:
            best = nn
            best_m = m
            for j in range(m):
                lam_out[j] = lam[j]
                idx_out[j] = idx[j]
    return best_m


@njit(cache=True)
def gjk_points(a, b, max_iter, tol, masks, out_pa, out_pb):
    """Distance between conv(a) and conv(b).

    Writes witness points to ``out_pa``/``out_pb`` and returns
    ``(status, distance, iterations)``. On the iteration cap the best distance
    so far is returned with status ``ITERATION_CAP``.
    """
    w = np.zeros((4, 3))
    wa = np.zeros((4, 3))
    wb = np.zeros((4, 3))
    lam = np.zeros(4)
    lam_new = np.zeros(4)
    idx = np.zeros(4, dtype=np.int64)
    nw = np.zeros((4, 3))
    nwa = np.zeros((4, 3))
    nwb = np.zeros((4, 3))

    for j in range(3):
        wa[0, j] = a[0, j]
        wb[0, j] = b[0, j]
        w[0, j] = a[0, j] - b[0, j]
    k = 1
    lam[0] = 1.0
    vx, vy, vz = w[0, 0], w[0, 1], w[0, 2]
    if not (np.isfinite(vx) and np.isfinite(vy) and np.isfinite(vz)):
        return NON_FINITE, np.nan, 0
    status = ITERATION_CAP
    it = 0
    while it < max_iter:
        it += 1
        vv = vx * vx + vy * vy + vz * vz
        if vv <= 1e-30:
            status = OK
            break
        ia = _support(a, -vx, -vy, -vz)
        ib = _support(b, vx, vy, vz)
        wx = a[ia, 0] - b[ib, 0]
        wy = a[ia, 1] - b[ib, 1]
        wz = a[ia, 2] - b[ib, 2]
        if vv - (vx * wx + vy * wy + vz * wz) <= tol * np.sqrt(vv):
            status = OK
            break
        dup = False
        for i in range(k):
            if w[i, 0] == wx and w[i, 1] == wy and w[i, 2] == wz:
                dup = True
        if dup:
            status = OK
            break
        w[k, 0] = wx
        w[k, 1] = wy
        w[k, 2] = wz
        for j in range(3):
            wa[k, j] = a[ia, j]
            wb[k, j] = b[ib, j]
        m = _closest_on_simplex(w, k + 1, masks, lam_new, idx)
        nx = 0.0
        ny = 0.0
        nz = 0.0
        for i in range(m):
            nx += lam_new[i] * w[idx[i], 0]
            ny += lam_new[i] * w[idx[i], 1]
            nz += lam_new[i] * w[idx[i], 2]
        if nx * nx + ny * ny + nz * nz >= vv:
            # no progress: keep the previous simplex and stop
            status = OK
            break
        for i in range(m):
            for j in range(3):
                nw[i, j] = w[idx[i], j]
                nwa[i, j] = wa[idx[i], j]
                nwb[i, j] = wb[idx[i], j]
        for i in range(m):
            lam[i] = lam_new[i]
            for j in range(3):
                w[i, j] = nw[i, j]
                wa[i, j] = nwa[i, j]
                wb[i, j] = nwb[i, j]
        k = m
        vx, vy, vz = nx, ny, nz
        if k == 4:
            status = OK
            break

    for j in range(3):
        out_pa[j] = 0.0
        out_pb[j] = 0.0
    for i in range(k):
        for j in range(3):
            out_pa[j] += lam[i] * wa[i, j]
            out_pb[j] += lam[i] * wb[i, j]
    if k == 4 or vx * vx + vy * vy + vz * vz <= 1e-30:
        for j in range(3):
            out_pb[j] = out_pa[j]
        return status, 0.0, it
    dx = out_pa[0] - out_pb[0]
    dy = out_pa[1] - out_pb[1]
    dz = out_pa[2] - out_pb[2]
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
    if not np.isfinite(dist):
        return NON_FINITE, np.nan, it
    return status, dist, it


@njit(cache=True)
def inflate(core_dist, pa, pb, ra, rb, out_pa, out_pb):
    """Turn a core distance into a distance between radius-inflated shapes."""
    if core_dist > ra + rb:
        s = 1.0 / core_dist
        for j in range(3):
            n = (pb[j] - pa[j]) * s
            out_pa[j] = pa[j] + ra * n
            out_pb[j] = pb[j] - rb * n
        return core_dist - ra - rb
    frac = 0.0
    if ra + rb > 0.0:
        frac = ra / (ra + rb)
    for j in range(3):
        out_pa[j] = pa[j] + (pb[j] - pa[j]) * frac
        out_pb[j] = out_pa[j]
    return 0.0


@njit(cache=True)
def scene_closest(seg0, seg1, radii, human, max_iter, tol, masks, out):
    """Closest pair between each capsule ``(seg0[i], seg1[i], radii[i])`` and conv(human).

    ``out`` receives ``[distance, ph(3), pr(3)]``. Returns ``(status, link_row)``
    where ``link_row`` indexes the winning capsule (lowest index on ties).
    """
    core = np.empty((2, 3))
    pa = np.empty(3)
    pb = np.empty(3)
    qa = np.empty(3)
    qb = np.empty(3)
    best = np.inf
    best_i = -1
    status = OK
    for i in range(seg0.shape[0]):
        for j in range(3):
            core[0, j] = seg0[i, j]
            core[1, j] = seg1[i, j]
        st, cd, _ = gjk_points(core, human, max_iter, tol, masks, pa, pb)
        if st == NON_FINITE:
            return NON_FINITE, -1
        if st != OK:
            status = st
        d = inflate(cd, pa, pb, radii[i], 0.0, qa, qb)
        if d < best:
            best = d
            best_i = i
            out[0] = d
            for j in range(3):
                out[1 + j] = qb[j]
                out[4 + j] = qa[j]
    return status, best_i


@njit(cache=True)
def _clamp01(x):
    return 0.0 if x < 0.0 else (1.0 if x > 1.0 else x)


@njit(cache=True)
def segment_distances(p0, p1, q0, q1, out):
    """Row-wise closest distance between segments ``p0p1`` and ``q0q1``."""
    eps = 1e-300
    for i in range(p0.shape[0]):
        d1 = p1[i] - p0[i]
        d2 = q1[i] - q0[i]
        r = p0[i] - q0[i]
        a = d1[0] * d1[0] + d1[1] * d1[1] + d1[2] * d1[2]
        e = d2[0] * d2[0] + d2[1] * d2[1] + d2[2] * d2[2]
        f = d2[0] * r[0] + d2[1] * r[1] + d2[2] * r[2]
        if a <= eps and e <= eps:
            s = 0.0
            t = 0.0
        elif a <= eps:
            s = 0.0
            t = _clamp01(f / e)
        else:
            c = d1[0] * r[0] + d1[1] * r[1] + d1[2] * r[2]
            if e <= eps:
                s = _clamp01(-c / a)
                t = 0.0
            else:
                b = d1[0] * d2[0] + d1[1] * d2[1] + d1[2] * d2[2]
                denom = a * e - b * b
                s = _clamp01((b * f - c * e) / denom) if denom > 0.0 else 0.0
                t = (b * s + f) / e
                if t < 0.0:
                    s = _clamp01(-c / a)
                    t = 0.0
                elif t > 1.0:
                    s = _clamp01((b - c) / a)
                    t = 1.0
        dx = r[0] + s * d1[0] - t * d2[0]
        dy = r[1] + s * d1[1] - t * d2[1]
        dz = r[2] + s * d1[2] - t * d2[2]
        out[i] = np.sqrt(dx * dx + dy * dy + dz * dz)
