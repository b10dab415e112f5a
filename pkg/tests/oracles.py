"""Independent reference implementations used only by the tests.

They are deliberately slow and direct: enumerate hull features, finite
differences, all-pairs neighbourhoods.
"""

import itertools
import math

import numpy as np
from scipy.spatial import ConvexHull, QhullError


def point_segment(p, a, b):
    ab = b - a
    den = ab @ ab
    t = 0.0 if den == 0 else min(max((p - a) @ ab / den, 0.0), 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def segment_segment(p0, p1, q0, q1):
    """Distance between segments by minimising over a fine closed-form set of candidates."""
    cands = [point_segment(p0, q0, q1), point_segment(p1, q0, q1),
             point_segment(q0, p0, p1), point_segment(q1, p0, p1)]
    d1, d2, r = p1 - p0, q1 - q0, p0 - q0
    a, b, c, e, f = d1 @ d1, d1 @ d2, d1 @ r, d2 @ d2, d2 @ r
    den = a * e - b * b
    if den > 1e-14 * a * e:
        s = (b * f - c * e) / den
        t = (a * f - b * c) / den
        if 0 <= s <= 1 and 0 <= t <= 1:
            cands.append(float(np.linalg.norm(p0 + s * d1 - q0 - t * d2)))
    return min(cands)


def point_triangle_interior(p, a, b, c):
    """Distance from p to the plane of abc if the projection is inside the triangle, else inf."""
    n = np.cross(b - a, c - a)
    nn = n @ n
    if nn < 1e-20:
        return math.inf
    proj = p - ((p - a) @ n) / nn * n
    for u, v in ((a, b), (b, c), (c, a)):
        if np.cross(v - u, proj - u) @ n < 0:
            return math.inf
    return abs((p - a) @ n) / math.sqrt(nn)


def _features(pts):
    """(vertices, edges, triangles) of the convex hull, handling flat and tiny sets."""
    pts = np.asarray(pts, dtype=float)
    if len(pts) >= 4:
        try:
            hull = ConvexHull(pts)
            tris = [pts[s] for s in hull.simplices]
            edges = {tuple(sorted(e)) for s in hull.simplices for e in itertools.combinations(s, 2)}
            return pts[hull.vertices], [(pts[i], pts[j]) for i, j in edges], tris
        except QhullError:
            pass
    # degenerate (flat) or tiny set: every pair and triple is a feature candidate
    idx = range(len(pts))
    edges = [(pts[i], pts[j]) for i, j in itertools.combinations(idx, 2)]
    tris = [pts[list(t)] for t in itertools.combinations(idx, 3)]
    return pts, edges, tris


def _pt_seg(p, a, b):
    """Row-wise point-to-segment distances (arrays of shape (m, 3))."""
    ab = b - a
    den = np.einsum("ij,ij->i", ab, ab)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(den > 0, np.einsum("ij,ij->i", p - a, ab) / den, 0.0)
    t = np.clip(t, 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)


def _seg_seg(p0, p1, q0, q1):
    """Row-wise segment-segment distances: endpoint cases plus the interior critical point."""
    best = np.minimum.reduce([_pt_seg(p0, q0, q1), _pt_seg(p1, q0, q1),
                              _pt_seg(q0, p0, p1), _pt_seg(q1, p0, p1)])
    d1, d2, r = p1 - p0, q1 - q0, p0 - q0
    dot = lambda x, y: np.einsum("ij,ij->i", x, y)
    a, b, c, e, f = dot(d1, d1), dot(d1, d2), dot(d1, r), dot(d2, d2), dot(d2, r)
    den = a * e - b * b
    with np.errstate(invalid="ignore", divide="ignore"):
        s = (b * f - c * e) / den
        t = (a * f - b * c) / den
        ok = (den > 1e-14 * a * e) & (s >= 0) & (s <= 1) & (t >= 0) & (t <= 1)
        inner = np.linalg.norm(p0 + s[:, None] * d1 - q0 - t[:, None] * d2, axis=1)
    return np.where(ok, np.minimum(best, inner), best)


def _pt_tri(p, a, b, c):
    """Row-wise distance to the triangle plane when the projection falls inside, else inf."""
    n = np.cross(b - a, c - a)
    nn = np.einsum("ij,ij->i", n, n)
    with np.errstate(invalid="ignore", divide="ignore"):
        h = np.einsum("ij,ij->i", p - a, n) / nn
        proj = p - h[:, None] * n
        inside = nn > 1e-20
        for u, v in ((a, b), (b, c), (c, a)):
            inside &= np.einsum("ij,ij->i", np.cross(v - u, proj - u), n) >= 0
        d = np.abs(h) * np.sqrt(nn)
    return np.where(inside, d, np.inf)


def _pairs(x, y):
    """All (i, j) combinations of two stacks, as two aligned arrays."""
    return np.repeat(x, len(y), axis=0), np.tile(y, (len(x),) + (1,) * (y.ndim - 1))


def hull_distance(a, b):
    """Distance between conv(a) and conv(b) for separated sets.

    The closest pair of two disjoint polytopes is realised by a vertex-face,
    edge-edge or vertex-vertex pair, so the minimum over those is exact.
    """
    va, ea, ta = _features(a)
    vb, eb, tb = _features(b)
    ea, eb = np.array(ea).reshape(-1, 2, 3), np.array(eb).reshape(-1, 2, 3)
    ta, tb = np.array(ta).reshape(-1, 3, 3), np.array(tb).reshape(-1, 3, 3)
    best = math.inf
    x, y = _pairs(va, vb)
    best = min(best, float(np.linalg.norm(x - y, axis=1).min()))
    if len(ea) and len(eb):
        x, y = _pairs(ea, eb)
        best = min(best, float(_seg_seg(x[:, 0], x[:, 1], y[:, 0], y[:, 1]).min()))
    for verts, edges, tris in ((va, eb, tb), (vb, ea, ta)):
        if len(edges):
            x, y = _pairs(verts, edges)
            best = min(best, float(_pt_seg(x, y[:, 0], y[:, 1]).min()))
        if len(tris):
            x, y = _pairs(verts, tris)
            best = min(best, float(_pt_tri(x, y[:, 0], y[:, 1], y[:, 2]).min()))
    return best


def hull_segment_distance(points, s0, s1):
    """Distance from conv(points) to a segment, via hull features."""
    return hull_distance(points, np.array([s0, s1]))


def fd_point_velocity(fk_point, q, qd, h=1e-6):
    """Central finite difference of a point's world position along qd."""
    return (fk_point(q + h * qd) - fk_point(q - h * qd)) / (2 * h)


def brute_dbscan_partition(points, eps, min_pts):
    """DBSCAN by all-pairs distances; returns (core mask, set of frozenset clusters)."""
    pts = np.asarray(points, dtype=float)
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    nb = d <= eps
    core = nb.sum(1) >= min_pts
    # clusters = connected components of core points; borders attach to any core neighbour
    n = len(pts)
    comp = -np.ones(n, dtype=int)
    c = 0
    for i in range(n):
        if core[i] and comp[i] < 0:
            stack = [i]
            comp[i] = c
            while stack:
                j = stack.pop()
                for k in np.flatnonzero(nb[j] & core):
                    if comp[k] < 0:
                        comp[k] = c
                        stack.append(k)
            c += 1
    core_sets = [frozenset(np.flatnonzero(comp == k)) for k in range(c)]
    return core, core_sets, nb


def trapezoid_stop_time(distance, a, j):
    """Time for a rest-to-rest jerk-limited move of ``distance`` with rate/jerk limits."""
    if a * a / j <= distance:
        return distance / a + a / j
    return 2 * math.sqrt(distance / j)
