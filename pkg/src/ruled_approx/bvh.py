"""Closest-point queries against a static reference mesh.

An axis-aligned BVH is built once over the reference triangles (the reference
never moves); queries run in numba kernels with an explicit stack. Boundary
polyline projection scans the boundary segments directly, their count is
small compared to the triangle count.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .mesh import TriangleMesh

_LEAF_SIZE = 4


@njit(cache=True, fastmath=False)
def _closest_point_triangle(p, a, b, c):
    # Ericson, Real-Time Collision Detection, 5.1.5
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0.0 and d2 <= 0.0:
        return a.copy()
    bp = p - b
    d3 = ab @ bp
    d4 = ac @ bp
    if d3 >= 0.0 and d4 <= d3:
        return b.copy()
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return a + v * ab
    cp = p - c
    d5 = ab @ cp
    d6 = ac @ cp
    if d6 >= 0.0 and d5 <= d6:
        return c.copy()
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return a + w * ac
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b + w * (c - b)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return a + ab * v + ac * w


@njit(cache=True)
def _aabb_sqdist(p, bmin, bmax):
    d = 0.0
    for k in range(3):
        if p[k] < bmin[k]:
            t = bmin[k] - p[k]
            d += t * t
        elif p[k] > bmax[k]:
            t = p[k] - bmax[k]
            d += t * t
    return d


@njit(cache=True)
def _query_one(p, bmin, bmax, left, right, start, count, order, ta, tb, tc):
    best = 1e300
    best_pt = np.zeros(3)
    best_tri = -1
    stack = np.empty(128, dtype=np.int64)
    top = 0
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        if _aabb_sqdist(p, bmin[node], bmax[node]) >= best:
            continue
        if count[node] > 0:  # leaf
            for i in range(start[node], start[node] + count[node]):
                t = order[i]
                q = _closest_point_triangle(p, ta[t], tb[t], tc[t])
                d = (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 + (p[2] - q[2]) ** 2
                if d < best:
                    best = d
                    best_pt = q
                    best_tri = t
        else:
            l, r = left[node], right[node]
            dl = _aabb_sqdist(p, bmin[l], bmax[l])
            dr = _aabb_sqdist(p, bmin[r], bmax[r])
            # push the farther child first so the nearer is handled next
            if dl <= dr:
                stack[top] = r
                top += 1
                stack[top] = l
                top += 1
            else:
                stack[top] = l
                top += 1
                stack[top] = r
                top += 1
    return best_pt, best, best_tri


@njit(cache=True)
def _query_many(P, bmin, bmax, left, right, start, count, order, ta, tb, tc):
    n = P.shape[0]
    pts = np.empty((n, 3))
    sq = np.empty(n)
    tri = np.empty(n, dtype=np.int64)
    for i in range(n):
        q, d, t = _query_one(P[i], bmin, bmax, left, right, start, count, order, ta, tb, tc)
        pts[i] = q
        sq[i] = d
        tri[i] = t
    return pts, sq, tri


@njit(cache=True)
def _segment_query_many(P, sa, sb):
    n = P.shape[0]
    m = sa.shape[0]
    pts = np.empty((n, 3))
    sq = np.empty(n)
    seg = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = 1e300
        bj = -1
        bq = np.zeros(3)
        for j in range(m):
            d = sb[j] - sa[j]
            denom = d @ d
            t = 0.0
            if denom > 0.0:
                t = ((P[i] - sa[j]) @ d) / denom
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
            q = sa[j] + t * d
            dist = (P[i][0] - q[0]) ** 2 + (P[i][1] - q[1]) ** 2 + (P[i][2] - q[2]) ** 2
            if dist < best:
                best = dist
                bj = j
                bq = q
        pts[i] = bq
        sq[i] = best
        seg[i] = bj
    return pts, sq, seg


def _build(centroids):
    """Median-split build. Returns node arrays and the triangle order."""
    n = len(centroids)
    order = np.arange(n, dtype=np.int64)
    max_nodes = max(1, 2 * ((n + _LEAF_SIZE - 1) // _LEAF_SIZE) * 2)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    start = np.zeros(max_nodes, dtype=np.int64)
    count = np.zeros(max_nodes, dtype=np.int64)
    ranges = [(0, n)]
    node_of_range = [0]
    n_nodes = 1
    i = 0
    while i < len(ranges):
        s, e = ranges[i]
        node = node_of_range[i]
        i += 1
        if e - s <= _LEAF_SIZE:
            start[node] = s
            count[node] = e - s
            continue
        sub = centroids[order[s:e]]
        axis = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
        mid = (s + e) // 2
        sel = np.argpartition(sub[:, axis], mid - s)
        order[s:e] = order[s:e][sel]
        left[node] = n_nodes
        right[node] = n_nodes + 1
        n_nodes += 2
        ranges.append((s, mid))
        node_of_range.append(left[node])
        ranges.append((mid, e))
        node_of_range.append(right[node])
    return left[:n_nodes], right[:n_nodes], start[:n_nodes], count[:n_nodes], order


class ClosestPointQuery:
    """Closest-point projection onto a fixed reference mesh.

    surface(P) projects onto the triangles; boundary(P) projects onto the
    boundary polyline (only valid when the reference has a boundary).
    """

    def __init__(self, mesh: TriangleMesh):
        self.mesh = mesh
        V, F = mesh.vertices, mesh.faces
        self._ta = np.ascontiguousarray(V[F[:, 0]])
        self._tb = np.ascontiguousarray(V[F[:, 1]])
        self._tc = np.ascontiguousarray(V[F[:, 2]])
        cent = (self._ta + self._tb + self._tc) / 3.0
        self._left, self._right, self._start, self._count, self._order = _build(cent)
        # tight node boxes from the triangles they own
        nn = len(self._left)
        self._bmin = np.empty((nn, 3))
        self._bmax = np.empty((nn, 3))
        tri_min = np.minimum(np.minimum(self._ta, self._tb), self._tc)
        tri_max = np.maximum(np.maximum(self._ta, self._tb), self._tc)
        # children precede nothing; fill leaves then propagate bottom-up
        for node in range(nn - 1, -1, -1):
            if self._count[node] > 0:
                ids = self._order[self._start[node]:self._start[node] + self._count[node]]
                self._bmin[node] = tri_min[ids].min(axis=0)
                self._bmax[node] = tri_max[ids].max(axis=0)
            else:
                l, r = self._left[node], self._right[node]
                self._bmin[node] = np.minimum(self._bmin[l], self._bmin[r])
                self._bmax[node] = np.maximum(self._bmax[l], self._bmax[r])
        be = mesh.edges[mesh.boundary_edge]
        self._seg_a = np.ascontiguousarray(V[be[:, 0]]) if len(be) else np.zeros((0, 3))
        self._seg_b = np.ascontiguousarray(V[be[:, 1]]) if len(be) else np.zeros((0, 3))

    @property
    def has_boundary(self) -> bool:
        return len(self._seg_a) > 0

    def surface(self, P: np.ndarray):
        P = np.ascontiguousarray(np.atleast_2d(P), dtype=np.float64)
        return _query_many(P, self._bmin, self._bmax, self._left, self._right,
                           self._start, self._count, self._order,
                           self._ta, self._tb, self._tc)

    def boundary(self, P: np.ndarray):
        if not self.has_boundary:
            raise ValueError("reference mesh is closed, no boundary to project onto")
        P = np.ascontiguousarray(np.atleast_2d(P), dtype=np.float64)
        return _segment_query_many(P, self._seg_a, self._seg_b)
