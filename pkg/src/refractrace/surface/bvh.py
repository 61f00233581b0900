"""Median-split BVH over axis-aligned boxes and ray/triangle tests.

The same tree builder serves triangle meshes and Gaussian ellipsoid bounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

T_EPS = 1e-9
BARY_EPS = 1e-12
_STACK = 128


@dataclass
class Bvh:
    lo: np.ndarray  # (M, 3) node bounds
    hi: np.ndarray
    left: np.ndarray  # (M,) child node or -1 for leaves
    right: np.ndarray
    start: np.ndarray  # (M,) leaf range into ``perm``
    count: np.ndarray
    perm: np.ndarray  # primitive permutation

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    def arrays(self):
        return self.lo, self.hi, self.left, self.right, self.start, self.count, self.perm


@njit(cache=True)
def _build(prim_lo, prim_hi, leaf_size):
    n = prim_lo.shape[0]
    cen = 0.5 * (prim_lo + prim_hi)
    perm = np.arange(n)
    m = max(2 * n - 1, 1)
    lo = np.empty((m, 3))
    hi = np.empty((m, 3))
    left = -np.ones(m, dtype=np.int64)
    right = -np.ones(m, dtype=np.int64)
    start = np.zeros(m, dtype=np.int64)
    count = np.zeros(m, dtype=np.int64)
    stack = np.empty((m, 3), dtype=np.int64)  # node, begin, end
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    sp = 1
    used = 1
    while sp > 0:
        sp -= 1
        node = stack[sp, 0]
        b = stack[sp, 1]
        e = stack[sp, 2]
        for c in range(3):
            lo[node, c] = np.inf
            hi[node, c] = -np.inf
        cmin = np.full(3, np.inf)
        cmax = np.full(3, -np.inf)
        for k in range(b, e):
            p = perm[k]
            for c in range(3):
                lo[node, c] = min(lo[node, c], prim_lo[p, c])
                hi[node, c] = max(hi[node, c], prim_hi[p, c])
                cmin[c] = min(cmin[c], cen[p, c])
                cmax[c] = max(cmax[c], cen[p, c])
        if e - b <= leaf_size:
            start[node] = b
            count[node] = e - b
            continue
        axis = 0
        for c in range(1, 3):
            if cmax[c] - cmin[c] > cmax[axis] - cmin[axis]:
                axis = c
        keys = np.empty(e - b)
        for k in range(b, e):
            keys[k - b] = cen[perm[k], axis]
        order = np.argsort(keys, kind="mergesort")
        seg = perm[b:e].copy()
        for k in range(e - b):
            perm[b + k] = seg[order[k]]
        mid = (b + e) // 2
        left[node] = used
        right[node] = used + 1
        stack[sp, 0] = used
        stack[sp, 1] = b
        stack[sp, 2] = mid
        stack[sp + 1, 0] = used + 1
        stack[sp + 1, 1] = mid
        stack[sp + 1, 2] = e
        sp += 2
        used += 2
    return lo[:used], hi[:used], left[:used], right[:used], start[:used], count[:used], perm


def build_bvh_from_boxes(lo: np.ndarray, hi: np.ndarray, leaf_size: int = 4) -> Bvh:
    lo = np.ascontiguousarray(lo, dtype=np.float64)
    hi = np.ascontiguousarray(hi, dtype=np.float64)
    if len(lo) == 0:
        raise ValueError("cannot build a BVH over zero primitives")
    return Bvh(*_build(lo, hi, leaf_size))


def build_bvh(mesh, leaf_size: int = 4) -> Bvh:
    """BVH over the triangle bounds of a :class:`ProxyMesh`."""
    tri = mesh.vertices[mesh.faces]  # (F, 3, 3)
    return build_bvh_from_boxes(tri.min(axis=1), tri.max(axis=1), leaf_size)


# ---------------------------------------------------------------- primitives

@njit(cache=True)
def ray_box(ox, oy, oz, dx, dy, dz, lo, hi, tmax):
    """Entry/exit of the ray segment ``[0, tmax]`` through a box; entry > exit means a miss."""
    t0 = 0.0
    t1 = tmax
    o = (ox, oy, oz)
    d = (dx, dy, dz)
    for c in range(3):
        if d[c] == 0.0:
            if o[c] < lo[c] or o[c] > hi[c]:
                return 1.0, 0.0
            continue
        inv = 1.0 / d[c]
        a = (lo[c] - o[c]) * inv
        b = (hi[c] - o[c]) * inv
        if a > b:
            a, b = b, a
        t0 = max(t0, a)
        t1 = min(t1, b)
        if t0 > t1:
            return t0, t1
    return t0, t1


@njit(cache=True)
def ray_triangle(o, d, v0, v1, v2):
    """Moller-Trumbore; returns ``(t, w0, w1, w2)`` with ``t = inf`` on a miss."""
    e1x = v1[0] - v0[0]
    e1y = v1[1] - v0[1]
    e1z = v1[2] - v0[2]
    e2x = v2[0] - v0[0]
    e2y = v2[1] - v0[1]
    e2z = v2[2] - v0[2]
    px = d[1] * e2z - d[2] * e2y
    py = d[2] * e2x - d[0] * e2z
    pz = d[0] * e2y - d[1] * e2x
    det = e1x * px + e1y * py + e1z * pz
    scale = np.sqrt((e1x * e1x + e1y * e1y + e1z * e1z) * (e2x * e2x + e2y * e2y + e2z * e2z))
    if abs(det) <= 1e-14 * scale:
        return np.inf, 0.0, 0.0, 0.0
    inv = 1.0 / det
    tx = o[0] - v0[0]
    ty = o[1] - v0[1]
    tz = o[2] - v0[2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < -BARY_EPS or u > 1.0 + BARY_EPS:
        return np.inf, 0.0, 0.0, 0.0
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    if v < -BARY_EPS or u + v > 1.0 + BARY_EPS:
        return np.inf, 0.0, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t <= T_EPS:
        return np.inf, 0.0, 0.0, 0.0
    return t, 1.0 - u - v, u, v


def intersect_triangle(origin, direction, v0, v1, v2):
    """Single ray/triangle test. Returns ``(t, w0, w1, w2)`` or ``None`` on a miss.

    The weights multiply ``v0, v1, v2`` respectively and sum to one.
    """
    args = [np.asarray(a, dtype=np.float64) for a in (origin, direction, v0, v1, v2)]
    t, a, b, c = ray_triangle(*args)
    if not np.isfinite(t):
        return None
    return t, a, b, c


@njit(cache=True)
def _nearest_mesh_hits(V, F, lo, hi, left, right, start, count, perm, O, D):
    n = O.shape[0]
    t_out = np.full(n, np.inf)
    f_out = -np.ones(n, dtype=np.int64)
    w_out = np.zeros((n, 3))
    stack = np.empty(_STACK, dtype=np.int64)
    for r in range(n):
        o = O[r]
        d = D[r]
        best = np.inf
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            a, b = ray_box(o[0], o[1], o[2], d[0], d[1], d[2], lo[node], hi[node], best)
            if a > b:
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    f = perm[k]
                    t, w0, w1, w2 = ray_triangle(o, d, V[F[f, 0]], V[F[f, 1]], V[F[f, 2]])
                    if t < best or (t == best and t < np.inf and f < f_out[r]):
                        best = t
                        f_out[r] = f
                        w_out[r, 0] = w0
                        w_out[r, 1] = w1
                        w_out[r, 2] = w2
            else:
                stack[sp] = right[node]
                stack[sp + 1] = left[node]
                sp += 2
        t_out[r] = best
    return t_out, f_out, w_out


@njit(cache=True)
def _count_box_visits(lo, hi, left, right, start, count, O, D):
    # number of primitives whose leaf box was reached; diagnostic for tests
    n = O.shape[0]
    out = np.zeros(n, dtype=np.int64)
    stack = np.empty(_STACK, dtype=np.int64)
    for r in range(n):
        o = O[r]
        d = D[r]
        sp = 1
        stack[0] = 0
        while sp > 0:
            sp -= 1
            node = stack[sp]
            a, b = ray_box(o[0], o[1], o[2], d[0], d[1], d[2], lo[node], hi[node], np.inf)
            if a > b:
                continue
            if left[node] < 0:
                out[r] += count[node]
            else:
                stack[sp] = right[node]
                stack[sp + 1] = left[node]
                sp += 2
    return out


@njit(cache=True)
def _brute_mesh_hits(V, F, O, D):
    n = O.shape[0]
    t_out = np.full(n, np.inf)
    f_out = -np.ones(n, dtype=np.int64)
    w_out = np.zeros((n, 3))
    for r in range(n):
        for f in range(F.shape[0]):
            t, w0, w1, w2 = ray_triangle(O[r], D[r], V[F[f, 0]], V[F[f, 1]], V[F[f, 2]])
            if t < t_out[r]:
                t_out[r] = t
                f_out[r] = f
                w_out[r, 0] = w0
                w_out[r, 1] = w1
                w_out[r, 2] = w2
    return t_out, f_out, w_out


def intersect_mesh(mesh, bvh: Bvh, origins, directions):
    """Nearest hit of each ray. Returns ``(t, face, bary)``; misses have ``face == -1``."""
    O = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
    D = np.ascontiguousarray(np.atleast_2d(directions), dtype=np.float64)
    return _nearest_mesh_hits(mesh.vertices, mesh.faces, *bvh.arrays(), O, D)


def intersect_mesh_brute(mesh, origins, directions):
    """Reference all-faces intersection, same return layout as :func:`intersect_mesh`."""
    O = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
    D = np.ascontiguousarray(np.atleast_2d(directions), dtype=np.float64)
    return _brute_mesh_hits(mesh.vertices, mesh.faces, O, D)


def count_candidates(bvh: Bvh, origins, directions) -> np.ndarray:
    """Primitives in leaves whose bounds each ray touches."""
    O = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
    D = np.ascontiguousarray(np.atleast_2d(directions), dtype=np.float64)
    return _count_box_visits(bvh.lo, bvh.hi, bvh.left, bvh.right, bvh.start, bvh.count, O, D)
