"""Ray/height-field intersection through proxy meshes.

:func:`recursive_subdivision_trace` works on a coarse grid mesh and refines
only the triangles that rays actually hit. Because midpoint subdivision of
the grid triangulation is itself a grid triangulation, every refined vertex
is addressed by its index on the finest lattice, and heights are cached in
a flat array over that lattice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .bvh import build_bvh, intersect_mesh, ray_triangle
from .mesh import (ProxyMesh, _query, child_faces, face_neighbors, face_normals, face_vertices_ij,
                   grid_faces, interpolate_normal, parent_face, vertex_faces, vertex_normals)

NORMAL_MODES = ("phong", "face")


@dataclass
class SurfaceHits:
    """Per-ray surface intersections (struct of arrays)."""

    origin: np.ndarray  # (R, 3)
    direction: np.ndarray  # (R, 3)
    t: np.ndarray  # (R,), inf on a miss
    face: np.ndarray  # (R,), face index into the accompanying mesh, -1 on a miss
    bary: np.ndarray  # (R, 3), weights of the face's vertices in order
    normal: np.ndarray  # (R, 3), zeros on a miss
    hit: np.ndarray = field(init=False)

    def __post_init__(self):
        self.hit = self.face >= 0

    @property
    def point(self) -> np.ndarray:
        t = np.where(self.hit, self.t, 0.0)
        return self.origin + t[:, None] * self.direction

    def __len__(self):
        return len(self.t)


@dataclass
class TraceResult:
    hits: SurfaceHits
    mesh: ProxyMesh  # mesh that ``hits.face`` indexes; carries vertex normals
    queries: int  # height-field evaluations performed
    normal_mode: str = "phong"
    stats: dict = field(default_factory=dict)


def _shading_normals(mesh, face, bary, mode):
    out = np.zeros((len(face), 3))
    ok = face >= 0
    if mode == "phong":
        out[ok] = interpolate_normal(mesh, face[ok], bary[ok])
    elif mode == "face":
        out[ok] = face_normals(mesh.vertices, mesh.faces[face[ok]])
    else:
        raise ValueError(f"unknown normal mode {mode!r}; expected one of {NORMAL_MODES}")
    return out


def trace_mesh(mesh: ProxyMesh, bvh, origins, directions, normal_mode: str = "phong") -> SurfaceHits:
    """Nearest-hit tracing against a fixed mesh with a prebuilt BVH."""
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    directions = np.ascontiguousarray(directions, dtype=np.float64)
    t, face, bary = intersect_mesh(mesh, bvh, origins, directions)
    return SurfaceHits(origins, directions, t, face, bary, _shading_normals(mesh, face, bary, normal_mode))


def dense_trace(net, origins, directions, nx: int, ny: int, normal_mode: str = "phong") -> TraceResult:
    """Build a full ``nx`` x ``ny`` proxy, a BVH over it, and trace (no refinement)."""
    from .mesh import build_proxy

    mesh = build_proxy(net, nx, ny)
    mesh.face_ids = np.arange(mesh.n_faces)
    hits = trace_mesh(mesh, build_bvh(mesh), origins, directions, normal_mode)
    return TraceResult(hits, mesh, nx * ny, normal_mode)


@njit(cache=True)
def _test_lattice_faces(O, D, rows, cand, nxk, step, nxf, xs, ys, hz):
    n = cand.shape[0]
    t_out = np.full(n, np.inf)
    f_out = -np.ones(n, dtype=np.int64)
    w_out = np.zeros((n, 3))
    v0 = np.empty(3)
    v1 = np.empty(3)
    v2 = np.empty(3)
    for r in range(n):
        o = O[rows[r]]
        d = D[rows[r]]
        for k in range(cand.shape[1]):
            f = cand[r, k]
            if f < 0:
                continue
            cell = f // 2
            up = f % 2
            j = cell // (nxk - 1)
            i = cell % (nxk - 1)
            # lower: (i,j) (i+1,j) (i+1,j+1); upper: (i,j) (i+1,j+1) (i,j+1)
            bi = i + 1
            bj = j if up == 0 else j + 1
            ci = i + 1 if up == 0 else i
            cj = j + 1
            v0[0] = xs[i * step]
            v0[1] = ys[j * step]
            v0[2] = hz[j * step * nxf + i * step]
            v1[0] = xs[bi * step]
            v1[1] = ys[bj * step]
            v1[2] = hz[bj * step * nxf + bi * step]
            v2[0] = xs[ci * step]
            v2[1] = ys[cj * step]
            v2[2] = hz[cj * step * nxf + ci * step]
            t, a, b, c = ray_triangle(o, d, v0, v1, v2)
            if t < t_out[r] or (t == t_out[r] and t < np.inf and f < f_out[r]):
                t_out[r] = t
                f_out[r] = f
                w_out[r, 0] = a
                w_out[r, 1] = b
                w_out[r, 2] = c
    return t_out, f_out, w_out


class _LatticeHeights:
    """Lazily queried heights on the finest lattice."""

    def __init__(self, net, nxf, nyf):
        xmin, xmax, ymin, ymax = net.domain
        self.net = net
        self.nxf, self.nyf = nxf, nyf
        self.xs = np.linspace(xmin, xmax, nxf)
        self.ys = np.linspace(ymin, ymax, nyf)
        self.z = np.full(nxf * nyf, np.nan)
        self.queries = 0

    def ids(self, ij, step):
        return ij[..., 1] * step * self.nxf + ij[..., 0] * step

    def ensure(self, ids):
        ids = np.unique(ids[ids >= 0])
        ids = ids[np.isnan(self.z[ids])]
        if ids.size:
            xy = np.column_stack([self.xs[ids % self.nxf], self.ys[ids // self.nxf]])
            self.z[ids] = _query(self.net, xy)
            self.queries += ids.size

    def vertices(self, ids):
        return np.column_stack([self.xs[ids % self.nxf], self.ys[ids // self.nxf], self.z[ids]])


def recursive_subdivision_trace(net, origins, directions, nx: int, ny: int, levels: int,
                                normal_mode: str = "phong", fallback: bool = True) -> TraceResult:
    """Coarse-to-fine ray/height-field intersection.

    1. Query heights on the coarse ``nx`` x ``ny`` grid, build a BVH and find
       each ray's nearest coarse triangle.
    2. ``levels`` times: drop triangles no ray hit, split each hit triangle
       into four at its edge midpoints, query heights of the new vertices and
       test every ray against the four children of its previous triangle
       only. Rays that miss all four children are retried once against the
       children of the triangles sharing a vertex with the parent
       (``fallback``); remaining misses are reported as no-hit.
    3. For Phong normals, the one-ring of every hit vertex is queried so that
       vertex normals equal those of the equivalent full-resolution grid.

    Returns a :class:`TraceResult` whose mesh is the final-level subset of
    the lattice that the hits reference.
    """
    if levels < 0:
        raise ValueError("levels must be >= 0")
    if normal_mode not in NORMAL_MODES:
        raise ValueError(f"unknown normal mode {normal_mode!r}")
    O = np.ascontiguousarray(origins, dtype=np.float64)
    D = np.ascontiguousarray(directions, dtype=np.float64)
    step = 2**levels
    nxf, nyf = (nx - 1) * step + 1, (ny - 1) * step + 1
    lat = _LatticeHeights(net, nxf, nyf)

    # global stage on the coarse mesh
    jj, ii = np.mgrid[0:ny, 0:nx]
    coarse_ids = lat.ids(np.stack([ii.ravel(), jj.ravel()], axis=1), step)
    lat.ensure(coarse_ids)
    coarse = ProxyMesh(lat.vertices(coarse_ids), grid_faces(nx, ny), grid=(nx, ny))
    t, face, bary = intersect_mesh(coarse, build_bvh(coarse), O, D)
    stats = {"coarse_queries": lat.queries, "coarse_hits": int((face >= 0).sum())}

    nxk, nyk = nx, ny
    parents = None
    for level in range(1, levels + 1):
        rows = np.flatnonzero(face >= 0)
        parent = face[rows]
        nxp, nyp = nxk, nyk
        nxk, nyk = 2 * nxk - 1, 2 * nyk - 1
        s = step // 2**level
        kids = child_faces(parent, nxp)
        lat.ensure(lat.ids(face_vertices_ij(kids, nxk), s).ravel())
        t_l, f_l, w_l = _test_lattice_faces(O, D, rows, kids, nxk, s, nxf, lat.xs, lat.ys, lat.z)
        miss = np.flatnonzero(f_l < 0)
        rescued = 0
        if fallback and miss.size:
            neigh = face_neighbors(parent[miss], nxp, nyp)  # (m, 12)
            nk = child_faces(np.where(neigh >= 0, neigh, 0), nxp)  # (m, 12, 4)
            nk = np.where(neigh[..., None] >= 0, nk, -1).reshape(len(miss), 48)
            vij = face_vertices_ij(np.where(nk >= 0, nk, 0), nxk)
            ids = np.where(nk[..., None] >= 0, lat.ids(vij, s), -1)
            lat.ensure(ids.ravel())
            t_m, f_m, w_m = _test_lattice_faces(O, D, rows[miss], nk, nxk, s, nxf, lat.xs, lat.ys, lat.z)
            t_l[miss], f_l[miss], w_l[miss] = t_m, f_m, w_m
            rescued = int((f_m >= 0).sum())
        face = np.full(len(O), -1, dtype=np.int64)
        t = np.full(len(O), np.inf)
        bary = np.zeros((len(O), 3))
        face[rows], t[rows], bary[rows] = f_l, t_l, w_l
        stats[f"level{level}_queries"] = lat.queries
        stats[f"level{level}_rescued"] = rescued
        stats[f"level{level}_lost"] = int(miss.size - rescued)

    # local mesh over the final lattice
    hit_faces = np.unique(face[face >= 0])
    if normal_mode == "phong" and hit_faces.size:
        vij = face_vertices_ij(hit_faces, nxf).reshape(-1, 2)
        ring = vertex_faces(vij[:, 0], vij[:, 1], nxf, nyf).ravel()
        all_faces = np.unique(np.concatenate([hit_faces, ring[ring >= 0]]))
    else:
        all_faces = hit_faces
    fv = lat.ids(face_vertices_ij(all_faces, nxf), 1).reshape(-1, 3)
    lat.ensure(fv.ravel())
    vid, inv = np.unique(fv, return_inverse=True)
    mesh = ProxyMesh(lat.vertices(vid), inv.reshape(-1, 3), grid=(nxf, nyf),
                     parents=parent_face(all_faces, nxf) if levels > 0 else None, face_ids=all_faces)
    vertex_normals(mesh)
    local = np.full(len(O), -1, dtype=np.int64)
    ok = face >= 0
    local[ok] = np.searchsorted(all_faces, face[ok])
    hits = SurfaceHits(O, D, t, local, bary, _shading_normals(mesh, local, bary, normal_mode))
    stats["normal_queries"] = lat.queries
    return TraceResult(hits, mesh, lat.queries, normal_mode, stats)
