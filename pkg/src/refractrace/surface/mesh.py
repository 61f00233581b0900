"""Proxy meshes for height fields.

Grid meshes use ``nx * ny`` vertices, vertex id ``j * nx + i``, and split
every cell along its lower-left to upper-right diagonal::

    d ---- c        face 2k   (lower): (a, b, c)
    |    / |        face 2k+1 (upper): (a, c, d)
    |  /   |        k = j * (nx - 1) + i
    a ---- b

Both triangles are counter-clockwise seen from +z. Midpoint subdivision of
this triangulation reproduces the same pattern on the grid with twice the
cell count, which lets refined levels be addressed by integer indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit


class MeshError(ValueError):
    pass


@dataclass
class ProxyMesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int64
    vertex_normals: np.ndarray | None = None  # (V, 3)
    grid: tuple[int, int] | None = None  # (nx, ny) of the lattice the vertices live on
    parents: np.ndarray | None = None  # (F,) parent face id at the previous level, -1 if none
    face_ids: np.ndarray | None = None  # (F,) lattice face id when the mesh is a subset of a grid

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise MeshError("face index out of range")

    @property
    def n_faces(self) -> int:
        return len(self.faces)


# ---------------------------------------------------------------- grid topology

def grid_xy(domain, nx: int, ny: int) -> np.ndarray:
    xmin, xmax, ymin, ymax = domain
    xs = np.linspace(xmin, xmax, nx)
    ys = np.linspace(ymin, ymax, ny)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def grid_faces(nx: int, ny: int) -> np.ndarray:
    j, i = np.mgrid[0:ny - 1, 0:nx - 1]
    a = (j * nx + i).ravel()
    b, c, d = a + 1, a + nx + 1, a + nx
    faces = np.empty((2 * a.size, 3), dtype=np.int64)
    faces[0::2] = np.stack([a, b, c], axis=1)
    faces[1::2] = np.stack([a, c, d], axis=1)
    return faces


def face_cell(face, nx: int):
    face = np.asarray(face)
    cell, upper = np.divmod(face, 2)
    j, i = np.divmod(cell, nx - 1)
    return i, j, upper


def cell_face(i, j, upper, nx: int):
    return 2 * (np.asarray(j) * (nx - 1) + np.asarray(i)) + np.asarray(upper)


def face_vertices_ij(face, nx: int):
    """Integer lattice coordinates ``(i, j)`` of each face's three vertices, shape ``(..., 3, 2)``."""
    i, j, up = face_cell(face, nx)
    a = np.stack([i, j], axis=-1)
    b = np.stack([i + 1, j], axis=-1)
    c = np.stack([i + 1, j + 1], axis=-1)
    d = np.stack([i, j + 1], axis=-1)
    second = np.where(up[..., None] == 1, c, b)
    third = np.where(up[..., None] == 1, d, c)
    return np.stack([a, second, third], axis=-2)


# children of a lower / upper face, as (di, dj, upper) offsets from (2i, 2j)
_CHILDREN = np.array([
    [[0, 0, 0], [1, 0, 0], [1, 0, 1], [1, 1, 0]],
    [[0, 0, 1], [1, 1, 1], [0, 1, 1], [0, 1, 0]],
])


def child_faces(face, nx: int) -> np.ndarray:
    """The four midpoint-subdivision children (ids on the ``2*nx - 1`` grid)."""
    i, j, up = face_cell(face, nx)
    off = _CHILDREN[up]  # (..., 4, 3)
    return cell_face(2 * i[..., None] + off[..., 0], 2 * j[..., None] + off[..., 1], off[..., 2], 2 * nx - 1)


def parent_face(face, nx_fine: int) -> np.ndarray:
    """Inverse of :func:`child_faces`."""
    i, j, up = face_cell(face, nx_fine)
    li, lj = i % 2, j % 2
    # lower parent owns local cells (0,0,L), (1,0,L), (1,0,U), (1,1,L)
    owned_by_lower = ((li == 0) & (lj == 0) & (up == 0)) | ((li == 1) & (lj == 0)) | \
        ((li == 1) & (lj == 1) & (up == 0))
    return cell_face(i // 2, j // 2, np.where(owned_by_lower, 0, 1), (nx_fine + 1) // 2)


def vertex_faces(i, j, nx: int, ny: int) -> np.ndarray:
    """Faces incident to lattice vertex ``(i, j)``, padded with -1, shape ``(..., 6)``."""
    i = np.asarray(i)
    j = np.asarray(j)
    cand = [(i - 1, j - 1, 0), (i - 1, j - 1, 1), (i, j - 1, 1), (i - 1, j, 0), (i, j, 0), (i, j, 1)]
    out = []
    for ci, cj, up in cand:
        valid = (ci >= 0) & (cj >= 0) & (ci < nx - 1) & (cj < ny - 1)
        out.append(np.where(valid, cell_face(ci, cj, up, nx), -1))
    return np.stack(out, axis=-1)


def face_neighbors(face, nx: int, ny: int) -> np.ndarray:
    """Faces sharing at least one vertex with ``face`` (excluding itself), padded with -1."""
    face = np.atleast_1d(np.asarray(face))
    vij = face_vertices_ij(face, nx)
    adj = vertex_faces(vij[..., 0], vij[..., 1], nx, ny).reshape(len(face), 18)
    adj = np.where(adj == face[:, None], -1, adj)
    adj = np.sort(adj, axis=1)
    dup = np.zeros_like(adj, dtype=bool)
    dup[:, 1:] = adj[:, 1:] == adj[:, :-1]
    adj = np.where(dup, -1, adj)
    adj = -np.sort(-adj, axis=1)
    return adj[:, :12]


# ---------------------------------------------------------------- construction

def _query(field, xy):
    from ..heightfield import HeightFieldNet, height_only

    if isinstance(field, HeightFieldNet):
        return height_only(field, xy)
    return np.asarray(field(xy), dtype=np.float64)


def build_proxy(net, nx: int, ny: int) -> ProxyMesh:
    """Lift a uniform ``nx`` x ``ny`` grid over ``net.domain`` by querying heights.

    ``net`` is a :class:`HeightFieldNet` or any object with a ``domain``
    attribute that maps ``(n, 2)`` points to heights when called.
    """
    if nx < 2 or ny < 2:
        raise ValueError("grid needs at least 2 x 2 vertices")
    xy = grid_xy(net.domain, nx, ny)
    z = _query(net, xy)
    mesh = ProxyMesh(np.column_stack([xy, z]), grid_faces(nx, ny), grid=(nx, ny))
    return vertex_normals(mesh)


def face_normals(vertices, faces, unit: bool = True) -> np.ndarray:
    v0, v1, v2 = (vertices[faces[:, k]] for k in range(3))
    n = np.cross(v1 - v0, v2 - v0)
    if unit:
        n = n / np.linalg.norm(n, axis=1, keepdims=True)
    return n


def vertex_normals(mesh: ProxyMesh) -> ProxyMesh:
    """Set each vertex normal to the normalised mean of its adjacent unit face normals."""
    fn = face_normals(mesh.vertices, mesh.faces)
    acc = np.zeros_like(mesh.vertices)
    count = np.zeros(len(mesh.vertices))
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], fn)
        np.add.at(count, mesh.faces[:, k], 1.0)
    isolated = count == 0
    acc[isolated] = (0.0, 0.0, 1.0)
    count[isolated] = 1.0
    acc /= count[:, None]
    mesh.vertex_normals = acc / np.linalg.norm(acc, axis=1, keepdims=True)
    return mesh


def interpolate_normal(mesh: ProxyMesh, face, bary) -> np.ndarray:
    """Barycentric blend of the hit face's vertex normals, renormalised."""
    face = np.asarray(face)
    bary = np.asarray(bary, dtype=np.float64)
    vn = mesh.vertex_normals[mesh.faces[face]]  # (..., 3, 3)
    n = np.einsum("...k,...ki->...i", bary, vn)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def max_height(mesh: ProxyMesh) -> float:
    return float(mesh.vertices[:, 2].max())


# ---------------------------------------------------------------- validation and I/O

@njit(cache=True)
def _max_cover(v, faces):
    # largest number of projected triangles containing any face centroid
    nf = faces.shape[0]
    lo = np.empty((nf, 2))
    hi = np.empty((nf, 2))
    for f in range(nf):
        for c in range(2):
            a = v[faces[f, 0], c]
            b = v[faces[f, 1], c]
            d = v[faces[f, 2], c]
            lo[f, c] = min(a, b, d)
            hi[f, c] = max(a, b, d)
    worst = 0
    for f in range(nf):
        px = (v[faces[f, 0], 0] + v[faces[f, 1], 0] + v[faces[f, 2], 0]) / 3.0
        py = (v[faces[f, 0], 1] + v[faces[f, 1], 1] + v[faces[f, 2], 1]) / 3.0
        cnt = 0
        for g in range(nf):
            if px < lo[g, 0] or px > hi[g, 0] or py < lo[g, 1] or py > hi[g, 1]:
                continue
            inside = True
            for e in range(3):
                ax = v[faces[g, e], 0]
                ay = v[faces[g, e], 1]
                bx = v[faces[g, (e + 1) % 3], 0]
                by = v[faces[g, (e + 1) % 3], 1]
                if (bx - ax) * (py - ay) - (by - ay) * (px - ax) <= 0.0:
                    inside = False
                    break
            if inside:
                cnt += 1
        worst = max(worst, cnt)
    return worst


def validate_heightfield_mesh(mesh: ProxyMesh) -> ProxyMesh:
    """Check that ``mesh`` has one z per (x, y); fixes a globally clockwise winding.

    Raises :class:`MeshError` for folded, vertical or overlapping sheets.
    """
    v, f = mesh.vertices, mesh.faces
    e1 = v[f[:, 1], :2] - v[f[:, 0], :2]
    e2 = v[f[:, 2], :2] - v[f[:, 0], :2]
    area = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    scale = np.abs(area).max() if len(area) else 0.0
    if scale == 0.0:
        raise MeshError("mesh has no extent in the xy plane")
    if np.any(np.abs(area) <= 1e-12 * scale):
        raise MeshError("mesh has vertical (zero projected area) faces; not a height field")
    if np.all(area < 0):
        f = f[:, [0, 2, 1]]
    elif np.any(area < 0):
        raise MeshError("mesh folds over itself in z; not a height field")
    if _max_cover(v, f) > 1:
        raise MeshError("mesh overlaps itself vertically; not a height field")
    out = ProxyMesh(v, f)
    return vertex_normals(out)


def save_obj(path, mesh: ProxyMesh) -> None:
    """ASCII Wavefront OBJ with positions and per-vertex normals."""
    if mesh.vertex_normals is None:
        vertex_normals(mesh)
    with open(path, "w") as fh:
        fh.write(f"# height-field proxy mesh: {len(mesh.vertices)} vertices, {len(mesh.faces)} faces\n")
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for x, y, z in mesh.vertex_normals:
            fh.write(f"vn {x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in mesh.faces + 1:
            fh.write(f"f {a}//{a} {b}//{b} {c}//{c}\n")


def load_obj(path) -> ProxyMesh:
    """Read vertices and triangular faces from an OBJ file; normals are recomputed."""
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                if len(idx) < 3:
                    raise MeshError(f"{path}:{lineno}: face with fewer than 3 vertices")
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if not faces:
        raise MeshError(f"{path}: no faces")
    return vertex_normals(ProxyMesh(np.array(verts), np.array(faces)))
