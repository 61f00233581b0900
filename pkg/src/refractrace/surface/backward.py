"""Gradients of surface hits with respect to vertex heights.

Vertices keep their (x, y) and only z moves, so the barycentric weights of a
hit depend on the heights solely through the depth ``t``: they are the 2D
barycentrics of ``o_xy + t d_xy``. Implicit differentiation of
``o_z + t d_z = sum_m w_m(t) z_m`` gives ``dt/dz_m = w_m / (d_z - sum_m z_m dw_m/dt)``.
"""

from __future__ import annotations

import numpy as np

from .mesh import ProxyMesh


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _normalize_backward(v, g):
    """VJP of ``v / |v|``."""
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    u = v / n
    return (g - u * _dot(u, g)[..., None]) / n


def _cross_backward_z(e1, e2, gc):
    """z-components of the VJP of ``c = e1 x e2`` wrt ``e1`` and ``e2``."""
    ge1 = np.cross(e2, gc)
    ge2 = np.cross(gc, e1)
    return ge1[..., 2], ge2[..., 2]


def surface_backward(hits, mesh: ProxyMesh, dL_dp, dL_dN, normal_mode: str = "phong") -> np.ndarray:
    """Per-vertex ``dL/dz`` from per-ray gradients at the hit point and shading normal.

    ``hits`` is a :class:`SurfaceHits` whose faces index ``mesh``. Rays without
    a hit contribute nothing. Returns an array of shape ``(len(mesh.vertices),)``.
    """
    grad = np.zeros(len(mesh.vertices))
    rows = np.flatnonzero(hits.hit)
    if rows.size == 0:
        return grad
    gp = np.asarray(dL_dp, dtype=np.float64)[rows]
    gN = np.asarray(dL_dN, dtype=np.float64)[rows]
    d = hits.direction[rows]
    w = hits.bary[rows]
    tri = mesh.faces[hits.face[rows]]  # (R, 3)
    v = mesh.vertices[tri]  # (R, 3, 3)

    # barycentric gradient in the xy plane, per vertex
    e1 = v[:, 1, :2] - v[:, 0, :2]
    e2 = v[:, 2, :2] - v[:, 0, :2]
    area2 = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    gw1 = np.stack([e2[:, 1], -e2[:, 0]], axis=1) / area2[:, None]
    gw2 = np.stack([-e1[:, 1], e1[:, 0]], axis=1) / area2[:, None]
    dw_dt = np.stack([-(gw1 + gw2), gw1, gw2], axis=1) @ d[:, :2, None]  # (R, 3, 1)
    dw_dt = dw_dt[..., 0]
    denom = d[:, 2] - (dw_dt * v[:, :, 2]).sum(axis=1)

    gt = _dot(gp, d)
    if normal_mode == "phong":
        vn = mesh.vertex_normals[tri]  # (R, 3, 3)
        m = np.einsum("rk,rki->ri", w, vn)
        gm = _normalize_backward(m, gN)
        gw = np.einsum("ri,rki->rk", gm, vn)
        gt = gt + (gw * dw_dt).sum(axis=1)
        g_vn = np.zeros_like(mesh.vertices)
        np.add.at(g_vn, tri.ravel(), (w[:, :, None] * gm[:, None, :]).reshape(-1, 3))
        grad += _vertex_normal_backward(mesh, g_vn)
    elif normal_mode == "face":
        E1 = v[:, 1] - v[:, 0]
        E2 = v[:, 2] - v[:, 0]
        gc = _normalize_backward(np.cross(E1, E2), gN)
        g1, g2 = _cross_backward_z(E1, E2, gc)
        np.add.at(grad, tri[:, 1], g1)
        np.add.at(grad, tri[:, 2], g2)
        np.add.at(grad, tri[:, 0], -(g1 + g2))
    else:
        raise ValueError(f"unknown normal mode {normal_mode!r}")

    np.add.at(grad, tri.ravel(), (gt[:, None] * w / denom[:, None]).ravel())
    return grad


def _vertex_normal_backward(mesh: ProxyMesh, g_vn: np.ndarray) -> np.ndarray:
    """Chain per-vertex normal gradients through face averaging down to heights."""
    grad = np.zeros(len(mesh.vertices))
    active = np.any(g_vn != 0.0, axis=1)
    if not active.any():
        return grad
    f = mesh.faces
    touched = active[f].any(axis=1)
    f = f[touched]
    v = mesh.vertices
    count = np.zeros(len(v))
    np.add.at(count, mesh.faces.ravel(), 1.0)
    E1 = v[f[:, 1]] - v[f[:, 0]]
    E2 = v[f[:, 2]] - v[f[:, 0]]
    c = np.cross(E1, E2)
    fn = c / np.linalg.norm(c, axis=1, keepdims=True)
    # rebuild the unnormalised mean for active vertices
    acc = np.zeros_like(v)
    for k in range(3):
        np.add.at(acc, f[:, k], fn)
    idx = np.flatnonzero(active)
    mean = acc[idx] / count[idx, None]
    g_mean = np.zeros_like(v)
    g_mean[idx] = _normalize_backward(mean, g_vn[idx]) / count[idx, None]
    g_fn = g_mean[f].sum(axis=1)
    gc = _normalize_backward(c, g_fn)
    g1, g2 = _cross_backward_z(E1, E2, gc)
    np.add.at(grad, f[:, 1], g1)
    np.add.at(grad, f[:, 2], g2)
    np.add.at(grad, f[:, 0], -(g1 + g2))
    return grad
