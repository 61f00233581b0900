"""Image metrics and the surface distance error."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ..losses import psnr, ssim
from .synthetic import FlatSurface, MeshSurface, SineSurface

NEWTON_STEPS = 50


@dataclass
class RmseResult:
    rmse: float
    hits: int
    excluded: int  # rays that missed the trained surface


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    rmse: float | None = None
    per_view: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        keys = ["view", "psnr", "ssim"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys)
            for row in self.per_view:
                w.writerow([row.get(k) for k in keys])
            w.writerow(["mean", self.psnr, self.ssim])
            if self.rmse is not None:
                w.writerow(["surface_rmse", self.rmse, ""])


def project_to_surface(surface, points) -> np.ndarray:
    """Closest point on an analytic height field ``z = h(x, y)`` to each point.

    Newton iterations on ``|(u, h(u)) - p|^2 / 2`` start from the vertical
    foot point; when the Hessian is not positive definite the curvature term
    is dropped (Gauss-Newton).
    """
    p = np.asarray(points, dtype=np.float64)
    u = p[:, :2].copy()
    for _ in range(NEWTON_STEPS):
        r = surface(u) - p[:, 2]
        g = surface.gradient(u)
        grad = (u - p[:, :2]) + r[:, None] * g
        H = np.eye(2) + g[:, :, None] * g[:, None, :] + r[:, None, None] * surface.hessian(u)
        det = H[:, 0, 0] * H[:, 1, 1] - H[:, 0, 1] * H[:, 1, 0]
        bad = (det <= 1e-12) | (H[:, 0, 0] <= 0)
        H[bad] = np.eye(2) + g[bad, :, None] * g[bad, None, :]
        step = np.linalg.solve(H, grad[..., None])[..., 0]
        u -= step
        if np.abs(step).max() < 1e-15:
            break
    return np.column_stack([u, surface(u)])


def _point_triangle_distance(p, a, b, c):
    """Euclidean distance from points to triangles (all arrays ``(n, 3)``), by Voronoi regions."""
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = (ab * ap).sum(-1), (ac * ap).sum(-1)
    bp = p - b
    d3, d4 = (ab * bp).sum(-1), (ac * bp).sum(-1)
    cp = p - c
    d5, d6 = (ab * cp).sum(-1), (ac * cp).sum(-1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = va + vb + vc
    with np.errstate(divide="ignore", invalid="ignore"):
        v = vb / denom
        w = vc / denom
        q = a + v[:, None] * ab + w[:, None] * ac
        # edges
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
    cases = [
        ((d1 <= 0) & (d2 <= 0), a),
        ((d3 >= 0) & (d4 <= d3), b),
        ((d6 >= 0) & (d5 <= d6), c),
        ((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + t_ab[:, None] * ab),
        ((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + t_ac[:, None] * ac),
        ((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + t_bc[:, None] * (c - b)),
    ]
    done = np.zeros(len(p), bool)
    for mask, point in cases:
        m = mask & ~done
        q[m] = point[m]
        done |= m
    return np.sqrt(((p - q) ** 2).sum(-1))


def distance_to_surface(gt, points, root=None, k_nearest: int = 24) -> np.ndarray:
    """Minimum distance from each point to a ground-truth surface description."""
    points = np.asarray(points, dtype=np.float64)
    if isinstance(gt, FlatSurface):
        return np.abs(points[:, 2] - gt.level)
    if isinstance(gt, SineSurface):
        return np.sqrt(((project_to_surface(gt, points) - points) ** 2).sum(-1))
    if isinstance(gt, MeshSurface):
        mesh = gt.load(root)
        tri = mesh.vertices[mesh.faces]
        tree = cKDTree(tri.mean(axis=1))
        k = min(k_nearest, len(tri))
        _, idx = tree.query(points, k=k)
        idx = idx.reshape(len(points), k)
        best = np.full(len(points), np.inf)
        for j in range(k):
            t = tri[idx[:, j]]
            best = np.minimum(best, _point_triangle_distance(points, t[:, 0], t[:, 1], t[:, 2]))
        return best
    raise TypeError(f"unsupported ground-truth surface {type(gt).__name__}")


def surface_rmse(field, gt, origins, directions, nx: int = 200, ny: int = 200, root=None) -> RmseResult:
    """RMSE of the distance from trained-surface ray hits to the ground truth.

    The trained surface ``field`` (network or analytic height function with a
    ``domain``) is intersected through a dense ``nx`` x ``ny`` proxy mesh
    without refinement; rays that miss it are excluded and counted.
    """
    from ..surface import dense_trace

    hits = dense_trace(field, origins, directions, nx, ny, "face").hits
    pts = hits.point[hits.hit]
    n_miss = int((~hits.hit).sum())
    if len(pts) == 0:
        return RmseResult(float("nan"), 0, n_miss)
    d = distance_to_surface(gt, pts, root)
    return RmseResult(float(np.sqrt(np.mean(d**2))), len(pts), n_miss)


__all__ = ["MetricReport", "RmseResult", "distance_to_surface", "project_to_surface", "psnr", "ssim",
           "surface_rmse"]
