"""Refraction-aware rendering and the reverse pass through surface, refraction and Gaussians.

A pixel's primary ray hits the water surface, bends by Snell's law and the
refracted ray is composited through the Gaussian field. Without a surface
(dewatered mode) primary rays go straight into the field.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import Camera, RefractionConfig, image_rays, refract_backward, refract_batch
from .gaussians import GaussianField, prepare, render_rays, render_rays_backward
from .gaussians.render import PreparedField
from .heightfield import HeightFieldNet, height, height_backward
from .surface import (ProxyMesh, TraceResult, build_bvh, dense_trace, recursive_subdivision_trace, surface_backward,
                      trace_mesh)
from .surface.mesh import _query

TRACE_METHODS = ("recursive", "dense", "mesh")


class RenderError(ValueError):
    """Invalid render job."""


@dataclass
class SurfaceHandle:
    """How to intersect the water surface.

    ``field`` is a :class:`HeightFieldNet` or an analytic height function
    with a ``domain`` attribute. ``method`` selects recursive subdivision on
    an ``nx`` x ``ny`` coarse grid with ``levels`` refinements, a full dense
    ``nx`` x ``ny`` proxy, or a fixed ``mesh``.
    """

    field: object = None
    nx: int = 200
    ny: int = 200
    levels: int = 2
    method: str = "recursive"
    normal_mode: str = "phong"
    mesh: ProxyMesh | None = None

    def __post_init__(self):
        if self.method not in TRACE_METHODS:
            raise RenderError(f"unknown trace method {self.method!r}; expected one of {TRACE_METHODS}")
        if self.method == "mesh" and self.mesh is None:
            raise RenderError("trace method 'mesh' needs a mesh")
        if self.method != "mesh" and self.field is None:
            raise RenderError(f"trace method {self.method!r} needs a height field")

    def trace(self, origins, directions) -> TraceResult:
        if self.method == "recursive":
            return recursive_subdivision_trace(self.field, origins, directions, self.nx, self.ny, self.levels,
                                               self.normal_mode)
        if self.method == "dense":
            return dense_trace(self.field, origins, directions, self.nx, self.ny, self.normal_mode)
        hits = trace_mesh(self.mesh, build_bvh(self.mesh), origins, directions, self.normal_mode)
        return TraceResult(hits, self.mesh, 0, self.normal_mode)

    def height_at(self, xy) -> np.ndarray:
        if self.method == "mesh":
            from .surface import intersect_mesh_brute

            xy = np.atleast_2d(xy)
            o = np.column_stack([xy, np.full(len(xy), self.mesh.vertices[:, 2].max() + 1.0)])
            t, _, _ = intersect_mesh_brute(self.mesh, o, np.tile([0.0, 0.0, -1.0], (len(xy), 1)))
            return np.where(np.isfinite(t), o[:, 2] - t, -np.inf)
        return _query(self.field, np.atleast_2d(xy))


@dataclass
class RenderJob:
    camera: Camera
    field: GaussianField
    surface: SurfaceHandle | None = None
    refraction: RefractionConfig = field(default_factory=RefractionConfig)
    pixels: np.ndarray | None = None  # flat row-major pixel indices; None renders the full frame
    train: bool = False

    def validate(self):
        if self.train and self.surface is None:
            raise RenderError("training renders need a water surface")
        if self.train and not isinstance(self.surface.field, HeightFieldNet):
            raise RenderError("training renders need a neural height field surface")
        if self.surface is not None:
            c = self.camera.center
            z = float(self.surface.height_at(c[None, :2])[0])
            if c[2] <= z:
                raise RenderError(f"camera center z={c[2]:.4g} is not above the water surface (z={z:.4g})")
        if self.pixels is not None:
            p = np.asarray(self.pixels)
            if p.size and (p.min() < 0 or p.max() >= self.camera.width * self.camera.height):
                raise RenderError("pixel index out of range")

    def rays(self):
        o, d = image_rays(self.camera)
        if self.pixels is not None:
            idx = np.asarray(self.pixels, dtype=np.int64)
            o, d = o[idx], d[idx]
        return o, d


@dataclass
class RenderOutput:
    color: np.ndarray  # (R, 3) linear RGB, one row per rendered pixel
    mask: np.ndarray  # (R,) refracted ray found (always True when dewatered)
    depth: np.ndarray | None  # (R,) primary ray distance to the surface, inf on a miss
    shape: tuple
    origins: np.ndarray
    directions: np.ndarray
    trace: TraceResult | None = None
    ray_origin: np.ndarray | None = None  # refracted (or primary) rays traced into the field
    ray_direction: np.ndarray | None = None
    normals: np.ndarray | None = None
    prepared: PreparedField | None = None

    @property
    def image(self) -> np.ndarray:
        """Color as an ``(H, W, 3)`` array for full-frame renders."""
        return self.color.reshape(self.shape)


def render_forward(job: RenderJob, prepared: PreparedField | None = None) -> RenderOutput:
    job.validate()
    O, D = job.rays()
    gf = job.field
    prep = prepared if prepared is not None or len(gf) == 0 else prepare(gf)
    shape = (job.camera.height, job.camera.width, 3) if job.pixels is None else (len(O), 3)
    if job.surface is None or job.refraction.n1 == job.refraction.n2:
        # matched media: the interface bends nothing, so trace the primary rays unchanged
        color, _, _ = render_rays(gf, O, D, prep)
        return RenderOutput(color, np.ones(len(O), bool), None, shape, O, D, None, O, D, None, prep)

    tr = job.surface.trace(O, D)
    hits = tr.hits
    T, ok = refract_batch(D, np.where(hits.hit[:, None], hits.normal, (0.0, 0.0, 1.0)), job.refraction.eta)
    valid = hits.hit & ok
    color = np.tile(gf.background, (len(O), 1))
    P = hits.point
    if valid.any():
        color[valid], _, _ = render_rays(gf, P[valid], T[valid], prep)
    return RenderOutput(color, valid, hits.t.copy(), shape, O, D, tr, P, T, hits.normal, prep)


@dataclass
class RenderGradients:
    gaussians: dict
    heightfield: list | None  # per-parameter arrays in ``HeightFieldNet.params()`` order
    vertex_heights: np.ndarray | None = None  # dL/dz per vertex of the traced mesh


def render_backward(job: RenderJob, out: RenderOutput, dL_dcolor) -> RenderGradients:
    """Gradients of ``sum(dL_dcolor * out.color)`` wrt Gaussian and height-field parameters.

    ``dL_dcolor`` has the shape of ``out.color`` or ``out.image``. Network
    gradients are only computed for jobs in train mode.
    """
    g = np.asarray(dL_dcolor, dtype=np.float64).reshape(-1, 3)
    gf = job.field
    if out.trace is None:
        grads, _, _ = render_rays_backward(gf, out.origins, out.directions, out.color, g, out.prepared)
        net_grads = None
        if job.train:
            net_grads = [np.zeros_like(p) for p in job.surface.field.params()]
        return RenderGradients(grads, net_grads)

    valid = out.mask
    hits = out.trace.hits
    g_p = np.zeros((len(g), 3))
    g_T = np.zeros((len(g), 3))
    if valid.any():
        grads, g_p[valid], g_T[valid] = render_rays_backward(gf, out.ray_origin[valid], out.ray_direction[valid],
                                                             out.color[valid], g[valid], out.prepared)
    else:
        grads = {name: np.zeros_like(v) for name, v in gf.params().items()}
    if not job.train and job.surface.method != "mesh":
        return RenderGradients(grads, None)
    _, g_N = refract_backward(out.directions, np.where(hits.hit[:, None], hits.normal, (0.0, 0.0, 1.0)),
                              job.refraction.eta, g_T)
    g_N[~valid] = 0.0
    mesh = out.trace.mesh
    g_z = surface_backward(hits, mesh, g_p, g_N, out.trace.normal_mode)
    net_grads = None
    if job.train and job.surface.method != "mesh":
        net = job.surface.field
        _, tape = height(net, mesh.vertices[:, :2])
        net_grads, _ = height_backward(net, tape, g_z)
    return RenderGradients(grads, net_grads, g_z)
