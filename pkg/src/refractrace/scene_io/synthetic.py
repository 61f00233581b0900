"""Analytic water surfaces, ground patterns and a reference ray tracer for ground-truth images.

The reference tracer is deliberately independent of the differentiable
renderer: it builds its own pixel rays, intersects the analytic surface by
marching plus bisection, bends rays with an angle-based form of Snell's law
and looks the texture up directly on the ground plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BISECTION_STEPS = 128


class SurfaceSpecError(ValueError):
    pass


# ---------------------------------------------------------------- surfaces

@dataclass(frozen=True)
class FlatSurface:
    level: float
    domain: tuple = (-2.0, 2.0, -2.0, 2.0)

    def __call__(self, xy):
        xy = np.asarray(xy, dtype=np.float64)
        return np.full(xy.shape[:-1], float(self.level))

    def gradient(self, xy):
        xy = np.asarray(xy, dtype=np.float64)
        return np.zeros(xy.shape)

    def hessian(self, xy):
        xy = np.asarray(xy, dtype=np.float64)
        return np.zeros(xy.shape[:-1] + (2, 2))

    @property
    def top(self):
        return float(self.level)

    @property
    def bottom(self):
        return float(self.level)

    def to_dict(self):
        return {"type": "flat", "level": float(self.level)}


@dataclass(frozen=True)
class SineSurface:
    """``z = level + amplitude * sin(2 pi (frequency . xy) + phase)``."""

    level: float
    amplitude: float
    frequency: tuple
    phase: float = 0.0
    domain: tuple = (-2.0, 2.0, -2.0, 2.0)

    def _arg(self, xy):
        f = np.asarray(self.frequency, dtype=np.float64)
        return 2 * np.pi * (np.asarray(xy, dtype=np.float64) @ f) + self.phase

    def __call__(self, xy):
        return self.level + self.amplitude * np.sin(self._arg(xy))

    def gradient(self, xy):
        f = np.asarray(self.frequency, dtype=np.float64)
        return (self.amplitude * 2 * np.pi * np.cos(self._arg(xy)))[..., None] * f

    def hessian(self, xy):
        f = np.asarray(self.frequency, dtype=np.float64)
        k = -self.amplitude * (2 * np.pi) ** 2 * np.sin(self._arg(xy))
        return k[..., None, None] * np.outer(f, f)

    @property
    def wavelength(self):
        return 1.0 / float(np.linalg.norm(self.frequency))

    @property
    def top(self):
        return self.level + abs(self.amplitude)

    @property
    def bottom(self):
        return self.level - abs(self.amplitude)

    def to_dict(self):
        return {"type": "sine", "level": float(self.level), "amplitude": float(self.amplitude),
                "frequency": [float(v) for v in self.frequency], "phase": float(self.phase)}


@dataclass(frozen=True)
class MeshSurface:
    """A ground-truth surface given as an OBJ height-field mesh (used for metrics only)."""

    path: str

    def load(self, root=None):
        from ..surface import load_obj
        import os

        p = self.path if root is None or os.path.isabs(self.path) else os.path.join(root, self.path)
        return load_obj(p)

    def to_dict(self):
        return {"type": "mesh", "path": self.path}


def surface_from_dict(d: dict, domain=None):
    if not isinstance(d, dict) or "type" not in d:
        raise SurfaceSpecError("surface description needs a 'type' field")
    kind = d["type"]
    extra = {} if domain is None else {"domain": tuple(float(v) for v in domain)}
    try:
        if kind == "flat":
            return FlatSurface(float(d["level"]), **extra)
        if kind == "sine":
            freq = tuple(float(v) for v in d["frequency"])
            if len(freq) != 2:
                raise SurfaceSpecError("surface.frequency must have two components")
            return SineSurface(float(d["level"]), float(d["amplitude"]), freq, float(d.get("phase", 0.0)), **extra)
        if kind == "mesh":
            return MeshSurface(str(d["path"]))
    except KeyError as exc:
        raise SurfaceSpecError(f"surface description of type {kind!r} is missing field {exc.args[0]!r}") from None
    raise SurfaceSpecError(f"unknown surface type {kind!r}; expected flat, sine or mesh")


# ---------------------------------------------------------------- patterns

@dataclass(frozen=True)
class CheckerPattern:
    """Checkerboard on the plane ``z = ground``.

    ``softness`` > 0 replaces the hard square edges by a tanh ramp; ``extent``
    limits the pattern to a rectangle, outside which rays see the background.
    """

    ground: float = 0.0
    square: float = 0.25
    color_a: tuple = (0.9, 0.85, 0.8)
    color_b: tuple = (0.15, 0.25, 0.45)
    softness: float = 0.0
    extent: tuple | None = (-1.5, 1.5, -1.5, 1.5)

    def weight(self, xy):
        s = np.sin(np.pi * xy[..., 0] / self.square) * np.sin(np.pi * xy[..., 1] / self.square)
        if self.softness > 0:
            return 0.5 + 0.5 * np.tanh(s / self.softness)
        return (s > 0).astype(np.float64)

    def color(self, xy, background):
        xy = np.asarray(xy, dtype=np.float64)
        w = self.weight(xy)[..., None]
        c = w * np.asarray(self.color_a) + (1 - w) * np.asarray(self.color_b)
        if self.extent is not None:
            x0, x1, y0, y1 = self.extent
            inside = (xy[..., 0] >= x0) & (xy[..., 0] <= x1) & (xy[..., 1] >= y0) & (xy[..., 1] <= y1)
            c = np.where(inside[..., None], c, np.asarray(background, dtype=np.float64))
        return c

    def to_dict(self):
        return {"type": "checker", "ground": self.ground, "square": self.square, "color_a": list(self.color_a),
                "color_b": list(self.color_b), "softness": self.softness,
                "extent": None if self.extent is None else list(self.extent)}


@dataclass(frozen=True)
class ImagePattern:
    """An RGB texture (linear values) stretched over ``extent`` on the ground plane."""

    texture: np.ndarray
    extent: tuple = (-1.5, 1.5, -1.5, 1.5)
    ground: float = 0.0
    path: str | None = None

    def color(self, xy, background):
        tex = np.asarray(self.texture, dtype=np.float64)
        h, w = tex.shape[:2]
        x0, x1, y0, y1 = self.extent
        u = (xy[..., 0] - x0) / (x1 - x0) * w - 0.5
        v = (y1 - xy[..., 1]) / (y1 - y0) * h - 0.5  # image rows run along -y
        inside = (u >= -0.5) & (u <= w - 0.5) & (v >= -0.5) & (v <= h - 0.5)
        u = np.clip(u, 0, w - 1)
        v = np.clip(v, 0, h - 1)
        i0 = np.minimum(np.floor(u).astype(int), w - 2 if w > 1 else 0)
        j0 = np.minimum(np.floor(v).astype(int), h - 2 if h > 1 else 0)
        fu = (u - i0)[..., None]
        fv = (v - j0)[..., None]
        i1 = np.minimum(i0 + 1, w - 1)
        j1 = np.minimum(j0 + 1, h - 1)
        c = ((1 - fu) * (1 - fv) * tex[j0, i0] + fu * (1 - fv) * tex[j0, i1]
             + (1 - fu) * fv * tex[j1, i0] + fu * fv * tex[j1, i1])
        return np.where(inside[..., None], c, np.asarray(background, dtype=np.float64))

    def to_dict(self):
        return {"type": "image", "path": self.path, "extent": list(self.extent), "ground": self.ground}


def pattern_from_dict(d: dict, root=None):
    kind = d.get("type", "checker")
    if kind == "checker":
        ext = d.get("extent", (-1.5, 1.5, -1.5, 1.5))
        return CheckerPattern(float(d.get("ground", 0.0)), float(d.get("square", 0.25)),
                              tuple(d.get("color_a", (0.9, 0.85, 0.8))), tuple(d.get("color_b", (0.15, 0.25, 0.45))),
                              float(d.get("softness", 0.0)), None if ext is None else tuple(ext))
    if kind == "image":
        import os

        from .images import read_png

        path = d["path"]
        full = path if root is None or os.path.isabs(path) else os.path.join(root, path)
        return ImagePattern(read_png(full), tuple(d.get("extent", (-1.5, 1.5, -1.5, 1.5))),
                            float(d.get("ground", 0.0)), path)
    raise SurfaceSpecError(f"unknown pattern type {kind!r}; expected checker or image")


# ---------------------------------------------------------------- reference tracer

def camera_rays(camera, supersample: int = 1):
    """Per-pixel ray bundles: origins ``(3,)`` and directions ``(H, W, s*s, 3)``."""
    s = supersample
    offs = (np.arange(s) + 0.5) / s
    ou, ov = np.meshgrid(offs, offs)
    cols = np.arange(camera.width)[None, :, None] + ou.ravel()[None, None, :]
    rows = np.arange(camera.height)[:, None, None] + ov.ravel()[None, None, :]
    cols, rows = np.broadcast_arrays(cols, rows)
    local = np.stack([(cols - camera.cx) / camera.fx, (rows - camera.cy) / camera.fy, np.ones(cols.shape)], axis=-1)
    R = np.asarray(camera.rotation)
    world = np.einsum("ji,...j->...i", R, local)
    world /= np.sqrt((world**2).sum(axis=-1, keepdims=True))
    origin = -R.T @ np.asarray(camera.translation)
    return origin, world


def intersect_surface(surface, origin, directions):
    """Ray parameter where each ray first meets the surface from above; NaN when it never does.

    Flat surfaces are solved in closed form. Sine surfaces are marched
    through the slab between their lowest and highest point in steps of a
    sixteenth of a wavelength, then the bracketing interval is bisected.
    """
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(directions, dtype=np.float64)
    O = np.broadcast_to(o, d.shape)
    dz = d[..., 2]
    if isinstance(surface, FlatSurface):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (surface.level - O[..., 2]) / dz
        return np.where((t > 0) & np.isfinite(t), t, np.nan)

    def gap(t):
        p = O + t[..., None] * d
        return p[..., 2] - surface(p[..., :2])

    with np.errstate(divide="ignore", invalid="ignore"):
        t_top = np.where(dz < 0, (surface.top - O[..., 2]) / dz, np.nan)
        t_bot = np.where(dz < 0, (surface.bottom - O[..., 2]) / dz, np.nan)
    t_top = np.maximum(t_top, 0.0)
    step = surface.wavelength / 16.0
    n_steps = int(np.ceil(np.nanmax(t_bot - t_top) / step)) + 1 if np.any(np.isfinite(t_bot)) else 0
    lo = np.full(dz.shape, np.nan)
    hi = np.full(dz.shape, np.nan)
    prev = t_top.copy()
    g_prev = gap(np.nan_to_num(prev))
    found = np.zeros(dz.shape, bool)
    for k in range(1, n_steps + 1):
        cur = np.minimum(t_top + k * step, t_bot)
        g_cur = gap(np.nan_to_num(cur))
        new = ~found & np.isfinite(cur) & (g_prev > 0) & (g_cur <= 0)
        lo[new], hi[new] = prev[new], cur[new]
        found |= new
        prev, g_prev = cur, g_cur
        if found[np.isfinite(t_bot)].all():
            break
    a = np.where(found, lo, 0.0)
    b = np.where(found, hi, 0.0)
    for _ in range(BISECTION_STEPS):
        m = 0.5 * (a + b)
        above = gap(m) > 0
        a = np.where(above, m, a)
        b = np.where(above, b, m)
    return np.where(found, 0.5 * (a + b), np.nan)


def surface_normal(surface, xy):
    g = surface.gradient(xy)
    n = np.concatenate([-g, np.ones(g.shape[:-1] + (1,))], axis=-1)
    return n / np.sqrt((n**2).sum(axis=-1, keepdims=True))


def snell_angles(incident, normal, n1, n2):
    """Refracted directions built from incidence and refraction angles.

    ``normal`` faces the incoming ray's side. Returns NaN rows on total
    internal reflection.
    """
    cos_i = -(incident * normal).sum(axis=-1)
    theta_i = np.arccos(np.clip(cos_i, -1.0, 1.0))
    sin_t = n1 / n2 * np.sin(theta_i)
    tangent = incident + cos_i[..., None] * normal
    tn = np.sqrt((tangent**2).sum(axis=-1, keepdims=True))
    tangent = np.divide(tangent, tn, out=np.zeros_like(tangent), where=tn > 0)
    with np.errstate(invalid="ignore"):
        theta_t = np.arcsin(sin_t)
    out = np.sin(theta_t)[..., None] * tangent - np.cos(theta_t)[..., None] * normal
    return out


def reference_render(camera, pattern, background, surface=None, n1: float = 1.0, n2: float = 1.333,
                     supersample: int = 2) -> np.ndarray:
    """Ground-truth linear RGB image ``(H, W, 3)``; ``surface=None`` renders without water."""
    origin, d = camera_rays(camera, supersample)
    bg = np.asarray(background, dtype=np.float64)
    O = np.broadcast_to(origin, d.shape)
    if surface is None:
        start, direction = O, d
        ok = np.ones(d.shape[:-1], bool)
    else:
        t = intersect_surface(surface, origin, d)
        ok = np.isfinite(t)
        start = O + np.nan_to_num(t)[..., None] * d
        nrm = surface_normal(surface, start[..., :2])
        direction = snell_angles(d, nrm, n1, n2)
        ok &= np.isfinite(direction).all(axis=-1)
    dz = direction[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (pattern.ground - start[..., 2]) / dz
    ok &= np.isfinite(s) & (s > 0)
    ground = start + np.nan_to_num(s)[..., None] * direction
    col = pattern.color(ground[..., :2], bg)
    col = np.where(ok[..., None], col, bg)
    return col.mean(axis=2)


# ---------------------------------------------------------------- camera rig

def ring_cameras(count: int, polar_deg, radius: float, target=(0.0, 0.0, 0.0), fov_deg: float = 40.0,
                 width: int = 64, height: int = 64, azimuth_offset_deg: float = 0.0):
    """Cameras on rings around the vertical axis through ``target``, all looking at it.

    ``polar_deg`` is one angle or a list of ring angles measured from +z;
    cameras alternate between rings and are spread evenly in azimuth.
    """
    from ..geom import Camera

    rings = np.atleast_1d(np.asarray(polar_deg, dtype=np.float64))
    tgt = np.asarray(target, dtype=np.float64)
    cams = []
    for k in range(count):
        theta = np.radians(rings[k % len(rings)])
        phi = np.radians(azimuth_offset_deg) + 2 * np.pi * k / count
        eye = tgt + radius * np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
        cams.append(Camera.look_at(eye, tgt, (0.0, 0.0, 1.0), fov_deg, width, height))
    return cams
