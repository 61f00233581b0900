"""Vector, camera and refraction math.

Camera convention: right-handed camera frame, +z looks into the scene,
+x to the right and +y down in the image. Pixel ``(i, j)`` covers
``[i, i+1) x [j, j+1)`` so its center sits at ``(i + 0.5, j + 0.5)``.
Extrinsics map world to camera: ``x_cam = R @ x_world + t``.

All functions accept single vectors of shape ``(3,)`` or batches of shape
``(..., 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class TotalInternalReflection(ArithmeticError):
    """Raised by :func:`refract` when Snell's law has no real solution."""


@dataclass(frozen=True)
class RefractionConfig:
    n1: float = 1.0
    n2: float = 1.333

    def __post_init__(self):
        if not (self.n1 > 0 and self.n2 > 0):
            raise ValueError(f"refractive indices must be positive, got n1={self.n1}, n2={self.n2}")

    @property
    def eta(self) -> float:
        return self.n1 / self.n2


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError(f"rotation is not orthonormal (max deviation {err:.3g})")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @classmethod
    def look_at(cls, eye, target, up, fov_y_deg: float, width: int, height: int) -> "Camera":
        """Pinhole camera at ``eye`` looking at ``target`` with a vertical field of view."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = normalize(np.asarray(target, dtype=np.float64) - eye)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-12:
            raise ValueError("up vector is parallel to the viewing direction")
        right = normalize(right)
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])
        f = 0.5 * height / np.tan(0.5 * np.radians(fov_y_deg))
        return cls(f, f, 0.5 * width, 0.5 * height, rot, -rot @ eye, width, height)

    def to_dict(self) -> dict:
        return {
            "fx": float(self.fx), "fy": float(self.fy),
            "cx": float(self.cx), "cy": float(self.cy),
            "rotation": [float(v) for v in self.rotation.ravel()],
            "translation": [float(v) for v in self.translation],
            "width": int(self.width), "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["rotation"], d["translation"],
                   int(d["width"]), int(d["height"]))


def normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def pixel_ray(camera: Camera, px, py) -> tuple[np.ndarray, np.ndarray]:
    """World-space ray through pixel coordinate ``(px, py)``.

    Returns ``(origin, direction)``; the direction is unit length. ``px`` and
    ``py`` may be arrays of the same shape, giving batched output.
    """
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    d_cam = np.stack([(px + 0.5 - camera.cx) / camera.fx,
                      (py + 0.5 - camera.cy) / camera.fy,
                      np.ones_like(px)], axis=-1)
    d = normalize(d_cam @ camera.rotation)  # R^T d_cam, batched
    o = np.broadcast_to(camera.center, d.shape).copy()
    return o, d


def image_rays(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Rays for every pixel, row-major, shapes ``(H*W, 3)``."""
    jj, ii = np.mgrid[0:camera.height, 0:camera.width]
    return pixel_ray(camera, ii.ravel(), jj.ravel())


def project(camera: Camera, points: np.ndarray) -> np.ndarray:
    """Pixel coordinates ``(px, py)`` of world points; inverse of :func:`pixel_ray`."""
    x = np.asarray(points, dtype=np.float64) @ camera.rotation.T + camera.translation
    px = camera.fx * x[..., 0] / x[..., 2] + camera.cx - 0.5
    py = camera.fy * x[..., 1] / x[..., 2] + camera.cy - 0.5
    return np.stack([px, py], axis=-1)


def _orient(incident, normal, eta):
    # flip normals facing along the ray; the ray then travels from the n2 side
    eta = np.broadcast_to(np.asarray(eta, dtype=np.float64), incident.shape[:-1])
    flip = np.einsum("...i,...i->...", normal, incident) > 0
    sign = np.where(flip, -1.0, 1.0)
    n = normal * sign[..., None]
    eta = np.where(flip, 1.0 / eta, eta)
    return n, eta, sign


def refract_batch(incident, normal, eta):
    """Vectorised Snell refraction.

    Returns ``(T, ok)`` where ``ok`` is False for total internal reflection;
    rows with ``ok == False`` hold zeros.
    """
    incident = np.asarray(incident, dtype=np.float64)
    normal = np.asarray(normal, dtype=np.float64)
    n, eta, _ = _orient(incident, normal, eta)
    c1 = -np.einsum("...i,...i->...", n, incident)
    k = 1.0 - eta**2 * (1.0 - c1**2)
    ok = k >= 0
    c2 = np.sqrt(np.where(ok, k, 0.0))
    u = eta[..., None] * incident + (eta * c1 - c2)[..., None] * n
    t = u / np.linalg.norm(u, axis=-1, keepdims=True)
    t = np.where(ok[..., None], t, 0.0)
    return t, ok


def refract(incident, normal, eta) -> np.ndarray:
    """Refracted unit direction for a single incident direction.

    Normals pointing along the ray are flipped and ``eta`` inverted, so the
    caller may pass either orientation. Raises :class:`TotalInternalReflection`.
    """
    t, ok = refract_batch(incident, normal, eta)
    if not np.all(ok):
        raise TotalInternalReflection("no refracted ray: total internal reflection")
    return t


def refract_backward(incident, normal, eta, dL_dT):
    """Vector-Jacobian products of :func:`refract`.

    Differentiates ``T = u / |u|`` with ``u = eta*I + (eta*c1 - c2)*N``,
    ``c1 = -N.I`` and ``c2 = sqrt(1 - eta^2 (1 - c1^2))``. Inputs are not
    renormalised, so the result matches finite differences taken off the
    unit sphere. Returns ``(dL_dI, dL_dN)``; TIR rows get zeros.
    """
    incident = np.asarray(incident, dtype=np.float64)
    normal = np.asarray(normal, dtype=np.float64)
    g = np.asarray(dL_dT, dtype=np.float64)
    n, eta, sign = _orient(incident, normal, eta)
    c1 = -np.einsum("...i,...i->...", n, incident)
    k = 1.0 - eta**2 * (1.0 - c1**2)
    ok = k > 0
    c2 = np.sqrt(np.where(ok, k, 1.0))
    a = eta * c1 - c2
    u = eta[..., None] * incident + a[..., None] * n
    un = np.linalg.norm(u, axis=-1, keepdims=True)
    t = u / un
    gu = (g - t * np.einsum("...i,...i->...", t, g)[..., None]) / un
    da_dc1 = eta - eta**2 * c1 / c2
    n_gu = np.einsum("...i,...i->...", n, gu)
    gi = eta[..., None] * gu - (da_dc1 * n_gu)[..., None] * n
    gn = a[..., None] * gu - (da_dc1 * n_gu)[..., None] * incident
    gn = gn * sign[..., None]
    gi = np.where(ok[..., None], gi, 0.0)
    gn = np.where(ok[..., None], gn, 0.0)
    return gi, gn
