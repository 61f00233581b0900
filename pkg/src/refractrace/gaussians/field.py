"""Gaussian primitives, their parameterisation and checkpoint formats."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..heightfield import CheckpointError, CorruptPayloadError, VersionMismatchError
from ..surface.bvh import Bvh, build_bvh_from_boxes

K_SIGMA = 3.0
GAUSSIAN_FORMAT_VERSION = 1
_MAGIC = b"RGSF"


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from quaternions ``(w, x, y, z)``; normalises first."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def rotmat_backward(q: np.ndarray, gR: np.ndarray) -> np.ndarray:
    """VJP of :func:`quat_to_rotmat` including the normalisation."""
    q = np.asarray(q, dtype=np.float64)
    qn = np.linalg.norm(q, axis=-1, keepdims=True)
    u = q / qn
    w, x, y, z = u[..., 0], u[..., 1], u[..., 2], u[..., 3]
    G = gR
    gw = 2 * (-z * G[..., 0, 1] + y * G[..., 0, 2] + z * G[..., 1, 0] - x * G[..., 1, 2]
              - y * G[..., 2, 0] + x * G[..., 2, 1])
    gx = (2 * (y * G[..., 0, 1] + z * G[..., 0, 2] + y * G[..., 1, 0] - w * G[..., 1, 2]
               + z * G[..., 2, 0] + w * G[..., 2, 1]) - 4 * x * (G[..., 1, 1] + G[..., 2, 2]))
    gy = (2 * (x * G[..., 0, 1] + w * G[..., 0, 2] + x * G[..., 1, 0] + z * G[..., 1, 2]
               - w * G[..., 2, 0] + z * G[..., 2, 1]) - 4 * y * (G[..., 0, 0] + G[..., 2, 2]))
    gz = (2 * (-w * G[..., 0, 1] + x * G[..., 0, 2] + w * G[..., 1, 0] + y * G[..., 1, 2]
               + x * G[..., 2, 0] + y * G[..., 2, 1]) - 4 * z * (G[..., 0, 0] + G[..., 1, 1]))
    gu = np.stack([gw, gx, gy, gz], axis=-1)
    return (gu - u * np.sum(u * gu, axis=-1, keepdims=True)) / qn


@dataclass
class Gaussian:
    """One primitive in natural parameters."""

    mu: np.ndarray
    quat: np.ndarray
    scale: np.ndarray
    opacity: float
    sh: np.ndarray  # (K, 3)

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_rotmat(self.quat)

    @property
    def frame(self) -> np.ndarray:
        """``S^-1 R^T``: world offsets to canonical coordinates."""
        return self.rotation.T / np.asarray(self.scale, dtype=np.float64)[:, None]


@dataclass
class GaussianField:
    """A set of Gaussians stored in optimisation parameters.

    Opacity is stored as a logit and scale as a log so both stay valid under
    unconstrained updates. ``normalized_response`` selects the maximum-response
    variant that divides by ``|d_g|^2``; the default evaluates
    ``o * exp(-|p_g x d_g|^2 / 2)`` with the unnormalised canonical direction.
    """

    mu: np.ndarray  # (N, 3)
    quat: np.ndarray  # (N, 4) w, x, y, z
    log_scale: np.ndarray  # (N, 3)
    opacity_logit: np.ndarray  # (N,)
    sh: np.ndarray  # (N, K, 3)
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    normalized_response: bool = False

    PARAM_NAMES = ("mu", "quat", "log_scale", "opacity_logit", "sh")

    def __post_init__(self):
        for name in self.PARAM_NAMES + ("background",):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))
        n = len(self.mu)
        k = self.sh.shape[1] if self.sh.ndim == 3 else -1
        if k not in (1, 4, 9, 16):
            raise ValueError(f"SH coefficient count {k} does not match a degree 0..3")
        shapes = {"mu": (n, 3), "quat": (n, 4), "log_scale": (n, 3), "opacity_logit": (n,), "sh": (n, k, 3)}
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    def __len__(self):
        return len(self.mu)

    @property
    def sh_degree(self) -> int:
        return int(np.sqrt(self.sh.shape[1])) - 1

    @property
    def opacity(self) -> np.ndarray:
        return sigmoid(self.opacity_logit)

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_rotmat(self.quat)

    def frames(self) -> np.ndarray:
        """``S^-1 R^T`` per Gaussian, shape ``(N, 3, 3)``."""
        return np.ascontiguousarray(np.swapaxes(self.rotation, -1, -2) / self.scale[:, :, None])

    def bounds(self, k_sigma: float = K_SIGMA):
        """Per-Gaussian boxes of ``k_sigma`` effective standard deviations.

        With the normalised response the footprint is the ellipsoid ``R S``.
        The unnormalised response satisfies ``|p_g x d_g| >= r / (s_mid s_max)``
        for a ray passing at distance ``r``, so a sphere of radius
        ``k_sigma * s_mid * s_max`` bounds it instead.
        """
        if self.normalized_response:
            rs = self.rotation * self.scale[:, None, :]
            half = k_sigma * np.sqrt((rs**2).sum(axis=2))
        else:
            s = np.sort(self.scale, axis=1)
            half = np.repeat(k_sigma * s[:, 1:2] * s[:, 2:3], 3, axis=1)
        return self.mu - half, self.mu + half

    def build_bvh(self, k_sigma: float = K_SIGMA, leaf_size: int = 4) -> Bvh:
        lo, hi = self.bounds(k_sigma)
        return build_bvh_from_boxes(lo, hi, leaf_size)

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(self.mu[i].copy(), self.quat[i].copy(), self.scale[i].copy(),
                        float(self.opacity[i]), self.sh[i].copy())

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.PARAM_NAMES}

    def copy(self) -> "GaussianField":
        return GaussianField(*(getattr(self, n).copy() for n in self.PARAM_NAMES),
                             background=self.background.copy(), normalized_response=self.normalized_response)

    @classmethod
    def from_gaussians(cls, gaussians, background=(0.0, 0.0, 0.0), normalized_response=False):
        gs = list(gaussians)
        return cls(np.array([g.mu for g in gs]), np.array([g.quat for g in gs]),
                   np.log(np.array([g.scale for g in gs])), logit(np.array([g.opacity for g in gs])),
                   np.array([g.sh for g in gs]), np.asarray(background, dtype=np.float64), normalized_response)

    @classmethod
    def empty(cls, sh_degree: int = 1, background=(0.0, 0.0, 0.0)):
        k = (sh_degree + 1) ** 2
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, k, 3)),
                   np.asarray(background, dtype=np.float64))


def random_init(n: int, aabb, seed: int, sh_degree: int = 1, scale: float | None = None,
                opacity: float = 0.1, background=(0.0, 0.0, 0.0), normalized_response: bool = False) -> GaussianField:
    """Uniformly placed isotropic Gaussians with grey colour inside ``aabb = (lo, hi)``.

    The default scale lets the footprints roughly tile the box's two largest
    extents: ``sqrt(area / n)``, or its square root for the unnormalised
    response whose effective width is ``scale ** 2``.
    """
    lo, hi = (np.asarray(a, dtype=np.float64) for a in aabb)
    rng = np.random.default_rng(seed)
    mu = lo + rng.random((n, 3)) * (hi - lo)
    if scale is None:
        ext = hi - lo
        area = np.sort(ext)[1:].prod()
        scale = float(np.sqrt(area / n))
        if not normalized_response:
            # the unnormalised response has an effective width of scale**2
            scale = float(np.sqrt(scale))
    k = (sh_degree + 1) ** 2
    sh = np.zeros((n, k, 3))
    quat = np.zeros((n, 4))
    quat[:, 0] = 1.0
    return GaussianField(mu, quat, np.full((n, 3), np.log(scale)), np.full(n, logit(opacity)), sh,
                         np.asarray(background, dtype=np.float64), normalized_response)


# ---------------------------------------------------------------- I/O

def _record_dtype(k: int) -> np.dtype:
    return np.dtype([("mu", "<f8", 3), ("quat", "<f8", 4), ("log_scale", "<f8", 3),
                     ("opacity_logit", "<f8"), ("sh", "<f8", (k, 3))])


def save_gaussians(path, gf: GaussianField) -> None:
    """Binary dump: a 44-byte header then one packed little-endian record per Gaussian.

    Header: magic ``RGSF``, u32 version, u32 count, u32 SH degree, u32 flags
    (bit 0: normalised response), then the background colour as 3 x f64.
    Records hold ``mu, quat, log_scale, opacity_logit, sh`` as f64.
    """
    k = gf.sh.shape[1]
    rec = np.empty(len(gf), dtype=_record_dtype(k))
    for name in GaussianField.PARAM_NAMES:
        rec[name] = getattr(gf, name)
    flags = 1 if gf.normalized_response else 0
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<IIII", GAUSSIAN_FORMAT_VERSION, len(gf), gf.sh_degree, flags))
        fh.write(np.asarray(gf.background, dtype="<f8").tobytes())
        fh.write(rec.tobytes())


def load_gaussians(path) -> GaussianField:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 20 or data[:4] != _MAGIC:
        raise CorruptPayloadError(f"{path}: not a Gaussian checkpoint (bad header)")
    version, count, degree, flags = struct.unpack("<IIII", data[4:20])
    if version != GAUSSIAN_FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: Gaussian checkpoint version {version} is not supported (expected {GAUSSIAN_FORMAT_VERSION})")
    if degree > 3:
        raise CorruptPayloadError(f"{path}: invalid SH degree {degree}")
    k = (degree + 1) ** 2
    dt = _record_dtype(k)
    need = 20 + 24 + count * dt.itemsize
    if len(data) != need:
        raise CorruptPayloadError(f"{path}: expected {need} bytes for {count} Gaussians, found {len(data)}")
    bg = np.frombuffer(data[20:44], dtype="<f8").copy()
    rec = np.frombuffer(data[44:], dtype=dt)
    return GaussianField(*(rec[name].copy() for name in GaussianField.PARAM_NAMES), background=bg,
                         normalized_response=bool(flags & 1))


def export_point_cloud(path, gf: GaussianField) -> None:
    """ASCII PLY with positions and 8-bit base colours for external viewers."""
    from .kernels import SH_C0

    rgb = np.clip(SH_C0 * gf.sh[:, 0, :] + 0.5, 0.0, 1.0)
    rgb8 = np.round(rgb * 255).astype(int)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(gf)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n")
        for (x, y, z), (r, g, b) in zip(gf.mu, rgb8):
            fh.write(f"{x:.9g} {y:.9g} {z:.9g} {r} {g} {b}\n")


__all__ = ["CheckpointError", "Gaussian", "GaussianField", "K_SIGMA", "export_point_cloud", "load_gaussians",
           "logit", "quat_to_rotmat", "random_init", "rotmat_backward", "save_gaussians", "sigmoid"]
