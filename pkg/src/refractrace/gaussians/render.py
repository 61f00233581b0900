"""Batched ray rendering of a :class:`GaussianField` and its reverse pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .field import K_SIGMA, GaussianField, rotmat_backward


@dataclass
class PreparedField:
    """Derived per-Gaussian arrays and the BVH, valid for one parameter state."""

    frames: np.ndarray  # (N, 3, 3)
    opacity: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    bvh_arrays: tuple | None
    k_sigma: float


def prepare(gf: GaussianField, k_sigma: float = K_SIGMA) -> PreparedField:
    lo, hi = gf.bounds(k_sigma)
    bvh = gf.build_bvh(k_sigma).arrays() if len(gf) else None
    return PreparedField(gf.frames(), np.ascontiguousarray(gf.opacity), lo, hi, bvh, k_sigma)


def _args(gf, prep):
    return (prep.frames, gf.mu, prep.opacity, gf.sh, prep.lo, prep.hi, *prep.bvh_arrays)


def render_rays(gf: GaussianField, origins, directions, prep: PreparedField | None = None,
                alpha_min: float = kernels.ALPHA_MIN, t_min: float = kernels.T_MIN, t_eps: float = kernels.T_EPS):
    """Composite every ray front to back.

    Returns ``(color (R, 3), final transmittance (R,), samples used (R,))``.
    """
    O = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    D = np.ascontiguousarray(directions, dtype=np.float64).reshape(-1, 3)
    if len(gf) == 0 or len(O) == 0:
        return np.tile(gf.background, (len(O), 1)), np.ones(len(O)), np.zeros(len(O), dtype=np.int64)
    prep = prep or prepare(gf)
    return kernels.render_rays(O, D, *_args(gf, prep), gf.background, gf.normalized_response,
                               alpha_min, t_min, t_eps)


def frame_backward(gf: GaussianField, g_frames: np.ndarray):
    """Map gradients on ``S^-1 R^T`` to quaternion and log-scale gradients."""
    M = gf.frames()
    g_log_scale = -np.sum(g_frames * M, axis=2)
    g_R = np.swapaxes(g_frames, 1, 2) / gf.scale[:, None, :]
    return rotmat_backward(gf.quat, g_R), g_log_scale


def render_rays_backward(gf: GaussianField, origins, directions, color, g_color, prep: PreparedField | None = None,
                         alpha_min: float = kernels.ALPHA_MIN, t_min: float = kernels.T_MIN,
                         t_eps: float = kernels.T_EPS):
    """Gradients of ``sum(g_color * color)``.

    Returns ``(grads, g_origin, g_direction)`` where ``grads`` maps each
    parameter name of the field to an array of its shape.
    """
    O = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    D = np.ascontiguousarray(directions, dtype=np.float64).reshape(-1, 3)
    color = np.ascontiguousarray(color, dtype=np.float64).reshape(-1, 3)
    g_color = np.ascontiguousarray(g_color, dtype=np.float64).reshape(-1, 3)
    n = len(gf)
    grads = {name: np.zeros_like(v) for name, v in gf.params().items()}
    g_o = np.zeros_like(O)
    g_d = np.zeros_like(D)
    if n == 0 or len(O) == 0:
        return grads, g_o, g_d
    prep = prep or prepare(gf)
    g_M = np.zeros((n, 3, 3))
    kernels.render_rays_backward(O, D, *_args(gf, prep), gf.background, gf.normalized_response,
                                 alpha_min, t_min, t_eps, color, g_color,
                                 grads["mu"], g_M, grads["opacity_logit"], grads["sh"], g_o, g_d)
    grads["quat"], grads["log_scale"] = frame_backward(gf, g_M)
    return grads, g_o, g_d
