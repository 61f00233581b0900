"""Single-ray evaluation: canonical transform, maximum response, gathering and compositing.

These mirror the batched kernels sample by sample and are the reference
used in tests and for inspecting individual rays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .field import Gaussian, GaussianField, K_SIGMA, logit, rotmat_backward
from .render import prepare


@dataclass(frozen=True)
class RaySample:
    index: int
    t_max: float
    alpha: float
    color: np.ndarray


@dataclass
class CompositeAux:
    transmittance: np.ndarray  # T_i before each used sample
    final_transmittance: float
    color: np.ndarray
    background: np.ndarray
    used: int


def _ray(ray):
    o, d = ray
    return np.asarray(o, dtype=np.float64), np.asarray(d, dtype=np.float64)


def canonical_transform(g: Gaussian, ray):
    """``(p_g, d_g)``: the ray origin and direction in the Gaussian's unit frame."""
    o, d = _ray(ray)
    M = g.frame
    return M @ (o - np.asarray(g.mu, dtype=np.float64)), M @ d


def sh_eval(sh, direction) -> np.ndarray:
    sh = np.ascontiguousarray(sh, dtype=np.float64)
    out = np.empty(3)
    kernels.sh_color(sh, np.asarray(direction, dtype=np.float64), np.empty(16), out)
    return out


def sh_backward(sh, direction, dL_dc):
    """``(dL/dcoefficients, dL/ddirection)`` for one colour evaluation."""
    sh = np.ascontiguousarray(sh, dtype=np.float64)
    g_sh = np.zeros_like(sh)
    g_d = np.zeros(3)
    kernels.sh_color_backward(sh, np.asarray(direction, dtype=np.float64), np.asarray(dL_dc, dtype=np.float64),
                              np.empty(16), np.empty((16, 3)), g_sh, g_d)
    return g_sh, g_d


def max_response_alpha(g: Gaussian, ray, index: int = 0, normalized: bool = False,
                       alpha_min: float = kernels.ALPHA_MIN, t_eps: float = kernels.T_EPS) -> RaySample | None:
    """The sample at the point of maximum response, or ``None`` when negligible."""
    o, d = _ray(ray)
    t, alpha, _ = kernels.response(g.frame, np.asarray(g.mu, dtype=np.float64), float(g.opacity), o, d,
                                   normalized, np.empty(3), np.empty(3))
    if alpha < alpha_min or t <= t_eps:
        return None
    return RaySample(index, float(t), float(alpha), sh_eval(g.sh, d))


def gather_and_sort(gf: GaussianField, ray, k_sigma: float = K_SIGMA, alpha_min: float = kernels.ALPHA_MIN,
                    t_eps: float = kernels.T_EPS) -> list[RaySample]:
    """All non-negligible samples whose bounding box the ray enters, ordered by ``(t_max, index)``."""
    n = len(gf)
    if n == 0:
        return []
    o, d = _ray(ray)
    prep = prepare(gf, k_sigma)
    idx, tb, ab = np.empty(n, dtype=np.int64), np.empty(n), np.empty(n)
    m = kernels.gather(o, d, prep.frames, gf.mu, prep.opacity, prep.lo, prep.hi, *prep.bvh_arrays,
                       gf.normalized_response, alpha_min, t_eps, idx, tb, ab, np.empty(256, dtype=np.int64),
                       np.empty(3), np.empty(3))
    return [RaySample(int(idx[k]), float(tb[k]), float(ab[k]), sh_eval(gf.sh[idx[k]], d)) for k in range(m)]


def composite(samples, background, t_min: float = kernels.T_MIN):
    """Front-to-back alpha blending with early termination; returns ``(C, aux)``."""
    bg = np.asarray(background, dtype=np.float64)
    C = np.zeros(3)
    T = 1.0
    trans = []
    for s in samples:
        trans.append(T)
        C += T * s.alpha * np.asarray(s.color)
        T *= 1.0 - s.alpha
        if T < t_min:
            break
    C += T * bg
    return C, CompositeAux(np.array(trans), T, C.copy(), bg, len(trans))


def composite_backward(samples, aux: CompositeAux, dL_dC):
    """Per used sample ``(dL/dalpha (n,), dL/dcolor (n, 3))``; the background acts as a final opaque sample."""
    g = np.asarray(dL_dC, dtype=np.float64)
    n = aux.used
    g_alpha = np.zeros(n)
    g_color = np.zeros((n, 3))
    acc = np.zeros(3)
    for k in range(n):
        s = samples[k]
        c = np.asarray(s.color)
        T = aux.transmittance[k]
        acc += T * s.alpha * c
        rest = aux.color - acc
        g_alpha[k] = g @ (T * c - rest / (1.0 - s.alpha))
        g_color[k] = g * s.alpha * T
    return g_alpha, g_color


def alpha_backward(sample: RaySample | None, g: Gaussian, ray, dL_dalpha: float, normalized: bool = False):
    """Gradients of one sample's alpha.

    Returns ``(param_grads, dL_dorigin, dL_ddirection)`` with ``param_grads``
    holding ``mu``, ``quat``, ``log_scale`` and ``opacity_logit`` entries.
    """
    o, d = _ray(ray)
    M = g.frame
    g_mu, g_M, g_o, g_d = np.zeros(3), np.zeros((3, 3)), np.zeros(3), np.zeros(3)
    g_logit = 0.0
    if sample is not None and dL_dalpha != 0.0:
        g_logit = kernels.response_backward(M, np.asarray(g.mu, dtype=np.float64), float(g.opacity), o, d,
                                            normalized, float(dL_dalpha), np.empty(3), np.empty(3),
                                            g_mu, g_M, g_o, g_d)
    scale = np.asarray(g.scale, dtype=np.float64)
    g_logs = -np.sum(g_M * M, axis=1)
    g_quat = rotmat_backward(np.asarray(g.quat, dtype=np.float64), g_M.T / scale[None, :])
    grads = {"mu": g_mu, "quat": g_quat, "log_scale": g_logs, "opacity_logit": float(g_logit)}
    return grads, g_o, g_d


__all__ = ["CompositeAux", "RaySample", "alpha_backward", "canonical_transform", "composite", "composite_backward",
           "gather_and_sort", "logit", "max_response_alpha", "sh_backward", "sh_eval"]
