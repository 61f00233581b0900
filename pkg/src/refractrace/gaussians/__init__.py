"""Gaussian primitives and their ray-traced rendering."""

from .field import (Gaussian, GaussianField, K_SIGMA, export_point_cloud, load_gaussians, quat_to_rotmat,
                    random_init, save_gaussians)
from .kernels import ALPHA_MAX, ALPHA_MIN, T_EPS, T_MIN
from .ops import (CompositeAux, RaySample, alpha_backward, canonical_transform, composite, composite_backward,
                  gather_and_sort, max_response_alpha, sh_backward, sh_eval)
from .render import PreparedField, frame_backward, prepare, render_rays, render_rays_backward

__all__ = [
    "ALPHA_MAX", "ALPHA_MIN", "CompositeAux", "Gaussian", "GaussianField", "K_SIGMA", "PreparedField", "RaySample",
    "T_EPS", "T_MIN", "alpha_backward", "canonical_transform", "composite", "composite_backward",
    "export_point_cloud", "frame_backward", "gather_and_sort", "load_gaussians", "max_response_alpha", "prepare",
    "quat_to_rotmat", "random_init", "render_rays", "render_rays_backward", "save_gaussians", "sh_backward",
    "sh_eval",
]
