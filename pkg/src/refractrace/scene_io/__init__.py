"""Scene files, images, checkpoints, metrics and the synthetic ground-truth generator."""

from ..heightfield import CheckpointError, CorruptPayloadError, VersionMismatchError
from .checkpoint import Checkpoint, MissingCheckpointError, load_checkpoint, save_checkpoint
from .images import linear_to_srgb, quantize, read_png, srgb_to_linear, write_float, write_png
from .metrics import MetricReport, RmseResult, distance_to_surface, project_to_surface, psnr, ssim, surface_rmse
from .scene import (SCENE_VERSION, Scene, SceneError, SyntheticSpec, View, generate_synthetic_scene, load_scene,
                    save_scene, scene_from_dict)
from .synthetic import (CheckerPattern, FlatSurface, ImagePattern, MeshSurface, SineSurface, SurfaceSpecError,
                        camera_rays, intersect_surface, pattern_from_dict, reference_render, ring_cameras,
                        snell_angles, surface_from_dict)

__all__ = [
    "CheckerPattern", "Checkpoint", "CheckpointError", "CorruptPayloadError", "FlatSurface", "ImagePattern",
    "MeshSurface", "MetricReport", "MissingCheckpointError", "RmseResult", "SCENE_VERSION", "Scene", "SceneError",
    "SineSurface", "SurfaceSpecError", "SyntheticSpec", "VersionMismatchError", "View", "camera_rays",
    "distance_to_surface", "generate_synthetic_scene", "intersect_surface", "linear_to_srgb", "load_checkpoint",
    "load_scene", "pattern_from_dict", "project_to_surface", "psnr", "quantize", "read_png", "reference_render",
    "ring_cameras", "save_checkpoint", "save_scene", "scene_from_dict", "snell_angles", "srgb_to_linear", "ssim",
    "surface_from_dict", "surface_rmse", "write_float", "write_png",
]
