"""Scene files: a JSON document describing cameras, images and the water setup.

Schema (version 1)::

    {
      "version": 1,
      "refraction": {"n1": 1.0, "n2": 1.333},
      "aabb": {"min": [x, y, z], "max": [x, y, z]},      # Gaussian init region
      "surface_domain": [xmin, xmax, ymin, ymax],          # height-field extent
      "water_level": 1.0,                                  # initial plane height
      "background": [r, g, b],                             # linear RGB
      "ground_truth": {                                    # optional
        "surface": {"type": "flat", "level": 1.0}
                 | {"type": "sine", "level": 1.0, "amplitude": 0.1, "frequency": [fx, fy], "phase": 0.0}
                 | {"type": "mesh", "path": "gt_surface.obj"},
        "pattern": {"type": "checker", ...} | {"type": "image", "path": ..., "extent": [...]}
      },
      "cameras": [
        {"name": "train_000", "split": "train" | "test" | "dewater", "image": "images/train_000.png",
         "fx": ..., "fy": ..., "cx": ..., "cy": ..., "width": 64, "height": 64,
         "rotation": [9 numbers, row-major], "translation": [3 numbers]}
      ]
    }

Image paths are relative to the scene file. ``dewater`` views show the
pattern with the water removed and serve as references for water removal.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..geom import Camera, RefractionConfig
from .images import quantize, read_png, write_png
from .synthetic import (CheckerPattern, SurfaceSpecError, pattern_from_dict, reference_render, ring_cameras,
                        surface_from_dict)

SCENE_VERSION = 1
SPLITS = ("train", "test", "dewater")


class SceneError(ValueError):
    """A scene file is missing a field, has an invalid value or references a bad image."""


@dataclass
class View:
    name: str
    split: str
    camera: Camera
    image_path: str
    image: np.ndarray | None = None


@dataclass
class Scene:
    views: list
    refraction: RefractionConfig = field(default_factory=RefractionConfig)
    aabb: tuple = ((-1.5, -1.5, -0.05), (1.5, 1.5, 0.05))
    surface_domain: tuple = (-2.0, 2.0, -2.0, 2.0)
    water_level: float = 1.0
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ground_truth: dict | None = None
    root: str = "."
    version: int = SCENE_VERSION

    def split(self, name: str) -> list:
        return [v for v in self.views if v.split == name]

    @property
    def train_views(self):
        return self.split("train")

    @property
    def test_views(self):
        return self.split("test")

    @property
    def dewater_views(self):
        return self.split("dewater")

    def gt_surface(self):
        if not self.ground_truth or "surface" not in self.ground_truth:
            return None
        return surface_from_dict(self.ground_truth["surface"], self.surface_domain)

    def gt_pattern(self):
        if not self.ground_truth or "pattern" not in self.ground_truth:
            return None
        return pattern_from_dict(self.ground_truth["pattern"], self.root)

    def to_dict(self) -> dict:
        out = {
            "version": self.version,
            "refraction": {"n1": self.refraction.n1, "n2": self.refraction.n2},
            "aabb": {"min": [float(v) for v in self.aabb[0]], "max": [float(v) for v in self.aabb[1]]},
            "surface_domain": [float(v) for v in self.surface_domain],
            "water_level": float(self.water_level),
            "background": [float(v) for v in self.background],
            "cameras": [{"name": v.name, "split": v.split, "image": v.image_path, **v.camera.to_dict()}
                        for v in self.views],
        }
        if self.ground_truth is not None:
            out["ground_truth"] = self.ground_truth
        return out


def _require(d, key, where, kind=None):
    if not isinstance(d, dict) or key not in d:
        raise SceneError(f"scene field {where}{key!r} is missing")
    val = d[key]
    if kind is not None and not isinstance(val, kind):
        raise SceneError(f"scene field {where}{key!r} has the wrong type ({type(val).__name__})")
    return val


def _vector(val, n, name):
    try:
        arr = np.asarray(val, dtype=np.float64)
    except (TypeError, ValueError):
        raise SceneError(f"scene field {name!r} must be a list of {n} numbers") from None
    if arr.shape != (n,) or not np.all(np.isfinite(arr)):
        raise SceneError(f"scene field {name!r} must be a list of {n} finite numbers")
    return arr


def scene_from_dict(d: dict, root: str = ".", load_images: bool = True) -> Scene:
    """Validate a parsed scene document; every error names the offending field."""
    version = _require(d, "version", "", int)
    if version != SCENE_VERSION:
        raise SceneError(f"scene version {version} is not supported (expected {SCENE_VERSION})")
    refr = _require(d, "refraction", "", dict)
    try:
        refraction = RefractionConfig(float(_require(refr, "n1", "refraction.")),
                                      float(_require(refr, "n2", "refraction.")))
    except (TypeError, ValueError) as exc:
        raise SceneError(f"scene field 'refraction': {exc}") from None
    box = _require(d, "aabb", "", dict)
    lo = _vector(_require(box, "min", "aabb."), 3, "aabb.min")
    hi = _vector(_require(box, "max", "aabb."), 3, "aabb.max")
    if np.any(hi <= lo):
        raise SceneError("scene field 'aabb' must have max > min on every axis")
    domain = _vector(_require(d, "surface_domain", ""), 4, "surface_domain")
    if domain[1] <= domain[0] or domain[3] <= domain[2]:
        raise SceneError("scene field 'surface_domain' must be [xmin, xmax, ymin, ymax] with min < max")
    level = _require(d, "water_level", "")
    if not isinstance(level, (int, float)):
        raise SceneError("scene field 'water_level' must be a number")
    bg = _vector(d.get("background", [0, 0, 0]), 3, "background")
    gt = d.get("ground_truth")
    if gt is not None:
        if not isinstance(gt, dict):
            raise SceneError("scene field 'ground_truth' must be an object")
        if "surface" in gt:
            try:
                surface_from_dict(gt["surface"])
            except SurfaceSpecError as exc:
                raise SceneError(f"scene field 'ground_truth.surface': {exc}") from None
    cams = _require(d, "cameras", "", list)
    views = []
    names = set()
    for k, c in enumerate(cams):
        where = f"cameras[{k}]."
        name = str(_require(c, "name", where))
        if name in names:
            raise SceneError(f"scene field {where}'name' duplicates {name!r}")
        names.add(name)
        split = _require(c, "split", where, str)
        if split not in SPLITS:
            raise SceneError(f"scene field {where}'split' is {split!r}; expected one of {SPLITS}")
        for key in ("fx", "fy", "cx", "cy", "width", "height", "rotation", "translation", "image"):
            _require(c, key, where)
        try:
            cam = Camera.from_dict(c)
        except (TypeError, ValueError) as exc:
            raise SceneError(f"scene field {where[:-1]}: {exc}") from None
        view = View(name, split, cam, str(c["image"]))
        if load_images:
            view.image = _load_view_image(view, root, where)
        views.append(view)
    return Scene(views, refraction, (tuple(lo), tuple(hi)), tuple(domain), float(level), bg, gt, root, version)


def _load_view_image(view, root, where):
    path = os.path.join(root, view.image_path)
    if not os.path.isfile(path):
        raise SceneError(f"scene field {where}'image': file {view.image_path!r} does not exist")
    try:
        img = read_png(path)
    except OSError as exc:
        raise SceneError(f"scene field {where}'image': cannot read {view.image_path!r} ({exc})") from None
    if img.shape[:2] != (view.camera.height, view.camera.width):
        raise SceneError(f"scene field {where}'image': {view.image_path!r} is {img.shape[1]}x{img.shape[0]}, "
                         f"camera expects {view.camera.width}x{view.camera.height}")
    return img


def load_scene(path, load_images: bool = True) -> Scene:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: not valid JSON ({exc})") from None
    return scene_from_dict(d, os.path.dirname(os.path.abspath(path)), load_images)


def save_scene(path, scene: Scene, write_images: bool = True) -> None:
    root = os.path.dirname(os.path.abspath(path))
    if write_images:
        for v in scene.views:
            if v.image is not None:
                full = os.path.join(root, v.image_path)
                os.makedirs(os.path.dirname(full), exist_ok=True)
                write_png(full, v.image)
    with open(path, "w") as fh:
        json.dump(scene.to_dict(), fh, indent=2)
    scene.root = root


# ---------------------------------------------------------------- generator

@dataclass
class SyntheticSpec:
    """Recipe for a synthetic benchmark scene (desk-scale defaults)."""

    surface: dict = field(default_factory=lambda: {"type": "sine", "level": 1.0, "amplitude": 0.1,
                                                   "frequency": [0.5, 0.3], "phase": 0.0})
    pattern: dict = field(default_factory=lambda: CheckerPattern(square=0.4, extent=(-1.6, 1.6, -1.6, 1.6)).to_dict())
    n_train: int = 8
    n_test: int = 2
    n_dewater: int = 0
    train_polar_deg: tuple = (30.0, 45.0)
    test_polar_deg: tuple = (35.0,)
    dewater_polar_deg: tuple = (30.0,)
    radius: float = 4.0
    dewater_radius: float = 3.0
    fov_deg: float = 40.0
    width: int = 64
    height: int = 64
    supersample: int = 3
    n1: float = 1.0
    n2: float = 1.333
    surface_domain: tuple = (-2.5, 2.5, -2.5, 2.5)
    aabb: tuple = ((-1.6, -1.6, -0.05), (1.6, 1.6, 0.05))
    background: tuple = (0.05, 0.05, 0.05)
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = set(cls.__dataclass_fields__)
        bad = sorted(set(d) - known)
        if bad:
            raise SceneError(f"unknown generator field(s): {', '.join(bad)}")
        return cls(**d)


def generate_synthetic_scene(spec: SyntheticSpec, out_path=None) -> Scene:
    """Render ground-truth views of a pattern under an analytic water surface.

    Train and test views look through the water; dewater views render the
    bare pattern from closer, lower cameras. The seed rotates the camera
    rings. With ``out_path`` the scene file and PNGs are written.
    """
    if spec.n_train < 1 or spec.width < 1 or spec.height < 1:
        raise SceneError("generator needs at least one training view and a positive resolution")
    try:
        surface = surface_from_dict(spec.surface, spec.surface_domain)
        pattern = pattern_from_dict(spec.pattern)
    except SurfaceSpecError as exc:
        raise SceneError(str(exc)) from None
    if not hasattr(surface, "gradient"):
        raise SceneError("the generator needs an analytic surface (flat or sine)")
    rng = np.random.default_rng(spec.seed)
    offset = float(rng.uniform(0.0, 360.0))
    rig = {
        "train": ring_cameras(spec.n_train, spec.train_polar_deg, spec.radius, fov_deg=spec.fov_deg,
                              width=spec.width, height=spec.height, azimuth_offset_deg=offset),
        "test": ring_cameras(spec.n_test, spec.test_polar_deg, spec.radius, fov_deg=spec.fov_deg,
                             width=spec.width, height=spec.height, azimuth_offset_deg=offset + 180.0 / max(spec.n_train, 1)),
        "dewater": ring_cameras(spec.n_dewater, spec.dewater_polar_deg, spec.dewater_radius, fov_deg=spec.fov_deg,
                                width=spec.width, height=spec.height, azimuth_offset_deg=offset + 45.0),
    }
    views = []
    for split, cams in rig.items():
        for k, cam in enumerate(cams):
            water = None if split == "dewater" else surface
            # stored 8-bit, so keep the in-memory copy identical to a reload
            img = quantize(reference_render(cam, pattern, spec.background, water, spec.n1, spec.n2, spec.supersample))
            views.append(View(f"{split}_{k:03d}", split, cam, f"images/{split}_{k:03d}.png", img))
    gt = {"surface": surface.to_dict(), "pattern": dict(spec.pattern)}
    scene = Scene(views, RefractionConfig(spec.n1, spec.n2), spec.aabb, spec.surface_domain,
                  float(spec.surface["level"]), np.asarray(spec.background, dtype=np.float64), gt)
    if out_path is not None:
        save_scene(out_path, scene)
    return scene
