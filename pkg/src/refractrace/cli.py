"""Command-line workflows: generate, train, render, dewater, eval and edit-surface.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from .geom import Camera, RefractionConfig, image_rays
from .heightfield import CheckpointError
from .renderer import RenderJob, SurfaceHandle, render_forward
from .scene_io import (MetricReport, MissingCheckpointError, SceneError, SyntheticSpec, generate_synthetic_scene,
                       load_checkpoint, load_scene, psnr, save_checkpoint, ssim, surface_rmse, write_float, write_png)
from .surface import MeshError, build_proxy, load_obj, save_obj, validate_heightfield_mesh
from .train import TrainConfig, train

log = logging.getLogger("refractrace")


class UsageError(Exception):
    """Bad arguments or configuration; exits with code 2."""


# ---------------------------------------------------------------- helpers

def _read_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"{what} not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} {path} is not valid JSON: {exc}") from None


def _parse_overrides(items):
    out = []
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        out.append((key.strip(), value.strip()))
    return out


def _load_scene(path, load_images=True):
    if not os.path.isfile(path):
        raise UsageError(f"scene file not found: {path}")
    return load_scene(path, load_images)


def train_config(config_path=None, overrides=(), **flags) -> TrainConfig:
    """Defaults, then the JSON config file, then ``key=value`` overrides, then explicit flags."""
    cfg = TrainConfig.desk()
    items = []
    if config_path:
        doc = _read_json(config_path, "config file")
        if not isinstance(doc, dict):
            raise UsageError(f"config file {config_path} must hold a JSON object")
        for key, value in doc.items():
            if isinstance(value, dict):
                items += [(f"{key}.{k}", v) for k, v in value.items()]
            else:
                items.append((key, value))
    for key, value in items + list(overrides):
        text = value if isinstance(value, str) else json.dumps(value)
        try:
            cfg = cfg.override(key, text)
        except KeyError:
            raise UsageError(f"unknown config key {key!r}") from None
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    for key, value in flags.items():
        if value is not None:
            cfg = cfg.override(key, str(value))
    return cfg


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be at least 1")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _surface_from_meta(ckpt):
    meta = ckpt.meta
    if ckpt.net is None:
        return None
    return SurfaceHandle(ckpt.net, meta.get("coarse_nx", 40), meta.get("coarse_ny", 40), meta.get("levels", 2),
                         "recursive", meta.get("normal_mode", "phong"))


def _refraction_from_meta(meta):
    r = meta.get("refraction", {})
    return RefractionConfig(r.get("n1", 1.0), r.get("n2", 1.333))


def _cameras(args, scene=None):
    """``[(name, camera, gt_image_or_None)]`` from ``--camera`` or the scene's split."""
    if args.camera:
        doc = _read_json(args.camera, "camera file")
        entries = doc.get("cameras", [doc]) if isinstance(doc, dict) else doc
        out = []
        for k, c in enumerate(entries):
            try:
                out.append((c.get("name", f"camera_{k:03d}"), Camera.from_dict(c), None))
            except (KeyError, TypeError, ValueError) as exc:
                raise UsageError(f"camera file entry {k} is invalid: {exc}") from None
        return out
    if scene is None:
        raise UsageError("give either --scene or --camera")
    views = scene.views if args.split == "all" else scene.split(args.split)
    if not views:
        raise UsageError(f"scene has no {args.split!r} views")
    return [(v.name, v.camera, v.image) for v in views]


# ---------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    d = asdict(SyntheticSpec())
    if args.spec:
        doc = _read_json(args.spec, "generator spec")
        if not isinstance(doc, dict):
            raise UsageError("generator spec must be a JSON object")
        unknown = sorted(set(doc) - set(d))
        if unknown:
            raise UsageError(f"unknown generator spec field(s): {', '.join(unknown)}")
        d.update(doc)
    for key, value in _parse_overrides(args.set):
        if key not in d:
            raise UsageError(f"unknown generator spec field {key!r}")
        try:
            d[key] = json.loads(value)
        except json.JSONDecodeError:
            d[key] = value
    if args.seed is not None:
        d["seed"] = args.seed
    try:
        spec = SyntheticSpec.from_dict(d)
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "scene.json")
        scene = generate_synthetic_scene(spec, path)
    except (SceneError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid generator spec: {exc}") from None
    counts = {s: len(scene.split(s)) for s in ("train", "test", "dewater")}
    print(f"wrote {path}: {counts['train']} train, {counts['test']} test, {counts['dewater']} dewater views "
          f"at {spec.width}x{spec.height}")
    return 0


def cmd_train(args) -> int:
    scene = _load_scene(args.scene)
    cfg = train_config(args.config, _parse_overrides(args.set), iterations=args.iterations, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    cfg.log_path = os.path.join(args.out, "metrics.csv")
    if cfg.checkpoint_interval and not cfg.checkpoint_dir:
        cfg.checkpoint_dir = os.path.join(args.out, "checkpoint")
    res = train(scene, cfg)
    meta = {"iterations": cfg.iterations, "coarse_nx": cfg.coarse_nx, "coarse_ny": cfg.coarse_ny,
            "levels": cfg.levels, "normal_mode": cfg.normal_mode, "refraction_enabled": cfg.refraction,
            "refraction": {"n1": scene.refraction.n1, "n2": scene.refraction.n2},
            "seconds": res.seconds, "config": cfg.to_dict()}
    ckpt = os.path.join(args.out, "checkpoint")
    save_checkpoint(ckpt, res.field, res.net, meta)
    from .gaussians import export_point_cloud

    export_point_cloud(os.path.join(args.out, "points.ply"), res.field)
    if res.net is not None:
        nxf = (cfg.coarse_nx - 1) * 2**cfg.levels + 1
        nyf = (cfg.coarse_ny - 1) * 2**cfg.levels + 1
        save_obj(os.path.join(args.out, "surface.obj"), build_proxy(res.net, nxf, nyf))
    last = res.log[-1]
    print(f"trained {cfg.iterations} iterations in {res.seconds:.1f} s; final train PSNR {last['psnr']:.2f} dB; "
          f"checkpoint {ckpt}")
    return 0


def _load_ckpt(path):
    try:
        return load_checkpoint(path)
    except MissingCheckpointError as exc:
        raise UsageError(str(exc)) from None


def _render_views(ckpt, cams, refraction, surface, out_dir, write_floats=False):
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for name, cam, gt in cams:
        img = render_forward(RenderJob(cam, ckpt.field, surface, refraction)).image
        write_png(os.path.join(out_dir, f"{name}.png"), img)
        if write_floats:
            write_float(os.path.join(out_dir, f"{name}.npy"), img)
        row = {"view": name}
        if gt is not None:
            row["psnr"] = psnr(np.clip(img, 0, 1), gt)
            row["ssim"] = ssim(np.clip(img, 0, 1), gt)
        rows.append(row)
    return rows


def cmd_render(args) -> int:
    ckpt = _load_ckpt(args.checkpoint)
    scene = _load_scene(args.scene) if args.scene else None
    cams = _cameras(args, scene)
    refraction = scene.refraction if scene is not None else _refraction_from_meta(ckpt.meta)
    surface = None if args.dewater else _surface_from_meta(ckpt)
    rows = _render_views(ckpt, cams, refraction, surface, args.out, args.float)
    for r in rows:
        extra = f"  PSNR {r['psnr']:.2f} dB" if "psnr" in r else ""
        print(f"{r['view']}{extra}")
    print(f"wrote {len(rows)} image(s) to {args.out}")
    return 0


def cmd_eval(args) -> int:
    ckpt = _load_ckpt(args.checkpoint)
    scene = _load_scene(args.scene)
    t0 = time.perf_counter()
    cams = _cameras(argparse.Namespace(camera=None, split=args.split), scene)
    surface = None if args.dewater else _surface_from_meta(ckpt)
    per_view = []
    for name, cam, gt in cams:
        img = np.clip(render_forward(RenderJob(cam, ckpt.field, surface, scene.refraction)).image, 0, 1)
        per_view.append({"view": name, "psnr": psnr(img, gt), "ssim": ssim(img, gt)})
    t_render = time.perf_counter() - t0
    rmse = None
    gt_surface = scene.gt_surface()
    if gt_surface is not None and ckpt.net is not None:
        O = np.concatenate([image_rays(c)[0] for _, c, _ in cams])
        D = np.concatenate([image_rays(c)[1] for _, c, _ in cams])
        res = surface_rmse(ckpt.net, gt_surface, O, D, args.rmse_grid, args.rmse_grid, scene.root)
        rmse = res.rmse
        if res.excluded:
            print(f"surface RMSE excludes {res.excluded} rays that missed the trained surface")
    report = MetricReport(float(np.mean([r["psnr"] for r in per_view])),
                          float(np.mean([r["ssim"] for r in per_view])), rmse, per_view,
                          {"render": t_render, "total": time.perf_counter() - t0})
    for r in per_view:
        print(f"{r['view']}: PSNR {r['psnr']:.3f} dB  SSIM {r['ssim']:.4f}")
    print(f"mean: PSNR {report.psnr:.3f} dB  SSIM {report.ssim:.4f}")
    if rmse is not None:
        print(f"surface RMSE {rmse:.6g}")
    if args.out:
        report.write_csv(args.out)
    return 0


def cmd_edit_surface(args) -> int:
    ckpt = _load_ckpt(args.checkpoint)
    scene = _load_scene(args.scene) if args.scene else None
    if not os.path.isfile(args.mesh):
        raise UsageError(f"mesh file not found: {args.mesh}")
    try:
        mesh = validate_heightfield_mesh(load_obj(args.mesh))
    except MeshError as exc:
        raise UsageError(f"{args.mesh}: {exc}") from None
    cams = _cameras(args, scene)
    refraction = scene.refraction if scene is not None else _refraction_from_meta(ckpt.meta)
    surface = SurfaceHandle(method="mesh", mesh=mesh, normal_mode=ckpt.meta.get("normal_mode", "phong"))
    rows = _render_views(ckpt, cams, refraction, surface, args.out, args.float)
    print(f"wrote {len(rows)} image(s) through {args.mesh} to {args.out}")
    return 0


# ---------------------------------------------------------------- parser

def _common(p):
    p.add_argument("--seed", type=int, default=None, help="random seed (default: from config)")
    p.add_argument("--threads", type=int, default=None, help="cap on numba worker threads")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")


def _view_args(p):
    p.add_argument("--scene", help="scene file whose cameras to render")
    p.add_argument("--split", default="test", choices=("train", "test", "dewater", "all"),
                   help="which scene views to render (default: test)")
    p.add_argument("--camera", help="JSON camera (or {'cameras': [...]}) instead of scene views")
    p.add_argument("--out", required=True, help="output directory for PNGs")
    p.add_argument("--float", action="store_true", help="also write float32 .npy images")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refractrace", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render a synthetic scene with ground-truth images")
    p.add_argument("--spec", help="JSON generator spec (fields of SyntheticSpec)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a spec field (JSON value)")
    p.add_argument("--out", required=True, help="output directory")
    _common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="jointly fit Gaussians and the water surface")
    p.add_argument("--scene", required=True)
    p.add_argument("--config", help="JSON training config; desk-scale defaults otherwise")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (lr.mu=1e-4)")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory (checkpoint, metrics.csv, surface.obj)")
    _common(p)
    p.set_defaults(func=cmd_train)

    for name, dewater in (("render", False), ("dewater", True)):
        desc = "render views from a checkpoint" if not dewater else "render with the water removed"
        p = sub.add_parser(name, help=desc)
        p.add_argument("--checkpoint", required=True)
        _view_args(p)
        if not dewater:
            p.add_argument("--dewater", action="store_true", help="skip the surface and refraction")
        else:
            p.set_defaults(dewater=True)
        _common(p)
        p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="PSNR/SSIM on a split and surface RMSE against the ground truth")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--split", default="test", choices=("train", "test", "dewater", "all"))
    p.add_argument("--dewater", action="store_true", help="evaluate without the surface")
    p.add_argument("--rmse-grid", type=int, default=200, help="dense proxy resolution for surface RMSE")
    p.add_argument("--out", help="CSV report path")
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("edit-surface", help="render through a substituted water-surface mesh")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mesh", required=True, help="OBJ height-field mesh")
    _view_args(p)
    _common(p)
    p.set_defaults(func=cmd_edit_surface)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        _set_threads(args.threads)
        return args.func(args)
    except (UsageError, SceneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures get a one-line message and code 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
