"""End-to-end acceptance checks, one test per criterion.

Each test records a pass/fail line that is printed in the terminal summary.
The desk-benchmark runs (criteria 5, 6, 7 and 9) share a session cache and
take most of the wall time.
"""

import os
import time

import numpy as np
import pytest

import test_gaussians
import test_geom
import test_heightfield
import test_renderer
import test_surface
from conftest import ACCEPTANCE
from refractrace.geom import Camera, RefractionConfig, image_rays
from refractrace.gaussians import random_init
from refractrace.heightfield import init_flat
from refractrace.renderer import RenderJob, SurfaceHandle, render_forward
from refractrace.scene_io import SyntheticSpec, generate_synthetic_scene, linear_to_srgb, psnr, surface_rmse
from refractrace.scene_io.synthetic import SineSurface
from refractrace.surface import build_proxy, dense_trace, recursive_subdivision_trace
from refractrace.train import TrainConfig, surface_handle, train


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    assert ok, f"criterion {n}: {detail}"


def run_checks(checks):
    failed = []
    for name, fn in checks:
        try:
            fn()
        except AssertionError as exc:
            failed.append(f"{name}: {str(exc).splitlines()[0] if str(exc) else 'assertion'}")
    return failed


# ---------------------------------------------------------------- 1: gradient suite

def test_criterion_1_gradient_suite():
    checks = [
        ("refract_backward", test_geom.test_refract_backward_matches_finite_differences),
        ("refract_backward TIR", test_geom.test_refract_backward_zero_for_tir),
        *[(f"sh degree {k}", lambda k=k: test_gaussians.test_sh_backward_matches_finite_differences(k))
          for k in (1, 2, 3)],
        ("composite_backward", test_gaussians.test_composite_backward_matches_finite_differences),
        *[(f"alpha_backward normalized={v}", lambda v=v: test_gaussians.test_alpha_backward_six_blocks(v))
          for v in (False, True)],
        ("height field", test_heightfield.test_backward_matches_finite_differences),
        *[(f"surface {m}", lambda m=m: test_surface.test_backward_matches_finite_differences(m))
          for m in ("phong", "face")],
        ("end-to-end toy", test_renderer.test_end_to_end_gradients),
    ]
    t0 = time.perf_counter()
    failed = run_checks(checks)
    dt = time.perf_counter() - t0
    record(1, not failed and dt < 60, f"{len(checks) - len(failed)}/{len(checks)} gradient checks in {dt:.1f} s"
           + (f"; failed {failed}" if failed else ""))


# ---------------------------------------------------------------- 2: Snell

def test_criterion_2_snell():
    failed = run_checks([("conservation", test_geom.test_snell_conservation_and_coplanarity),
                         ("reciprocity", test_geom.test_reciprocity)])
    record(2, not failed, "1000 refractions: sine-law residual < 1e-12, reciprocity < 1e-9"
           + (f"; failed {failed}" if failed else ""))


# ---------------------------------------------------------------- 3: subdivision equivalence

BENCH_SURFACE = SineSurface(1.0, 0.1, (0.5, 0.3), 0.0, (-2.5, 2.5, -2.5, 2.5))


def benchmark_rays():
    spec = SyntheticSpec()
    from refractrace.scene_io.synthetic import ring_cameras

    cams = ring_cameras(spec.n_test, spec.test_polar_deg, spec.radius, fov_deg=spec.fov_deg, width=spec.width,
                        height=spec.height)
    O = np.vstack([image_rays(c)[0] for c in cams])
    D = np.vstack([image_rays(c)[1] for c in cams])
    return O, D


def chord_error(surface, n):
    mesh = build_proxy(surface, n, n)
    tri = mesh.vertices[mesh.faces]
    pts = np.concatenate([tri.mean(axis=1), (tri[:, 0] + tri[:, 1]) / 2, (tri[:, 1] + tri[:, 2]) / 2,
                          (tri[:, 0] + tri[:, 2]) / 2])
    return float(np.abs(pts[:, 2] - surface(pts[:, :2])).max())


def test_criterion_3_subdivision_equivalence():
    failed = run_checks([(f"plane levels={k}", lambda k=k: test_surface.test_recursive_trace_on_plane_is_exact(k))
                         for k in (0, 1, 2, 3)])
    O, D = benchmark_rays()
    rec = recursive_subdivision_trace(BENCH_SURFACE, O, D, 50, 50, 2)
    lattice = dense_trace(BENCH_SURFACE, O, D, 197, 197)
    both = rec.hits.hit & lattice.hits.hit
    mismatch = 1 - np.mean(rec.mesh.face_ids[rec.hits.face[both]] == lattice.hits.face[both])
    dense = dense_trace(BENCH_SURFACE, O, D, 200, 200)
    both = rec.hits.hit & dense.hits.hit
    n = dense.hits.normal[both]
    gap = np.abs(rec.hits.t[both] - dense.hits.t[both]) * np.abs(np.einsum("ij,ij->i", D[both], n)) / n[:, 2]
    bound = 2 * chord_error(BENCH_SURFACE, 200)
    ok = not failed and mismatch < 0.01 and gap.max() <= bound and rec.hits.hit.sum() == dense.hits.hit.sum()
    record(3, ok, f"flat levels 0-3 exact; sine 50^2+2 vs lattice: {100 * mismatch:.3f}% mismatched parents; "
           f"max vertical gap to dense 200^2 {gap.max():.2e} <= {bound:.2e}" + (f"; failed {failed}" if failed else ""))


# ---------------------------------------------------------------- 4: query count

def test_criterion_4_query_count():
    rng = np.random.default_rng(0)
    net = init_flat((-2.5, 2.5, -2.5, 2.5), 1.0, 0.1, 0, 64, 3)
    for w in net.weights:
        w += rng.normal(0, 0.05, w.shape)
    cam = Camera.look_at([0.0, -2.3, 3.3], [0, 0, 0], [0, 0, 1], 40.0, 64, 64)
    O, D = image_rays(cam)
    t0 = time.perf_counter()
    rec = recursive_subdivision_trace(net, O, D, 100, 100, 2)
    dense = dense_trace(net, O, D, 400, 400)
    dt = time.perf_counter() - t0
    ratio = rec.queries / (400 * 400)
    agree = np.mean(rec.hits.hit == dense.hits.hit)
    record(4, ratio < 0.5 and dt < 30 and agree > 0.99,
           f"recursive 100^2+2 levels: {rec.queries} queries vs dense 400^2: {400 * 400} ({100 * ratio:.1f}%), "
           f"{dt:.1f} s; hit/miss agreement {100 * agree:.2f}%")


# ---------------------------------------------------------------- 8: compositing oracle

def test_criterion_8_compositing_oracle():
    failed = run_checks([("direct sum", test_gaussians.test_composite_matches_direct_sum),
                         *[(f"gather normalized={v}", lambda v=v: test_gaussians.test_gather_matches_brute_force(v))
                           for v in (False, True)]])
    record(8, not failed, "composite vs direct sum on 1000 lists < 1e-12; BVH gather == brute force"
           + (f"; failed {failed}" if failed else ""))


# ---------------------------------------------------------------- desk benchmark runs

# a smaller count gives a quick smoke run of the desk criteria; the criteria themselves assume 3000
DESK_ITERATIONS = int(os.environ.get("ACCEPTANCE_ITERATIONS", "3000"))


class Desk:
    def __init__(self):
        self.scenes = {}
        self.runs = {}

    def scene(self, kind):
        if kind not in self.scenes:
            if kind == "sine":
                spec = SyntheticSpec()
            else:
                spec = SyntheticSpec(surface={"type": "flat", "level": 1.0}, n_dewater=2)
            self.scenes[kind] = generate_synthetic_scene(spec)
        return self.scenes[kind]

    def run(self, name, kind="sine", **overrides):
        if name not in self.runs:
            scene = self.scene(kind)
            cfg = TrainConfig.desk(iterations=DESK_ITERATIONS, **overrides)
            t0 = time.perf_counter()
            res = train(scene, cfg)
            minutes = (time.perf_counter() - t0) / 60
            self.runs[name] = (res, self.evaluate(scene, res), minutes)
        return self.runs[name]

    @staticmethod
    def evaluate(scene, res):
        surf = surface_handle(res.net, res.config) if res.net is not None else None
        scores = []
        for v in scene.test_views:
            img = np.clip(render_forward(RenderJob(v.camera, res.field, surf, scene.refraction)).image, 0, 1)
            scores.append(psnr(img, v.image))
        out = {"psnr": float(np.mean(scores)), "opacity": float(res.field.opacity.mean())}
        gt = scene.gt_surface()
        if res.net is not None and gt is not None:
            O = np.vstack([image_rays(v.camera)[0] for v in scene.test_views])
            D = np.vstack([image_rays(v.camera)[1] for v in scene.test_views])
            out["rmse"] = surface_rmse(res.net, gt, O, D, 200, 200).rmse
        return out


@pytest.fixture(scope="session")
def desk():
    return Desk()


def test_criterion_5_desk_benchmark(desk):
    _, full, t_full = desk.run("refraction")
    _, ablation, t_abl = desk.run("no-refraction", refraction=False)
    amplitude = desk.scene("sine").ground_truth["surface"]["amplitude"]
    gain = full["psnr"] - ablation["psnr"]
    ok = gain >= 3.0 and full["rmse"] < 0.1 * amplitude and max(t_full, t_abl) < 20
    record(5, ok, f"test PSNR {full['psnr']:.2f} vs no-refraction {ablation['psnr']:.2f} dB (gain {gain:+.2f}, "
           f"need >= 3); surface RMSE {full['rmse']:.4f} (need < {0.1 * amplitude:.4f}); "
           f"{t_full:.1f} / {t_abl:.1f} min")


def test_criterion_6_opacity_ablation(desk):
    _, reg, _ = desk.run("refraction")
    _, free, _ = desk.run("no-opacity-loss", weights={"l1": 0.8, "ssim": 0.2, "opacity": 0.0})
    ok = reg["opacity"] < free["opacity"] and reg["psnr"] >= free["psnr"] - 0.5
    record(6, ok, f"mean opacity {reg['opacity']:.4f} (weight 0.007) vs {free['opacity']:.4f} (weight 0); "
           f"test PSNR {reg['psnr']:.2f} vs {free['psnr']:.2f} dB")


def test_criterion_7_normal_interpolation(desk):
    _, phong, _ = desk.run("refraction")
    _, face, _ = desk.run("face-normals", normal_mode="face")
    record(7, phong["psnr"] >= face["psnr"], f"test PSNR phong {phong['psnr']:.2f} vs face {face['psnr']:.2f} dB")


def test_criterion_9_refraction_identity(desk):
    gf = random_init(200, ([-1.5, -1.5, -0.05], [1.5, 1.5, 0.05]), 0, opacity=0.3)
    cam = Camera.look_at([1.0, -2.0, 3.0], [0, 0, 0], [0, 0, 1], 40.0, 48, 48)
    wavy = SurfaceHandle(BENCH_SURFACE, 20, 20, 2)
    same = render_forward(RenderJob(cam, gf, wavy, RefractionConfig(1.333, 1.333))).image
    dry = render_forward(RenderJob(cam, gf)).image
    identical = np.array_equal(same, dry)
    scene = desk.scene("flat")
    res, _, _ = desk.run("flat", "flat")
    worst, mean = 0.0, 0.0
    for v in scene.split("dewater"):
        img = render_forward(RenderJob(v.camera, res.field)).image
        diff = np.abs(np.round(255 * linear_to_srgb(np.clip(img, 0, 1)))
                      - np.round(255 * linear_to_srgb(v.image)))
        worst = max(worst, float(diff.max()))
        mean += float(diff.mean()) / len(scene.split("dewater"))
    record(9, identical and worst <= 2, f"n1=n2 render bit-identical to dewatered: {identical}; water-removed views "
           f"vs GT pattern: max {worst:.0f}/255, mean {mean:.2f}/255 per channel (need max <= 2)")
