"""Joint optimisation of the Gaussian field and the height-field network."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .gaussians import GaussianField, random_init
from .heightfield import HeightFieldNet, init_flat
from .losses import loss_l1, loss_opacity, loss_ssim, psnr
from .renderer import RenderJob, SurfaceHandle, render_backward, render_forward

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    l1: float = 0.8
    ssim: float = 0.2
    opacity: float = 0.007

    def __post_init__(self):
        if min(self.l1, self.ssim, self.opacity) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class LearningRates:
    mu: float = 1.6e-4
    mu_final_factor: float = 0.01
    quat: float = 1e-3
    log_scale: float = 5e-3
    opacity_logit: float = 5e-2
    sh: float = 2.5e-3
    net: float = 5e-4


@dataclass
class TrainConfig:
    iterations: int = 15000
    coarse_nx: int = 200
    coarse_ny: int = 200
    levels: int = 2
    normal_mode: str = "phong"
    refraction: bool = True  # False trains the refraction-free ablation
    n_gaussians: int = 500
    sh_degree: int = 1
    init_opacity: float = 0.1
    init_scale: float | None = None
    normalized_response: bool = False
    weights: LossWeights = field(default_factory=LossWeights)
    lr: LearningRates = field(default_factory=LearningRates)
    net_warmup: int = 500
    net_hidden: int = 256
    net_depth: int = 6
    net_bands: int = 6
    net_scale: float = 0.1
    seed: int = 0
    batch: str = "full"  # one full view per iteration, round robin
    log_interval: int = 50
    checkpoint_interval: int = 0
    checkpoint_dir: str | None = None
    log_path: str | None = None

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if self.batch != "full":
            raise ValueError(f"unsupported batch mode {self.batch!r}; only 'full' frames are implemented")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.lr, dict):
            self.lr = LearningRates(**self.lr)

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Desk-scale benchmark settings (64x64 views, 40x40 coarse mesh, 3k iterations, small MLP).

        With only 8 low-resolution views the height field overfits through
        high-frequency ripples, so the encoding keeps 2 bands; the faster
        rates let the short run converge.
        """
        base = dict(iterations=3000, coarse_nx=40, coarse_ny=40, levels=2, n_gaussians=500,
                    net_hidden=64, net_depth=3, net_bands=2, net_warmup=100,
                    lr=LearningRates(mu=5e-4, log_scale=1e-2, sh=1e-2, net=2e-3))
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    def override(self, key: str, value: str) -> "TrainConfig":
        """Return a copy with ``key=value`` applied; nested keys use dots (``lr.mu``)."""
        d = self.to_dict()
        target, name = d, key
        if "." in key:
            head, name = key.split(".", 1)
            if head not in ("lr", "weights") or not isinstance(d.get(head), dict):
                raise KeyError(key)
            target = d[head]
        if name not in target:
            raise KeyError(key)
        target[name] = _coerce(target[name], value, key)
        return TrainConfig(**d)


def _coerce(current, value, key):
    if isinstance(value, str):
        if current is None:
            if value.lower() in ("none", "null"):
                return None
            try:
                return float(value) if any(c in value for c in ".eE") else int(value)
            except ValueError:
                return value
        if isinstance(current, bool):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"{key} expects a boolean, got {value!r}")
        try:
            return type(current)(value)
        except (TypeError, ValueError):
            raise ValueError(f"{key} expects {type(current).__name__}, got {value!r}") from None
    return value


# ---------------------------------------------------------------- optimiser

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: dict = field(default_factory=dict)


def adam_step(state: AdamState, key, param: np.ndarray, grad: np.ndarray, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-15) -> None:
    """One in-place Adam update with bias correction for the parameter group ``key``."""
    if key not in state.m:
        state.m[key] = np.zeros_like(param)
        state.v[key] = np.zeros_like(param)
        state.step[key] = 0
    state.step[key] += 1
    t = state.step[key]
    m, v = state.m[key], state.v[key]
    m *= beta1
    m += (1 - beta1) * grad
    v *= beta2
    v += (1 - beta2) * grad * grad
    mhat = m / (1 - beta1**t)
    vhat = v / (1 - beta2**t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


# ---------------------------------------------------------------- loop

@dataclass
class TrainResult:
    field: GaussianField
    net: HeightFieldNet | None
    log: list  # dicts with the metric-log columns
    config: TrainConfig
    seconds: float = 0.0


LOG_COLUMNS = ("iteration", "l1", "ssim_loss", "opacity_loss", "total", "psnr", "wall_time")


def initial_state(scene, config: TrainConfig):
    """The random Gaussian field and flat height field a run starts from."""
    gf = random_init(config.n_gaussians, scene.aabb, config.seed, config.sh_degree, config.init_scale,
                     config.init_opacity, scene.background, config.normalized_response)
    net = None
    if config.refraction:
        net = init_flat(scene.surface_domain, scene.water_level, config.net_scale, config.seed + 1,
                        config.net_hidden, config.net_depth, config.net_bands)
    return gf, net


def surface_handle(net, config: TrainConfig, method: str = "recursive") -> SurfaceHandle:
    return SurfaceHandle(net, config.coarse_nx, config.coarse_ny, config.levels, method, config.normal_mode)


def _step_losses(image, gt, gf, weights):
    l1, g1 = loss_l1(image, gt)
    ls, gs = loss_ssim(image, gt)
    lo, go = loss_opacity(gf.opacity_logit)
    total = weights.l1 * l1 + weights.ssim * ls + weights.opacity * lo
    return (l1, ls, lo, total), weights.l1 * g1 + weights.ssim * gs, weights.opacity * go


def train(scene, config: TrainConfig, init=None, callback=None) -> TrainResult:
    """Run ``config.iterations`` steps over the scene's training views.

    Each iteration renders one full training view (round robin), evaluates
    ``l1_weight * L1 + ssim_weight * (1 - SSIM) + opacity_weight * mean(opacity^2)``,
    back-propagates through the Gaussians and (after ``net_warmup`` steps)
    the height field, and applies Adam per parameter group. ``init`` may
    supply a ``(field, net)`` pair to start from.
    """
    views = scene.train_views
    if len(views) < 2:
        raise ValueError(f"training needs at least 2 training views, scene has {len(views)}")
    gf, net = init if init is not None else initial_state(scene, config)
    gf, net = gf.copy(), (net.copy() if net is not None else None)
    if not config.refraction:
        net = None
    state = AdamState()
    lr = config.lr
    rows = []
    writer = None
    fh = None
    if config.log_path:
        fh = open(config.log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
    t0 = time.perf_counter()
    try:
        for it in range(config.iterations):
            view = views[it % len(views)]
            train_net = net is not None and it >= config.net_warmup
            surface = surface_handle(net, config) if net is not None else None
            job = RenderJob(view.camera, gf, surface, scene.refraction, train=train_net)
            out = render_forward(job)
            image = out.image
            (l1, ls, lo, total), g_img, g_op = _step_losses(image, view.image, gf, config.weights)
            if not np.isfinite(total):
                raise TrainingDivergedError(
                    f"non-finite loss at iteration {it} (view {view.name}): l1={l1}, ssim={ls}, opacity={lo}")
            grads = render_backward(job, out, g_img)
            g = grads.gaussians
            g["opacity_logit"] = g["opacity_logit"] + g_op
            for name, value in g.items():
                if not np.all(np.isfinite(value)):
                    raise TrainingDivergedError(f"non-finite gradient for {name} at iteration {it}")
            frac = it / max(config.iterations - 1, 1)
            rates = {"mu": lr.mu * lr.mu_final_factor**frac, "quat": lr.quat, "log_scale": lr.log_scale,
                     "opacity_logit": lr.opacity_logit, "sh": lr.sh}
            for name, rate in rates.items():
                adam_step(state, name, getattr(gf, name), g[name], rate)
            if train_net and grads.heightfield is not None:
                for k, (p, gp) in enumerate(zip(net.params(), grads.heightfield)):
                    adam_step(state, f"net{k}", p, gp, lr.net)
            last = it == config.iterations - 1
            if it % config.log_interval == 0 or last:
                row = {"iteration": it, "l1": l1, "ssim_loss": ls, "opacity_loss": lo, "total": total,
                       "psnr": psnr(np.clip(image, 0, 1), view.image), "wall_time": time.perf_counter() - t0}
                rows.append(row)
                if writer:
                    writer.writerow([row[c] for c in LOG_COLUMNS])
                    fh.flush()
                log.info("iter %d loss %.5f psnr %.2f", it, total, row["psnr"])
            if config.checkpoint_interval and config.checkpoint_dir and (it + 1) % config.checkpoint_interval == 0:
                from .scene_io.checkpoint import save_checkpoint

                save_checkpoint(config.checkpoint_dir, gf, net, {"iteration": it + 1})
            if callback is not None:
                callback(it, gf, net)
    finally:
        if fh:
            fh.close()
    return TrainResult(gf, net, rows, config, time.perf_counter() - t0)


def config_fields() -> list[str]:
    return [f.name for f in fields(TrainConfig)]
