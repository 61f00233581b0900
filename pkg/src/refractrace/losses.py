"""Image and opacity losses with analytic gradients."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _check(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def loss_l1(render, gt):
    """Mean absolute error over pixels and channels, and its gradient wrt ``render``."""
    render, gt = _check(render, gt)
    diff = render - gt
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


def _window():
    x = np.arange(SSIM_WINDOW) - SSIM_WINDOW // 2
    w = np.exp(-(x**2) / (2 * SSIM_SIGMA**2))
    return w / w.sum()


def _blur(img):
    # separable Gaussian with zero padding; symmetric, so it is its own adjoint
    w = _window()
    out = correlate1d(img, w, axis=0, mode="constant")
    return correlate1d(out, w, axis=1, mode="constant")


def _ssim_terms(x, y):
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {x.shape[:2]}")
    mx, my = _blur(x), _blur(y)
    exx, eyy, exy = _blur(x * x), _blur(y * y), _blur(x * y)
    A = 2 * mx * my + SSIM_C1
    B = 2 * (exy - mx * my) + SSIM_C2
    C = mx**2 + my**2 + SSIM_C1
    D = (exx - mx**2) + (eyy - my**2) + SSIM_C2
    return x, y, mx, my, A, B, C, D


def ssim_map(a, b) -> np.ndarray:
    """Per-pixel, per-channel SSIM (11x11 Gaussian window, sigma 1.5, zero padding)."""
    a, b = _check(a, b)
    _, _, _, _, A, B, C, D = _ssim_terms(a, b)
    return A * B / (C * D)


def ssim(a, b) -> float:
    """Mean of :func:`ssim_map`."""
    return float(np.mean(ssim_map(a, b)))


def loss_ssim(render, gt):
    """``1 - SSIM(render, gt)`` and its gradient wrt ``render``."""
    render, gt = _check(render, gt)
    x, y, mx, my, A, B, C, D = _ssim_terms(render, gt)
    S = A * B / (C * D)
    gS = -1.0 / S.size
    g_mu = gS * S * (2 * my / A - 2 * my / B - 2 * mx / C + 2 * mx / D)
    g_exx = gS * -S / D
    g_exy = gS * 2 * S / B
    grad = _blur(g_mu) + 2 * x * _blur(g_exx) + y * _blur(g_exy)
    return float(1.0 - S.mean()), grad.reshape(render.shape)


def loss_opacity(opacity_logit):
    """Mean squared opacity and its gradient wrt the opacity logits."""
    z = np.asarray(opacity_logit, dtype=np.float64)
    if z.size == 0:
        raise ValueError("opacity loss needs at least one Gaussian")
    a = 1.0 / (1.0 + np.exp(-z))
    return float(np.mean(a**2)), 2 * a / z.size * a * (1 - a)


def psnr(a, b) -> float:
    """PSNR in dB for images in [0, 1]; ``inf`` for identical images."""
    a, b = _check(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)
