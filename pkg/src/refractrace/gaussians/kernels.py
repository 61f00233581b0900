"""Numba kernels for Gaussian ray tracing.

Per-sample math lives in small ``@njit`` helpers used both by the batched
render kernels and by the single-ray functions in :mod:`.ops`.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ..surface.bvh import ray_box

ALPHA_MAX = 0.999
ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-3
T_EPS = 1e-6

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
         -0.4570457994644658, 1.445305721320277, -0.5900435899266435)


# ---------------------------------------------------------------- spherical harmonics

@njit(cache=True)
def sh_basis(k_count, d, out):
    x, y, z = d[0], d[1], d[2]
    xx, yy, zz = x * x, y * y, z * z
    out[0] = SH_C0
    if k_count > 1:
        out[1] = -SH_C1 * y
        out[2] = SH_C1 * z
        out[3] = -SH_C1 * x
    if k_count > 4:
        out[4] = SH_C2[0] * x * y
        out[5] = SH_C2[1] * y * z
        out[6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[7] = SH_C2[3] * x * z
        out[8] = SH_C2[4] * (xx - yy)
    if k_count > 9:
        out[9] = SH_C3[0] * y * (3.0 * xx - yy)
        out[10] = SH_C3[1] * x * y * z
        out[11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        out[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        out[14] = SH_C3[5] * z * (xx - yy)
        out[15] = SH_C3[6] * x * (xx - 3.0 * yy)


@njit(cache=True)
def sh_basis_grad(k_count, d, g):
    """``g[k]`` = gradient of basis function ``k`` wrt the direction components."""
    x, y, z = d[0], d[1], d[2]
    xx, yy, zz = x * x, y * y, z * z
    g[:k_count] = 0.0
    if k_count > 1:
        g[1, 1] = -SH_C1
        g[2, 2] = SH_C1
        g[3, 0] = -SH_C1
    if k_count > 4:
        g[4, 0] = SH_C2[0] * y
        g[4, 1] = SH_C2[0] * x
        g[5, 1] = SH_C2[1] * z
        g[5, 2] = SH_C2[1] * y
        g[6, 0] = -2.0 * SH_C2[2] * x
        g[6, 1] = -2.0 * SH_C2[2] * y
        g[6, 2] = 4.0 * SH_C2[2] * z
        g[7, 0] = SH_C2[3] * z
        g[7, 2] = SH_C2[3] * x
        g[8, 0] = 2.0 * SH_C2[4] * x
        g[8, 1] = -2.0 * SH_C2[4] * y
    if k_count > 9:
        g[9, 0] = SH_C3[0] * 6.0 * x * y
        g[9, 1] = SH_C3[0] * (3.0 * xx - 3.0 * yy)
        g[10, 0] = SH_C3[1] * y * z
        g[10, 1] = SH_C3[1] * x * z
        g[10, 2] = SH_C3[1] * x * y
        g[11, 0] = SH_C3[2] * -2.0 * x * y
        g[11, 1] = SH_C3[2] * (4.0 * zz - xx - 3.0 * yy)
        g[11, 2] = SH_C3[2] * 8.0 * y * z
        g[12, 0] = SH_C3[3] * -6.0 * x * z
        g[12, 1] = SH_C3[3] * -6.0 * y * z
        g[12, 2] = SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
        g[13, 0] = SH_C3[4] * (4.0 * zz - 3.0 * xx - yy)
        g[13, 1] = SH_C3[4] * -2.0 * x * y
        g[13, 2] = SH_C3[4] * 8.0 * x * z
        g[14, 0] = SH_C3[5] * 2.0 * x * z
        g[14, 1] = SH_C3[5] * -2.0 * y * z
        g[14, 2] = SH_C3[5] * (xx - yy)
        g[15, 0] = SH_C3[6] * (3.0 * xx - 3.0 * yy)
        g[15, 1] = SH_C3[6] * -6.0 * x * y


@njit(cache=True)
def sh_color(sh, d, basis, out):
    k_count = sh.shape[0]
    sh_basis(k_count, d, basis)
    for c in range(3):
        acc = 0.5
        for k in range(k_count):
            acc += basis[k] * sh[k, c]
        out[c] = acc


@njit(cache=True)
def sh_color_backward(sh, d, g_c, basis, bgrad, g_sh, g_d):
    """Accumulate coefficient and direction gradients into ``g_sh`` and ``g_d``."""
    k_count = sh.shape[0]
    sh_basis(k_count, d, basis)
    sh_basis_grad(k_count, d, bgrad)
    for k in range(k_count):
        s = 0.0
        for c in range(3):
            g_sh[k, c] += basis[k] * g_c[c]
            s += sh[k, c] * g_c[c]
        for a in range(3):
            g_d[a] += s * bgrad[k, a]


# ---------------------------------------------------------------- response

@njit(cache=True)
def canonical(M, mu, o, d, pg, dg):
    for a in range(3):
        pa = 0.0
        da = 0.0
        for b in range(3):
            pa += M[a, b] * (o[b] - mu[b])
            da += M[a, b] * d[b]
        pg[a] = pa
        dg[a] = da


@njit(cache=True)
def response(M, mu, opac, o, d, normalized, pg, dg):
    """Returns ``(t_max, alpha, unclamped_alpha)`` of the maximum response along the ray."""
    canonical(M, mu, o, d, pg, dg)
    pp = pg[0] * pg[0] + pg[1] * pg[1] + pg[2] * pg[2]
    dd = dg[0] * dg[0] + dg[1] * dg[1] + dg[2] * dg[2]
    pd = pg[0] * dg[0] + pg[1] * dg[1] + pg[2] * dg[2]
    q = max(pp * dd - pd * pd, 0.0)  # |pg x dg|^2
    if normalized:
        q /= dd
    raw = opac * np.exp(-0.5 * q)
    return -pd / dd, min(raw, ALPHA_MAX), raw


@njit(cache=True)
def response_backward(M, mu, opac, o, d, normalized, g_alpha, pg, dg, g_mu, g_M, g_o, g_d):
    """Accumulate gradients of ``alpha`` into the given buffers; returns ``dL/dlogit(opacity)``."""
    t, alpha, raw = response(M, mu, opac, o, d, normalized, pg, dg)
    if raw >= ALPHA_MAX or g_alpha == 0.0:
        return 0.0
    pp = pg[0] * pg[0] + pg[1] * pg[1] + pg[2] * pg[2]
    dd = dg[0] * dg[0] + dg[1] * dg[1] + dg[2] * dg[2]
    pd = pg[0] * dg[0] + pg[1] * dg[1] + pg[2] * dg[2]
    g_q = -0.5 * alpha * g_alpha
    qw = pp * dd - pd * pd
    scale = g_q / dd if normalized else g_q
    # gradients of q wrt pg and dg, scaled by dL/dq
    gp0 = 2.0 * (dd * pg[0] - pd * dg[0]) * scale
    gp1 = 2.0 * (dd * pg[1] - pd * dg[1]) * scale
    gp2 = 2.0 * (dd * pg[2] - pd * dg[2]) * scale
    gd0 = 2.0 * (pp * dg[0] - pd * pg[0]) * scale
    gd1 = 2.0 * (pp * dg[1] - pd * pg[1]) * scale
    gd2 = 2.0 * (pp * dg[2] - pd * pg[2]) * scale
    if normalized:
        k = 2.0 * g_q * qw / (dd * dd)
        gd0 -= k * dg[0]
        gd1 -= k * dg[1]
        gd2 -= k * dg[2]
    for b in range(3):
        so = M[0, b] * gp0 + M[1, b] * gp1 + M[2, b] * gp2
        sd = M[0, b] * gd0 + M[1, b] * gd1 + M[2, b] * gd2
        g_o[b] += so
        g_mu[b] -= so
        g_d[b] += sd
        ob = o[b] - mu[b]
        g_M[0, b] += gp0 * ob + gd0 * d[b]
        g_M[1, b] += gp1 * ob + gd1 * d[b]
        g_M[2, b] += gp2 * ob + gd2 * d[b]
    return g_alpha * alpha * (1.0 - opac)


# ---------------------------------------------------------------- gathering

@njit(cache=True)
def gather(o, d, M, mu, opac, glo, ghi, lo, hi, left, right, start, count, perm, normalized,
           alpha_min, t_eps, idx_buf, t_buf, a_buf, stack, pg, dg):
    """Fill the buffers with samples sorted by (t_max, index); returns their count."""
    n = 0
    sp = 1
    stack[0] = 0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        e0, e1 = ray_box(o[0], o[1], o[2], d[0], d[1], d[2], lo[node], hi[node], np.inf)
        if e0 > e1:
            continue
        if left[node] < 0:
            for k in range(start[node], start[node] + count[node]):
                g = perm[k]
                b0, b1 = ray_box(o[0], o[1], o[2], d[0], d[1], d[2], glo[g], ghi[g], np.inf)
                if b0 > b1:
                    continue
                t, alpha, raw = response(M[g], mu[g], opac[g], o, d, normalized, pg, dg)
                if alpha < alpha_min or t <= t_eps:
                    continue
                # insertion keeps (t, index) order
                j = n
                while j > 0 and (t_buf[j - 1] > t or (t_buf[j - 1] == t and idx_buf[j - 1] > g)):
                    t_buf[j] = t_buf[j - 1]
                    idx_buf[j] = idx_buf[j - 1]
                    a_buf[j] = a_buf[j - 1]
                    j -= 1
                t_buf[j] = t
                idx_buf[j] = g
                a_buf[j] = alpha
                n += 1
        else:
            stack[sp] = right[node]
            stack[sp + 1] = left[node]
            sp += 2
    return n


@njit(cache=True)
def render_rays(O, D, M, mu, opac, sh, glo, ghi, lo, hi, left, right, start, count, perm, bg,
                normalized, alpha_min, t_min, t_eps):
    R = O.shape[0]
    N = mu.shape[0]
    color = np.zeros((R, 3))
    t_final = np.ones(R)
    n_used = np.zeros(R, dtype=np.int64)
    idx_buf = np.empty(N, dtype=np.int64)
    t_buf = np.empty(N)
    a_buf = np.empty(N)
    stack = np.empty(256, dtype=np.int64)
    pg = np.empty(3)
    dg = np.empty(3)
    basis = np.empty(16)
    c = np.empty(3)
    for r in range(R):
        o = O[r]
        d = D[r]
        n = gather(o, d, M, mu, opac, glo, ghi, lo, hi, left, right, start, count, perm, normalized,
                   alpha_min, t_eps, idx_buf, t_buf, a_buf, stack, pg, dg)
        T = 1.0
        used = 0
        for s in range(n):
            g = idx_buf[s]
            a = a_buf[s]
            sh_color(sh[g], d, basis, c)
            for ch in range(3):
                color[r, ch] += T * a * c[ch]
            T *= 1.0 - a
            used += 1
            if T < t_min:
                break
        for ch in range(3):
            color[r, ch] += T * bg[ch]
        t_final[r] = T
        n_used[r] = used
    return color, t_final, n_used


@njit(cache=True)
def render_rays_backward(O, D, M, mu, opac, sh, glo, ghi, lo, hi, left, right, start, count, perm, bg,
                         normalized, alpha_min, t_min, t_eps, color, g_color,
                         g_mu, g_M, g_logit, g_sh, g_o, g_d):
    R = O.shape[0]
    N = mu.shape[0]
    idx_buf = np.empty(N, dtype=np.int64)
    t_buf = np.empty(N)
    a_buf = np.empty(N)
    stack = np.empty(256, dtype=np.int64)
    pg = np.empty(3)
    dg = np.empty(3)
    basis = np.empty(16)
    bgrad = np.empty((16, 3))
    c = np.empty(3)
    gc = np.empty(3)
    for r in range(R):
        gC = g_color[r]
        if gC[0] == 0.0 and gC[1] == 0.0 and gC[2] == 0.0:
            continue
        o = O[r]
        d = D[r]
        n = gather(o, d, M, mu, opac, glo, ghi, lo, hi, left, right, start, count, perm, normalized,
                   alpha_min, t_eps, idx_buf, t_buf, a_buf, stack, pg, dg)
        T = 1.0
        acc0 = 0.0
        acc1 = 0.0
        acc2 = 0.0
        for s in range(n):
            g = idx_buf[s]
            a = a_buf[s]
            sh_color(sh[g], d, basis, c)
            acc0 += T * a * c[0]
            acc1 += T * a * c[1]
            acc2 += T * a * c[2]
            # everything behind this sample, background included
            rest0 = color[r, 0] - acc0
            rest1 = color[r, 1] - acc1
            rest2 = color[r, 2] - acc2
            g_alpha = (gC[0] * (T * c[0] - rest0 / (1.0 - a)) + gC[1] * (T * c[1] - rest1 / (1.0 - a))
                       + gC[2] * (T * c[2] - rest2 / (1.0 - a)))
            for ch in range(3):
                gc[ch] = gC[ch] * a * T
            sh_color_backward(sh[g], d, gc, basis, bgrad, g_sh[g], g_d[r])
            g_logit[g] += response_backward(M[g], mu[g], opac[g], o, d, normalized, g_alpha, pg, dg,
                                            g_mu[g], g_M[g], g_o[r], g_d[r])
            T *= 1.0 - a
            if T < t_min:
                break
