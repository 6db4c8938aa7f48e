"""Slow, independent reference implementations used as test oracles.

Everything here is written from the defining formulas with explicit loops or
dense matrices, sharing no code with the package beyond plain data.
"""
from __future__ import annotations

import math

import numpy as np


def coords(N, L):
    dx = 2 * L / (N - 1)
    return np.array([-L + dx * i for i in range(N)]), dx


def heat_kernel(N, L, tau):
    x, dx = coords(N, L)
    M = np.empty((N, N))
    for i in range(N):
        for j in range(N):
            M[i, j] = dx * dx * math.exp(-(x[i] ** 2 + x[j] ** 2) / (2 * tau * tau)) / (2 * math.pi * tau * tau)
    return M


def gaussian_mass(N, L, tau):
    """Riemann sum of the unit 2D Gaussian over the grid cells of ``[-L, L]^2``."""
    x, dx = coords(N, L)
    g = np.exp(-x ** 2 / (2 * tau * tau)) / math.sqrt(2 * math.pi * tau * tau)
    return float((g.sum() * dx) ** 2)


def direct_convolve(kernel, fld):
    """Same-size central slice of the zero-padded linear convolution, by nested loops."""
    K = np.asarray(kernel, float)
    h = np.asarray(fld, float)
    N = h.shape[0]
    ck = K.shape[0] // 2
    out = np.zeros_like(h)
    for i in range(N):
        for j in range(N):
            s = 0.0
            for k in range(N):
                for l in range(N):
                    a, b = i - k + ck, j - l + ck
                    if 0 <= a < K.shape[0] and 0 <= b < K.shape[1]:
                        s += K[a, b] * h[k, l]
            out[i, j] = s
    return out


def reaction(xi, W):
    return W * xi ** 2 * (xi - 1) ** 2 * (xi - 0.5) if 0 <= xi <= 1 else 0.0


def u_norm_p(u, dx, dt, p, r):
    total = 0.0
    for k in range(u.shape[0]):
        s = 0.0
        for i in range(u.shape[1]):
            for j in range(u.shape[2]):
                s += abs(u[k, i, j]) ** r
        total += (dx * dx * s) ** (p / r)
    return dt * total


def rkhs_quadratic_form(m, N, L, width):
    """``sum_{ab,cd} m_ab kappa(|x_ab - x_cd|) m_cd`` with a dense Gram matrix."""
    x, _ = coords(N, L)
    pts = np.array([(x[i], x[j]) for i in range(N) for j in range(N)])
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    G = np.exp(-d2 / (2 * width * width))
    v = np.asarray(m, float).ravel()
    return float(v @ G @ v)


def collocation_velocity(m, N, L, width):
    """``v(x_ab) = sum_cd kappa(|x_ab - x_cd|) m_cd`` by explicit summation."""
    x, _ = coords(N, L)
    out = np.zeros((N, N))
    for a in range(N):
        for b in range(N):
            s = 0.0
            for c in range(N):
                for d in range(N):
                    if m[c, d] != 0:
                        rho2 = (x[a] - x[c]) ** 2 + (x[b] - x[d]) ** 2
                        s += math.exp(-rho2 / (2 * width * width)) * m[c, d]
            out[a, b] = s
    return out


def central_difference(fun, x, direction, h):
    return (fun(x + h * direction) - fun(x - h * direction)) / (2 * h)


def polygon_area(pts):
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, 1)) - np.dot(y, np.roll(x, 1)))


def step_tangent(F, u, m1, m2, dF, du, dm1, dm2, kernels, scheme):
    """Exact forward-mode derivative of one MBP step (tangent-linear model).

    Derived by hand from ``F' = ginv(g(fc) + dt g'(fc) V)`` with ``fc`` the
    clamped smoothed state; independent of the reverse-mode sweep.
    """
    from phasereg.fields import (chi, clamp_domain, mbp_g, mbp_g_inv_prime, mbp_g_prime,
                                 mbp_g_second, reaction, reaction_prime)
    g = kernels.grid
    dt = g.dt
    mbp = scheme.mbp
    psi = scheme.psi(g)
    f = kernels.conv("M", F)
    df = kernels.conv("M", dF)
    gx, gy = kernels.conv("DM", f), kernels.conv("DMT", f)
    dgx, dgy = kernels.conv("DM", df), kernels.conv("DMT", df)
    c = chi(gx, gy, psi)
    dc = (gx * dgx + gy * dgy) / c
    v1, v2 = kernels.conv("Ktilde", m1), kernels.conv("Ktilde", m2)
    dv1, dv2 = kernels.conv("Ktilde", dm1), kernels.conv("Ktilde", dm2)
    V = u * c - v1 * gx - v2 * gy + reaction(f, scheme.reaction)
    dV = (du * c + u * dc - dv1 * gx - v1 * dgx - dv2 * gy - v2 * dgy
          + reaction_prime(f, scheme.reaction) * df)
    fc = clamp_domain(f, mbp)
    dfc = np.where(fc == f, df, 0.0)
    gp = mbp_g_prime(fc, mbp, check=False)
    y = mbp_g(fc, mbp, check=False) + dt * gp * V
    dy = gp * dfc + dt * mbp_g_second(fc, mbp, check=False) * dfc * V + dt * gp * dV
    return mbp_g_inv_prime(y, mbp) * dy
