"""Pointwise nonlinearities: reaction term, smoothed gradient magnitude, MBP map."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

DOMAIN_SLACK = 1e-14


@dataclass(frozen=True)
class ReactionSpec:
    W: float = 100.0

    def __post_init__(self):
        if not self.W >= 0:
            raise ValueError(f"W must be >= 0, got {self.W}")


@dataclass(frozen=True)
class MbpMapSpec:
    """Logit-like map ``g`` on ``(-a, 1 + a)``."""

    a: float = 0.01
    mu: float = 0.05

    def __post_init__(self):
        if not self.a >= 0:
            raise ValueError(f"a must be >= 0, got {self.a}")
        if not self.mu > 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")

    @property
    def lower(self) -> float:
        return -self.a

    @property
    def upper(self) -> float:
        return 1.0 + self.a


@dataclass(frozen=True)
class ChiSpec:
    """Smoothing floor for ``chi``.

    With ``psi=None`` the floor follows the time step: ``psi^2 = dt * eps``.
    """

    psi: float | None = None
    eps: float = 1e-16

    def resolve(self, dt: float) -> float:
        if self.psi is not None:
            if not self.psi > 0:
                raise ValueError(f"psi must be > 0, got {self.psi}")
            return float(self.psi)
        return math.sqrt(dt * self.eps)


class DomainError(ValueError):
    """An argument of ``g`` left the open interval ``(-a, 1 + a)``."""

    def __init__(self, index, value, spec: MbpMapSpec):
        self.index = index
        self.value = value
        super().__init__(
            f"value {value!r} at index {index} outside ({-spec.a}, {1 + spec.a})"
        )


def reaction(xi, spec: ReactionSpec = ReactionSpec()):
    """``W xi^2 (xi-1)^2 (xi-1/2)`` on [0, 1], zero elsewhere."""
    xi = np.asarray(xi, dtype=float)
    inside = (xi >= 0.0) & (xi <= 1.0)
    val = spec.W * xi**2 * (xi - 1.0) ** 2 * (xi - 0.5)
    out = np.where(inside, val, 0.0)
    return out if out.ndim else float(out)


def reaction_prime(xi, spec: ReactionSpec = ReactionSpec()):
    xi = np.asarray(xi, dtype=float)
    inside = (xi >= 0.0) & (xi <= 1.0)
    q = xi * (xi - 1.0)
    # d/dxi [q^2 (xi - 1/2)] with dq/dxi = 2 xi - 1
    val = spec.W * (2.0 * q * (2.0 * xi - 1.0) * (xi - 0.5) + q * q)
    out = np.where(inside, val, 0.0)
    return out if out.ndim else float(out)


def _same_shape(gx, gy):
    gx = np.asarray(gx, dtype=float)
    gy = np.asarray(gy, dtype=float)
    if gx.shape != gy.shape:
        raise ValueError(f"shape mismatch: {gx.shape} vs {gy.shape}")
    return gx, gy


def chi(gx, gy, psi: float):
    gx, gy = _same_shape(gx, gy)
    return np.sqrt(gx * gx + gy * gy + psi * psi)


def chi_grad(gx, gy, psi: float):
    gx, gy = _same_shape(gx, gy)
    c = np.sqrt(gx * gx + gy * gy + psi * psi)
    return gx / c, gy / c


def _check_domain(x: np.ndarray, spec: MbpMapSpec) -> None:
    lo = -spec.a + DOMAIN_SLACK
    hi = 1.0 + spec.a - DOMAIN_SLACK
    bad = ~((x >= lo) & (x <= hi))
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0]) if x.ndim else ()
        raise DomainError(idx, float(x[idx]) if x.ndim else float(x), spec)


def clamp_domain(x, spec: MbpMapSpec):
    """Clip into ``[-a + 1e-14, 1 + a - 1e-14]`` before evaluating ``g``."""
    return np.clip(x, -spec.a + DOMAIN_SLACK, 1.0 + spec.a - DOMAIN_SLACK)


def mbp_g(x, spec: MbpMapSpec = MbpMapSpec(), check: bool = True):
    x = np.asarray(x, dtype=float)
    if check:
        _check_domain(x, spec)
    return 0.5 + spec.mu * (np.log(x + spec.a) - np.log(1.0 + spec.a - x))


def mbp_g_prime(x, spec: MbpMapSpec = MbpMapSpec(), check: bool = True):
    x = np.asarray(x, dtype=float)
    if check:
        _check_domain(x, spec)
    return spec.mu * (1.0 + 2.0 * spec.a) / ((x + spec.a) * (1.0 + spec.a - x))


def mbp_g_second(x, spec: MbpMapSpec = MbpMapSpec(), check: bool = True):
    x = np.asarray(x, dtype=float)
    if check:
        _check_domain(x, spec)
    return spec.mu * (1.0 / (1.0 + spec.a - x) ** 2 - 1.0 / (x + spec.a) ** 2)


def mbp_g_inv(y, spec: MbpMapSpec = MbpMapSpec()):
    """Inverse of ``g``; maps every real into ``[-a, 1 + a]``."""
    s = expit((np.asarray(y, dtype=float) - 0.5) / spec.mu)
    return (1.0 + 2.0 * spec.a) * s - spec.a


def mbp_g_inv_prime(y, spec: MbpMapSpec = MbpMapSpec()):
    """Derivative of ``g^{-1}`` at ``y``, evaluated without dividing by ``g'``."""
    s = expit((np.asarray(y, dtype=float) - 0.5) / spec.mu)
    return (1.0 + 2.0 * spec.a) * s * (1.0 - s) / spec.mu
