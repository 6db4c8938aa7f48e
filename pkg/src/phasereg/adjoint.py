"""Endpoint misfit, backward costate sweep and exact gradients of the objective.

Sign convention: the costate is the plain reverse-mode cotangent of the state,
``lam[T-1] = dU/dF(T-1)`` and ``lam[k] = (dF(k+1)/dF(k))^* lam[k+1]``, so the
control gradient is the norm derivative *plus* the transported term.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controls import (MomentaField, NormalControl, NormPowers, u_norm_p, u_norm_p_grad,
                       v_cost, v_cost_grad)
from .fields import (chi, clamp_domain, mbp_g, mbp_g_inv_prime, mbp_g_prime,
                     mbp_g_second, reaction_prime)
from .forward import SchemeSpec, Trajectory, evolve
from .grid import KernelSet


@dataclass(frozen=True)
class GradientPair:
    grad_u: np.ndarray
    grad_m1: np.ndarray
    grad_m2: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.grad_u.ravel(), self.grad_m1.ravel(), self.grad_m2.ravel()])


@dataclass(frozen=True)
class Objective:
    """Value of ``E`` split into its parts, with the trajectory that produced it."""

    E: float
    control_u: float
    control_v: float
    endpoint: float
    trajectory: Trajectory


# --- endpoint misfit -------------------------------------------------------

def _endpoint_parts(fT, f_target_T, kernels: KernelSet):
    delta = np.asarray(fT, dtype=float) - np.asarray(f_target_T, dtype=float)
    return delta, kernels.conv("DM", delta), kernels.conv("DMT", delta)


def endpoint_cost(fT, f_target_T, powers: NormPowers, C_end: float, kernels: KernelSet) -> float:
    """Discrete ``W^{1,r*}`` misfit ``C_end dx^2 sum(|d|^r* + |D1 d|^r* + |D2 d|^r*)``."""
    rs = powers.rstar
    parts = _endpoint_parts(fT, f_target_T, kernels)
    dx2 = kernels.grid.dx ** 2
    return float(C_end * dx2 * sum(np.sum(np.abs(a) ** rs) for a in parts))


def _dpow(a: np.ndarray, rs: float) -> np.ndarray:
    return rs * np.abs(a) ** (rs - 1.0) * np.sign(a)


def endpoint_cost_grad_f(fT, f_target_T, powers: NormPowers, C_end: float,
                         kernels: KernelSet) -> np.ndarray:
    """Gradient of the misfit with respect to the smoothed endpoint ``f(T)``."""
    rs = powers.rstar
    d, g1, g2 = _endpoint_parts(fT, f_target_T, kernels)
    c = C_end * kernels.grid.dx ** 2
    return c * (_dpow(d, rs) + kernels.conv_adj("DM", _dpow(g1, rs))
                + kernels.conv_adj("DMT", _dpow(g2, rs)))


def endpoint_cost_grad(fT, f_target_T, powers: NormPowers, C_end: float,
                       kernels: KernelSet) -> np.ndarray:
    """Gradient of the misfit with respect to the raw state ``F(T)`` (``f(T) = M * F(T)``)."""
    return kernels.conv_adj("M", endpoint_cost_grad_f(fT, f_target_T, powers, C_end, kernels))


# --- one backward step ------------------------------------------------------

def step_adjoint(lam_next: np.ndarray, F_k: np.ndarray, f_k: np.ndarray, V_k: np.ndarray,
                 u_k: np.ndarray, v_k: tuple[np.ndarray, np.ndarray], kernels: KernelSet,
                 scheme: SchemeSpec):
    """Transpose of the Jacobian of one forward step.

    Returns ``(lam_k, gbar_u, gbar_m1, gbar_m2)``: cotangents of ``F_k``,
    ``u_k`` and the two momenta slots.  ``F_k`` is accepted for interface
    symmetry; everything needed is recomputed from ``f_k``.
    """
    if lam_next is None or f_k is None or V_k is None:
        raise ValueError("step_adjoint needs the cached forward values")
    grid = kernels.grid
    dt = grid.dt
    mbp = scheme.mbp
    v1, v2 = v_k
    fc = clamp_domain(f_k, mbp)
    gp = mbp_g_prime(fc, mbp, check=False)
    y = mbp_g(fc, mbp, check=False) + dt * gp * V_k
    ybar = lam_next * mbp_g_inv_prime(y, mbp)

    Vbar = ybar * dt * gp
    # the safety clamp in front of g has zero derivative where it is active
    fbar = np.where(fc == f_k, ybar * (gp + dt * mbp_g_second(fc, mbp, check=False) * V_k), 0.0)

    gx = kernels.conv("DM", f_k)
    gy = kernels.conv("DMT", f_k)
    c = chi(gx, gy, scheme.psi(grid))
    gbar_u = Vbar * c
    gbar_m1 = kernels.conv_adj("Ktilde", -Vbar * gx)
    gbar_m2 = kernels.conv_adj("Ktilde", -Vbar * gy)

    gxbar = Vbar * (u_k * gx / c - v1)
    gybar = Vbar * (u_k * gy / c - v2)
    fbar = fbar + Vbar * reaction_prime(f_k, scheme.reaction)
    fbar = fbar + kernels.conv_adj("DM", gxbar) + kernels.conv_adj("DMT", gybar)
    lam_k = kernels.conv_adj("M", fbar)
    return lam_k, gbar_u, gbar_m1, gbar_m2


# --- full objective and gradient ----------------------------------------------

def objective(F0: np.ndarray, u: NormalControl, m: MomentaField, f_target_T: np.ndarray,
              powers: NormPowers, C_top: float, C_end: float, kernels: KernelSet,
              scheme: SchemeSpec) -> Objective:
    traj = evolve(F0, u, m, kernels, scheme)
    return _objective_from(traj, u, m, f_target_T, powers, C_top, C_end, kernels)


def backward(traj: Trajectory, u: NormalControl, f_target_T: np.ndarray, powers: NormPowers,
             C_end: float, kernels: KernelSet, scheme: SchemeSpec):
    """Costate sweep.  Returns ``(lam, gbar_u, gbar_m1, gbar_m2)`` (adjoint terms only)."""
    grid = kernels.grid
    T = grid.T
    lam = np.empty((T,) + traj.F.shape[1:])
    gu = np.zeros((T - 1,) + traj.F.shape[1:])
    g1 = np.zeros_like(gu)
    g2 = np.zeros_like(gu)
    lam[T - 1] = endpoint_cost_grad(traj.endpoint, f_target_T, powers, C_end, kernels)
    for k in range(T - 2, -1, -1):
        lam[k], gu[k], g1[k], g2[k] = step_adjoint(
            lam[k + 1], traj.F[k], traj.f[k], traj.V[k], u[k], (traj.v1[k], traj.v2[k]),
            kernels, scheme)
    # slot 0 is held at zero
    gu[0] = g1[0] = g2[0] = 0.0
    return lam, gu, g1, g2


def gradient(F0: np.ndarray, u: NormalControl, m: MomentaField, f_target_T: np.ndarray,
             powers: NormPowers, C_top: float, C_end: float, kernels: KernelSet,
             scheme: SchemeSpec, trajectory: Trajectory | None = None):
    """Objective value and its exact gradient with respect to ``(u, m1, m2)``.

    Returns ``(Objective, GradientPair)``.  A precomputed ``trajectory`` for
    the same controls may be passed to skip the forward sweep.
    """
    grid = kernels.grid
    if f_target_T.shape != (grid.N, grid.N):
        raise ValueError(f"target shape {f_target_T.shape} != {(grid.N, grid.N)}")
    if trajectory is None:
        obj = objective(F0, u, m, f_target_T, powers, C_top, C_end, kernels, scheme)
    else:
        obj = _objective_from(trajectory, u, m, f_target_T, powers, C_top, C_end, kernels)
    _, gu, g1, g2 = backward(obj.trajectory, u, f_target_T, powers, C_end, kernels, scheme)
    nu = C_top * u_norm_p_grad(u, powers, grid)
    n1, n2 = v_cost_grad(m, powers, kernels)
    gu = gu + nu
    g1 = g1 + n1
    g2 = g2 + n2
    gu[0] = g1[0] = g2[0] = 0.0
    return obj, GradientPair(gu, g1, g2)


def _objective_from(traj, u, m, f_target_T, powers, C_top, C_end, kernels) -> Objective:
    cu = C_top * u_norm_p(u, powers, kernels.grid)
    cv = v_cost(m, powers, kernels)
    ce = endpoint_cost(traj.endpoint, f_target_T, powers, C_end, kernels)
    return Objective(cu + cv + ce, cu, cv, ce, traj)
