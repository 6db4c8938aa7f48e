"""MBP-preserving forward evolution of the controlled phase field.

One step maps a state ``F_k`` to::

    f_k     = M * F_k
    V_k     = u_k chi(DM * f_k, DM^T * f_k) - v1_k (DM * f_k) - v2_k (DM^T * f_k) + I(f_k)
    F_{k+1} = g^{-1}(g(f_k) + dt g'(f_k) V_k)

so every state stays in ``[-a, 1 + a]`` whatever the controls are.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controls import MomentaField, NormalControl, momenta_to_velocity
from .fields import (ChiSpec, MbpMapSpec, ReactionSpec, chi, clamp_domain, mbp_g,
                     mbp_g_inv, mbp_g_prime, reaction)
from .grid import GridSpec, KernelSet


class NumericalError(FloatingPointError):
    def __init__(self, msg: str, step: int | None = None):
        self.step = step
        super().__init__(msg if step is None else f"{msg} (step {step})")


@dataclass(frozen=True)
class SchemeSpec:
    """Pointwise-nonlinearity parameters shared by the forward and adjoint sweeps."""

    reaction: ReactionSpec = field(default_factory=ReactionSpec)
    mbp: MbpMapSpec = field(default_factory=MbpMapSpec)
    chi: ChiSpec = field(default_factory=ChiSpec)

    def psi(self, grid: GridSpec) -> float:
        return self.chi.resolve(grid.dt)


@dataclass(frozen=True)
class Trajectory:
    """States ``F`` (T grids), smoothed fields ``f`` (T), drifts ``V`` (T-1).

    ``v1``/``v2`` hold the synthesized velocities for reuse by the adjoint.
    """

    F: np.ndarray
    f: np.ndarray
    V: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    grid: GridSpec

    @property
    def endpoint(self) -> np.ndarray:
        return self.f[-1]


def ingest_initial(image, soft: bool = False) -> np.ndarray:
    """Turn a ``{0, 1}`` grid into the initial state ``F(0)``.

    ``soft=True`` also accepts grayscale values in [0, 1].
    """
    img = np.array(image, dtype=float)
    if img.ndim != 2:
        raise ValueError(f"initial image must be 2D, got shape {img.shape}")
    if soft:
        if np.any((img < 0) | (img > 1)) or not np.all(np.isfinite(img)):
            raise ValueError("soft input must lie in [0, 1]")
    elif not np.all((img == 0) | (img == 1)):
        raise ValueError("initial image must be binary {0, 1}; pass soft=True for grayscale")
    return img


def drift(fk: np.ndarray, u_k: np.ndarray, v_k: tuple[np.ndarray, np.ndarray],
          kernels: KernelSet, scheme: SchemeSpec) -> np.ndarray:
    """Drift ``V_k`` for an already smoothed field ``f_k``."""
    gx = kernels.conv("DM", fk)
    gy = kernels.conv("DMT", fk)
    v1, v2 = v_k
    if not (u_k.shape == v1.shape == v2.shape == fk.shape):
        raise ValueError("drift operands must share one shape")
    psi = scheme.psi(kernels.grid)
    return u_k * chi(gx, gy, psi) - v1 * gx - v2 * gy + reaction(fk, scheme.reaction)


def advance(fk: np.ndarray, Vk: np.ndarray, dt: float, mbp: MbpMapSpec) -> np.ndarray:
    fc = clamp_domain(fk, mbp)
    return mbp_g_inv(mbp_g(fc, mbp, check=False) + dt * mbp_g_prime(fc, mbp, check=False) * Vk, mbp)


def step(F_k: np.ndarray, u_k: np.ndarray, v_k: tuple[np.ndarray, np.ndarray],
         kernels: KernelSet, scheme: SchemeSpec, index: int | None = None):
    """One MBP step; returns ``(F_{k+1}, f_k, V_k)``."""
    f_k = kernels.conv("M", F_k)
    V_k = drift(f_k, u_k, v_k, kernels, scheme)
    F_next = advance(f_k, V_k, kernels.grid.dt, scheme.mbp)
    if not (np.all(np.isfinite(V_k)) and np.all(np.isfinite(F_next))):
        raise NumericalError("non-finite state", index)
    return F_next, f_k, V_k


def evolve(F0: np.ndarray, u: NormalControl, m: MomentaField, kernels: KernelSet,
           scheme: SchemeSpec) -> Trajectory:
    grid = kernels.grid
    T, N = grid.T, grid.N
    if F0.shape != (N, N):
        raise ValueError(f"initial field shape {F0.shape} != {(N, N)}")
    if u.steps != T - 1 or m.steps != T - 1:
        raise ValueError(f"controls need {T - 1} slots, got u={u.steps}, m={m.steps}")
    F = np.empty((T, N, N))
    f = np.empty((T, N, N))
    V = np.empty((T - 1, N, N))
    v1 = np.empty((T - 1, N, N))
    v2 = np.empty((T - 1, N, N))
    F[0] = F0
    for k in range(T - 1):
        v1[k], v2[k] = momenta_to_velocity(m, k, kernels)
        F[k + 1], f[k], V[k] = step(F[k], u[k], (v1[k], v2[k]), kernels, scheme, index=k)
    f[T - 1] = kernels.conv("M", F[T - 1])
    for arr in (F, f, V, v1, v2):
        arr.setflags(write=False)
    return Trajectory(F, f, V, v1, v2, grid)


def evolve_uncontrolled(F0: np.ndarray, kernels: KernelSet, scheme: SchemeSpec) -> Trajectory:
    """Zero-control evolution (used for the registration target)."""
    grid = kernels.grid
    return evolve(F0, NormalControl.zeros(grid), MomentaField.zeros(grid), kernels, scheme)
