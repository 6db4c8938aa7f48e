"""Control containers (normal speed ``u``, momenta ``m``), their norms and I/O.

Both families hold ``T - 1`` time slots of ``N x N`` grids.  Slot ``k`` drives
the step from time node ``k`` to ``k + 1``; slot 0 is always zero, so the first
step is an uncontrolled Allen-Cahn step.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .grid import GridSpec, KernelSet


class NonPositiveKernelWarning(UserWarning):
    """The RKHS quadratic form came out negative (kernel not positive definite)."""


def _as_slots(a, name: str) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise ValueError(f"{name} must have shape (T-1, N, N), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    a[0] = 0.0
    a.setflags(write=False)
    return a


@dataclass(frozen=True, init=False)
class NormalControl:
    coeffs: np.ndarray

    def __init__(self, coeffs):
        object.__setattr__(self, "coeffs", _as_slots(coeffs, "u"))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "NormalControl":
        return cls(np.zeros((grid.T - 1, grid.N, grid.N)))

    @property
    def steps(self) -> int:
        return self.coeffs.shape[0]

    def __getitem__(self, k: int) -> np.ndarray:
        return self.coeffs[k]


@dataclass(frozen=True, init=False)
class MomentaField:
    m1: np.ndarray
    m2: np.ndarray

    def __init__(self, m1, m2):
        m1 = _as_slots(m1, "m1")
        m2 = _as_slots(m2, "m2")
        if m1.shape != m2.shape:
            raise ValueError(f"m1 {m1.shape} and m2 {m2.shape} differ")
        object.__setattr__(self, "m1", m1)
        object.__setattr__(self, "m2", m2)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "MomentaField":
        z = np.zeros((grid.T - 1, grid.N, grid.N))
        return cls(z, z)

    @property
    def steps(self) -> int:
        return self.m1.shape[0]


@dataclass(frozen=True)
class NormPowers:
    """Time exponent ``p`` and space exponent ``r`` of the control norms (d = 2)."""

    p: float = 4.0
    r: float = 6.0

    def __post_init__(self):
        if not self.p > 2:
            raise ValueError(f"p must be > 2, got {self.p}")
        if not self.r > 2 * self.p / (self.p - 2):
            raise ValueError(f"r must exceed 2p/(p-2) = {2 * self.p / (self.p - 2)}, got {self.r}")

    @property
    def rstar(self) -> float:
        return self.r / (self.r - 1.0)


# --- norms -----------------------------------------------------------------

def _u_slot_sums(u: NormalControl, powers: NormPowers, grid: GridSpec) -> np.ndarray:
    return grid.dx**2 * np.sum(np.abs(u.coeffs) ** powers.r, axis=(1, 2))


def u_norm_p(u: NormalControl, powers: NormPowers, grid: GridSpec) -> float:
    """``dt * sum_k (dx^2 sum_ij |u^k_ij|^r)^(p/r)``."""
    S = _u_slot_sums(u, powers, grid)
    return float(grid.dt * np.sum(S ** (powers.p / powers.r)))


def u_norm_p_grad(u: NormalControl, powers: NormPowers, grid: GridSpec) -> np.ndarray:
    p, r = powers.p, powers.r
    S = _u_slot_sums(u, powers, grid)
    with np.errstate(divide="ignore"):
        scale = np.where(S > 0, S ** ((p - r) / r), 0.0)
    a = np.abs(u.coeffs)
    return p * grid.dt * grid.dx**2 * scale[:, None, None] * a ** (r - 2) * u.coeffs


def momenta_to_velocity(m: MomentaField, k: int, kernels: KernelSet) -> tuple[np.ndarray, np.ndarray]:
    """Velocity components ``v^(n) = Ktilde * m^(n)`` at slot ``k``."""
    if not 0 <= k < m.steps:
        raise IndexError(f"time slot {k} out of range [0, {m.steps})")
    return kernels.conv("Ktilde", m.m1[k]), kernels.conv("Ktilde", m.m2[k])


def _v_norm_sq(m1k, m2k, v1, v2) -> float:
    q = float(np.vdot(m1k, v1) + np.vdot(m2k, v2))
    if q < -1e-10:
        warnings.warn(f"negative RKHS norm {q:.3e}", NonPositiveKernelWarning, stacklevel=3)
    return q


def v_norm_sq(m: MomentaField, k: int, kernels: KernelSet) -> float:
    v1, v2 = momenta_to_velocity(m, k, kernels)
    return _v_norm_sq(m.m1[k], m.m2[k], v1, v2)


def v_cost(m: MomentaField, powers: NormPowers, kernels: KernelSet) -> float:
    """``dt * sum_k (|v_k|_V^2)^(p/2)``."""
    dt = kernels.grid.dt
    total = 0.0
    for k in range(m.steps):
        q = max(v_norm_sq(m, k, kernels), 0.0)
        total += q ** (powers.p / 2)
    return dt * total


def v_cost_grad(m: MomentaField, powers: NormPowers, kernels: KernelSet) -> tuple[np.ndarray, np.ndarray]:
    dt = kernels.grid.dt
    p = powers.p
    g1 = np.zeros_like(m.m1)
    g2 = np.zeros_like(m.m2)
    for k in range(m.steps):
        v1, v2 = momenta_to_velocity(m, k, kernels)
        q = max(_v_norm_sq(m.m1[k], m.m2[k], v1, v2), 0.0)
        c = p * dt * q ** ((p - 2) / 2)
        g1[k] = c * v1
        g2[k] = c * v2
    return g1, g2


def running_cost(u: NormalControl, m: MomentaField, powers: NormPowers, C_top: float,
                 grid: GridSpec, kernels: KernelSet) -> float:
    return C_top * u_norm_p(u, powers, grid) + v_cost(m, powers, kernels)


# --- stacking ----------------------------------------------------------------

def stack_controls(u: NormalControl, m: MomentaField) -> np.ndarray:
    """Flatten to one vector: all ``u`` slots, then ``m1``, then ``m2``, time-major."""
    return np.concatenate([u.coeffs.ravel(), m.m1.ravel(), m.m2.ravel()])


def unstack_controls(x: np.ndarray, grid: GridSpec) -> tuple[NormalControl, MomentaField]:
    shape = (grid.T - 1, grid.N, grid.N)
    n = int(np.prod(shape))
    x = np.asarray(x, dtype=float)
    if x.size != 3 * n:
        raise ValueError(f"control vector has {x.size} entries, expected {3 * n}")
    return (NormalControl(x[:n].reshape(shape)),
            MomentaField(x[n : 2 * n].reshape(shape), x[2 * n :].reshape(shape)))


# --- binary container ----------------------------------------------------------

_HEADER = struct.Struct("<qqdd")


def write_controls(fh: BinaryIO | str | Path, u: NormalControl, m: MomentaField,
                   powers: NormPowers) -> None:
    """Header ``(N, T, p, r)`` then ``u``, ``m1``, ``m2`` grids as little-endian float64."""
    if isinstance(fh, (str, Path)):
        with open(fh, "wb") as f:
            return write_controls(f, u, m, powers)
    steps, N, _ = u.coeffs.shape
    fh.write(_HEADER.pack(N, steps + 1, powers.p, powers.r))
    for arr in (u.coeffs, m.m1, m.m2):
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_controls(fh: BinaryIO | str | Path) -> tuple[NormalControl, MomentaField, NormPowers]:
    if isinstance(fh, (str, Path)):
        with open(fh, "rb") as f:
            return read_controls(f)
    head = fh.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise ValueError("truncated control header")
    N, T, p, r = _HEADER.unpack(head)
    shape = (T - 1, N, N)
    count = int(np.prod(shape))
    grids = []
    for _ in range(3):
        buf = fh.read(8 * count)
        if len(buf) != 8 * count:
            raise ValueError("truncated control payload")
        grids.append(np.frombuffer(buf, dtype="<f8").reshape(shape).astype(float))
    return NormalControl(grids[0]), MomentaField(grids[1], grids[2]), NormPowers(p, r)
