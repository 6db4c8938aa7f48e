"""High-level registration: solve, sigma-discrepancy and control decomposition."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import ndimage

from . import controls as ctl
from .adjoint import Objective, objective
from .forward import NumericalError, SchemeSpec, Trajectory, evolve, evolve_uncontrolled
from .grid import GridSpec, KernelSet, RadialKernelSpec, build_kernels
from .optimizer import (OptimizationError, OptimizationReport, OptimizerConfig, ProblemParams,
                        minimize)

LEVEL = 0.5


class RegistrationError(RuntimeError):
    """Raised when a solve fails; ``partial`` holds whatever finished."""

    def __init__(self, msg: str, partial=None):
        self.partial = partial
        super().__init__(msg)


@dataclass(frozen=True)
class RegistrationProblem:
    f0: np.ndarray
    f_target: np.ndarray
    grid: GridSpec
    powers: ctl.NormPowers = field(default_factory=ctl.NormPowers)
    C_top: float = 1e8
    C_end: float = 1e10
    kappa: RadialKernelSpec = field(default_factory=RadialKernelSpec)
    scheme: SchemeSpec = field(default_factory=SchemeSpec)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    # extra randomized starts; rho is the best value found over all of them
    restarts: int = 0
    seed: int = 0

    def __post_init__(self):
        shape = (self.grid.N, self.grid.N)
        if np.shape(self.f0) != shape or np.shape(self.f_target) != shape:
            raise ValueError(f"shapes must both be {shape}")
        if not self.C_end > 0:
            raise ValueError("C_end must be positive")
        if not self.C_top >= 0:
            raise ValueError("C_top must be non-negative")

    @cached_property
    def kernels(self) -> KernelSet:
        return build_kernels(self.grid, self.kappa)

    @property
    def params(self) -> ProblemParams:
        return ProblemParams(self.kernels, self.scheme, self.powers, self.C_top, self.C_end)

    def swapped(self) -> "RegistrationProblem":
        p = replace(self, f0=self.f_target, f_target=self.f0)
        # reuse the kernels already built for this grid
        if "kernels" in self.__dict__:
            object.__setattr__(p, "kernels", self.kernels)
        return p


@dataclass
class Solution:
    """Result of one directional registration.

    ``rho`` is the best objective value found: an upper bound on the true
    minimum, since the optimizer is local.
    """

    report: OptimizationReport
    rho: float
    objective: Objective
    target_endpoint: np.ndarray

    @property
    def controls(self) -> tuple[ctl.NormalControl, ctl.MomentaField]:
        return self.report.final_controls

    @property
    def trajectory(self) -> Trajectory:
        return self.objective.trajectory

    def __iter__(self):
        return iter((self.report, self.rho))


@dataclass
class DiscrepancyResult:
    rho_forward: float
    rho_backward: float
    d_sigma: float
    solutions: tuple
    partial: bool = False

    @property
    def reports(self):
        return tuple(s.report if s is not None else None for s in self.solutions)


def target_endpoint(problem: RegistrationProblem) -> np.ndarray:
    """The target after uncontrolled evolution over unit time."""
    return evolve_uncontrolled(np.asarray(problem.f_target, float), problem.kernels,
                               problem.scheme).endpoint


def solve(problem: RegistrationProblem, callback=None, on_eval=None, resume=None) -> Solution:
    params = problem.params
    F0 = np.asarray(problem.f0, dtype=float)
    ftT = target_endpoint(problem)
    grid = problem.grid
    starts = [None]
    rng = np.random.default_rng(problem.seed)
    n = 3 * (grid.T - 1) * grid.N * grid.N
    for _ in range(problem.restarts):
        x0 = np.zeros(n)
        nu = n // 3
        x0[:nu] = 1e-2 * rng.standard_normal(nu)
        starts.append(x0)

    best = None
    for i, x0 in enumerate(starts):
        try:
            rep = minimize(F0, ftT, params, problem.optimizer, x0=x0, callback=callback,
                           on_eval=on_eval, resume=resume if i == 0 else None)
        except (OptimizationError, NumericalError) as exc:
            raise RegistrationError(f"optimization failed: {exc}", partial=best) from exc
        u, m = rep.final_controls
        obj = objective(F0, u, m, ftT, params.powers, params.C_top, params.C_end,
                        params.kernels, params.scheme)
        sol = Solution(rep, obj.E, obj, ftT)
        if best is None or sol.rho < best.rho:
            best = sol
    return best


def discrepancy(f0, f_target, problem: RegistrationProblem | None = None,
                parallel: bool = False, **kwargs) -> DiscrepancyResult:
    """``d_sigma = min(rho(f0 -> f_target), rho(f_target -> f0))``.

    ``problem`` supplies every parameter besides the two shapes; keyword
    arguments build one when it is omitted.
    """
    if problem is None:
        problem = RegistrationProblem(np.asarray(f0, float), np.asarray(f_target, float), **kwargs)
    else:
        problem = replace(problem, f0=np.asarray(f0, float), f_target=np.asarray(f_target, float))
    back = problem.swapped()
    if parallel:
        with ThreadPoolExecutor(max_workers=2) as pool:
            futs = [pool.submit(_try_solve, p) for p in (problem, back)]
            results = [f.result() for f in futs]
    else:
        results = [_try_solve(p) for p in (problem, back)]
    sols = tuple(r for r, _ in results)
    partial = any(err is not None for _, err in results)
    rf = sols[0].rho if sols[0] is not None else np.inf
    rb = sols[1].rho if sols[1] is not None else np.inf
    return DiscrepancyResult(rf, rb, min(rf, rb), sols, partial)


def _try_solve(problem):
    try:
        return solve(problem), None
    except RegistrationError as exc:
        return exc.partial, exc


# --- analysis ---------------------------------------------------------------

def component_count(fld: np.ndarray, threshold: float = LEVEL) -> int:
    """Number of 4-connected components of ``{fld > threshold}``."""
    return int(ndimage.label(np.asarray(fld) > threshold)[1])


def _sample(grid: GridSpec, fld: np.ndarray, pts: np.ndarray, order: int = 1) -> np.ndarray:
    idx = (pts + grid.L) / grid.dx
    return ndimage.map_coordinates(fld, [idx[:, 0], idx[:, 1]], order=order, mode="nearest")


def flow_particles(grid: GridSpec, v1: np.ndarray, v2: np.ndarray,
                   points: np.ndarray, backward: bool = False) -> np.ndarray:
    """Explicit Euler integration of ``dphi/dt = v(phi)`` over the ``T - 1`` steps.

    Returns positions of shape ``(T, P, 2)``.  ``backward=True`` integrates
    the inverse flow (time reversed, negated field).
    """
    pts = np.array(points, dtype=float)
    out = [pts.copy()]
    order = range(v1.shape[0] - 1, -1, -1) if backward else range(v1.shape[0])
    sgn = -1.0 if backward else 1.0
    for k in order:
        vel = np.stack([_sample(grid, v1[k], pts), _sample(grid, v2[k], pts)], axis=1)
        pts = pts + sgn * grid.dt * vel
        out.append(pts.copy())
    return np.array(out)


@dataclass
class Decomposition:
    particles: np.ndarray          # (T, P, 2) forward trajectories of grid nodes
    labels: np.ndarray             # (P,) component label in f0 (0 = background)
    advected_indicator: np.ndarray  # f0 transported by the v-flow alone
    u_only_endpoint: np.ndarray
    v_only_endpoint: np.ndarray


def decompose(solution: Solution, problem: RegistrationProblem, stride: int = 1) -> Decomposition:
    grid = problem.grid
    kernels = problem.kernels
    u, m = solution.controls
    traj = solution.trajectory
    X1, X2 = grid.meshgrid()
    nodes = np.stack([X1[::stride, ::stride].ravel(), X2[::stride, ::stride].ravel()], axis=1)
    lab = ndimage.label(np.asarray(problem.f0) > LEVEL)[0][::stride, ::stride].ravel()
    particles = flow_particles(grid, traj.v1, traj.v2, nodes)

    all_nodes = np.stack([X1.ravel(), X2.ravel()], axis=1)
    back = flow_particles(grid, traj.v1, traj.v2, all_nodes, backward=True)[-1]
    advected = _sample(grid, np.asarray(problem.f0, float), back, order=0).reshape(grid.N, grid.N)

    F0 = np.asarray(problem.f0, dtype=float)
    u_only = evolve(F0, u, ctl.MomentaField.zeros(grid), kernels, problem.scheme).endpoint
    v_only = evolve(F0, ctl.NormalControl.zeros(grid), m, kernels, problem.scheme).endpoint
    return Decomposition(particles, lab, advected, u_only, v_only)
