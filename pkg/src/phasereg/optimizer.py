"""Limited-memory BFGS over the stacked control vector ``(u, m1, m2)``."""
from __future__ import annotations

import enum
import struct
import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize._linesearch import LineSearchWarning
from scipy.optimize import line_search as _scipy_line_search

from . import controls as ctl
from .adjoint import gradient
from .forward import SchemeSpec
from .grid import KernelSet

EAndGrad = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


class Termination(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    LINE_SEARCH_FAILURE = "line_search_failure"


class LineSearchFailure(RuntimeError):
    pass


class OptimizationError(FloatingPointError):
    def __init__(self, msg: str, iteration: int):
        self.iteration = iteration
        super().__init__(f"{msg} at iteration {iteration}")


@dataclass(frozen=True)
class OptimizerConfig:
    memory: int = 10
    max_iters: int = 300
    grad_tol: float = 1e-6
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_line_search: int = 25
    # length of the very first trial step (before any curvature information)
    initial_step: float = 1e-2
    # rescale the u block by 1/sqrt(C_top), i.e. a 1/C_top gradient preconditioner
    precondition: bool = False
    # optimize momenta in velocity units (m = z / sum(Ktilde))
    momenta_scaling: bool = True
    checkpoint_every: int = 0
    checkpoint_path: str | None = None

    def __post_init__(self):
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise ValueError("need 0 < wolfe_c1 < wolfe_c2 < 1")
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if self.max_iters < 0 or self.max_line_search < 1:
            raise ValueError("max_iters must be >= 0 and max_line_search >= 1")


@dataclass
class OptimizationReport:
    iterations: int
    E_trace: list[float]
    grad_norm_trace: list[float]
    termination: Termination
    x: np.ndarray
    final_controls: tuple | None = None
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.termination is Termination.CONVERGED


@dataclass
class LbfgsState:
    """Everything needed to resume an optimization bit-identically."""

    x: np.ndarray
    E: float
    g: np.ndarray
    g0norm: float
    iteration: int = 0
    pairs: deque = field(default_factory=deque)
    E_trace: list = field(default_factory=list)
    grad_norm_trace: list = field(default_factory=list)


class _Memo:
    """Caches ``(E, grad)`` by point so the line search never recomputes."""

    def __init__(self, fun: EAndGrad):
        self.fun = fun
        self.last: list[tuple[np.ndarray, float, np.ndarray]] = []

    def __call__(self, x: np.ndarray):
        for xs, E, g in self.last:
            if np.array_equal(xs, x):
                return E, g
        E, g = self.fun(x)
        self.last = ([(x.copy(), E, g)] + self.last)[:4]
        return E, g

    def f(self, x):
        return self(x)[0]

    def fprime(self, x):
        return self(x)[1]


def line_search(direction: np.ndarray, x: np.ndarray, fun: EAndGrad,
                config: OptimizerConfig = OptimizerConfig(), E0: float | None = None,
                g0: np.ndarray | None = None) -> float:
    """Strong-Wolfe step length along ``direction`` from ``x``.

    Raises ``LineSearchFailure`` for non-descent directions and when no
    acceptable step is found within ``config.max_line_search`` trials.
    """
    memo = fun if isinstance(fun, _Memo) else _Memo(fun)
    if E0 is None or g0 is None:
        E0, g0 = memo(x)
    slope = float(np.dot(g0, direction))
    if not slope < 0:
        raise LineSearchFailure(f"not a descent direction (slope {slope:.3e})")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LineSearchWarning)
        with np.errstate(over="ignore", invalid="ignore"):
            alpha, *_ = _scipy_line_search(
                memo.f, memo.fprime, x, direction, gfk=g0, old_fval=E0,
                c1=config.wolfe_c1, c2=config.wolfe_c2, maxiter=config.max_line_search)
    if alpha is None:
        raise LineSearchFailure("no step satisfying the strong Wolfe conditions")
    return float(alpha)


def _two_loop(g: np.ndarray, pairs) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    s, y, _ = pairs[-1]
    q *= np.dot(s, y) / np.dot(y, y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return -q


def lbfgs(fun: EAndGrad, x0: np.ndarray | None = None, config: OptimizerConfig = OptimizerConfig(),
          callback: Callable[[LbfgsState], None] | None = None,
          state: LbfgsState | None = None,
          checkpoint: Callable[[LbfgsState], None] | None = None) -> OptimizationReport:
    """Minimize ``fun`` (returning value and gradient) from ``x0`` or a resumed ``state``."""
    memo = _Memo(fun)
    if state is None:
        x = np.array(x0, dtype=float)
        E, g = memo(x)
        if not (np.isfinite(E) and np.all(np.isfinite(g))):
            raise OptimizationError("non-finite objective", 0)
        state = LbfgsState(x=x, E=E, g=g, g0norm=float(np.linalg.norm(g)))
        state.E_trace.append(E)
        state.grad_norm_trace.append(state.g0norm)
        if callback:
            callback(state)
    termination = Termination.MAX_ITERS
    message = ""
    while True:
        gnorm = state.grad_norm_trace[-1]
        if gnorm <= config.grad_tol * state.g0norm or gnorm == 0.0:
            termination = Termination.CONVERGED
            break
        if state.iteration >= config.max_iters:
            break
        if state.pairs:
            d = _two_loop(state.g, state.pairs)
        else:
            d = -state.g * (config.initial_step / np.max(np.abs(state.g)))
        try:
            alpha = line_search(d, state.x, memo, config, state.E, state.g)
        except LineSearchFailure as exc:
            termination = Termination.LINE_SEARCH_FAILURE
            message = str(exc)
            break
        x_new = state.x + alpha * d
        E_new, g_new = memo(x_new)
        if not (np.isfinite(E_new) and np.all(np.isfinite(g_new))):
            raise OptimizationError("non-finite objective", state.iteration + 1)
        s = x_new - state.x
        y = g_new - state.g
        sy = float(np.dot(s, y))
        if sy > 0:
            state.pairs.append((s, y, 1.0 / sy))
            while len(state.pairs) > config.memory:
                state.pairs.popleft()
        state.x, state.E, state.g = x_new, E_new, g_new
        state.iteration += 1
        state.E_trace.append(E_new)
        state.grad_norm_trace.append(float(np.linalg.norm(g_new)))
        if callback:
            callback(state)
        if checkpoint and config.checkpoint_every and state.iteration % config.checkpoint_every == 0:
            checkpoint(state)
    return OptimizationReport(state.iteration, list(state.E_trace), list(state.grad_norm_trace),
                              termination, state.x.copy(), message=message)


# --- checkpoints -------------------------------------------------------------

_CKPT_MAGIC = b"LBFGSCK1"
_CKPT_HEAD = struct.Struct("<qqddq")


def write_checkpoint(path: str | Path, state: LbfgsState, grid, powers: ctl.NormPowers,
                     scaling: "BlockScaling | None" = None) -> None:
    """Controls container followed by the optimizer state."""
    x = state.x if scaling is None else scaling.to_controls(state.x, grid)
    u, m = ctl.unstack_controls(x, grid)
    n = state.x.size
    with open(path, "wb") as fh:
        ctl.write_controls(fh, u, m, powers)
        fh.write(_CKPT_MAGIC)
        fh.write(_CKPT_HEAD.pack(state.iteration, len(state.pairs), state.E, state.g0norm, n))
        for arr in (state.x, state.g, np.asarray(state.E_trace), np.asarray(state.grad_norm_trace)):
            fh.write(struct.pack("<q", arr.size))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        for s, y, rho in state.pairs:
            fh.write(np.ascontiguousarray(s, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(y, dtype="<f8").tobytes())
            fh.write(struct.pack("<d", rho))


def read_checkpoint(path: str | Path) -> tuple[LbfgsState, tuple]:
    """Returns the resumable state and ``(u, m, powers)`` from the controls section."""
    with open(path, "rb") as fh:
        controls = ctl.read_controls(fh)
        if fh.read(len(_CKPT_MAGIC)) != _CKPT_MAGIC:
            raise ValueError(f"{path} holds controls only, no optimizer state")
        it, npairs, E, g0norm, n = _CKPT_HEAD.unpack(fh.read(_CKPT_HEAD.size))

        def arr():
            (size,) = struct.unpack("<q", fh.read(8))
            return np.frombuffer(fh.read(8 * size), dtype="<f8").astype(float)

        x, g, Et, Gt = arr(), arr(), arr(), arr()
        pairs = deque()
        for _ in range(npairs):
            s = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(float)
            y = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(float)
            (rho,) = struct.unpack("<d", fh.read(8))
            pairs.append((s, y, rho))
    state = LbfgsState(x=x, E=E, g=g, g0norm=g0norm, iteration=it, pairs=pairs,
                       E_trace=list(Et), grad_norm_trace=list(Gt))
    return state, controls


# --- registration objective ----------------------------------------------------

@dataclass(frozen=True)
class ProblemParams:
    """Everything besides the two shapes that defines the objective."""

    kernels: KernelSet
    scheme: SchemeSpec = field(default_factory=SchemeSpec)
    powers: ctl.NormPowers = field(default_factory=ctl.NormPowers)
    C_top: float = 1e8
    C_end: float = 1e10

    @property
    def grid(self):
        return self.kernels.grid


@dataclass(frozen=True)
class BlockScaling:
    """Diagonal change of variables ``x = scale * z`` applied per control block."""

    u: float = 1.0
    m: float = 1.0

    @classmethod
    def for_problem(cls, params: ProblemParams, config: OptimizerConfig) -> "BlockScaling":
        u = 1.0 / np.sqrt(params.C_top) if config.precondition and params.C_top > 0 else 1.0
        m = 1.0 / float(np.sum(params.kernels.Ktilde)) if config.momenta_scaling else 1.0
        return cls(u, m)

    def _apply(self, v: np.ndarray, grid, inverse: bool = False) -> np.ndarray:
        if self.u == 1.0 and self.m == 1.0:
            return v
        n = (grid.T - 1) * grid.N * grid.N
        out = np.array(v, dtype=float)
        su, sm = (1.0 / self.u, 1.0 / self.m) if inverse else (self.u, self.m)
        out[:n] *= su
        out[n:] *= sm
        return out

    def to_controls(self, z, grid):
        return self._apply(z, grid)

    def from_controls(self, x, grid):
        return self._apply(x, grid, inverse=True)

    def gradient(self, g, grid):
        """Chain rule: ``dE/dz = scale * dE/dx``."""
        return self._apply(g, grid)


def make_objective(F0: np.ndarray, f_target_T: np.ndarray, params: ProblemParams,
                   scaling: BlockScaling = BlockScaling(),
                   on_eval: Callable | None = None) -> EAndGrad:
    """Closure ``z -> (E, dE/dz)`` over the (optionally rescaled) stacked controls."""
    grid = params.grid

    def fun(z: np.ndarray):
        u, m = ctl.unstack_controls(scaling.to_controls(z, grid), grid)
        obj, gp = gradient(F0, u, m, f_target_T, params.powers, params.C_top, params.C_end,
                           params.kernels, params.scheme)
        if on_eval:
            on_eval(z, obj)
        return obj.E, scaling.gradient(gp.stacked(), grid)

    return fun


def minimize(F0: np.ndarray, f_target_T: np.ndarray, params: ProblemParams,
             config: OptimizerConfig = OptimizerConfig(), x0: np.ndarray | None = None,
             callback: Callable[[LbfgsState], None] | None = None,
             on_eval: Callable | None = None,
             resume: str | Path | None = None) -> OptimizationReport:
    """Optimal controls for moving ``F0`` onto the evolved target endpoint ``f_target_T``.

    Starts from zero controls unless ``x0`` (stacked, unscaled) or a checkpoint
    file ``resume`` is given.
    """
    grid = params.grid
    scaling = BlockScaling.for_problem(params, config)
    fun = make_objective(F0, f_target_T, params, scaling, on_eval)
    state = None
    if resume is not None:
        state, _ = read_checkpoint(resume)
    elif x0 is not None:
        x0 = scaling.from_controls(x0, grid)
    else:
        x0 = np.zeros(3 * (grid.T - 1) * grid.N * grid.N)

    ckpt = None
    if config.checkpoint_every and config.checkpoint_path:
        def ckpt(st: LbfgsState):
            write_checkpoint(config.checkpoint_path, st, grid, params.powers, scaling)

    report = lbfgs(fun, x0, config, callback=callback, state=state, checkpoint=ckpt)
    report.x = scaling.to_controls(report.x, grid)
    report.final_controls = ctl.unstack_controls(report.x, grid)
    return report
