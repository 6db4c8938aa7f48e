"""Command-line driver: ``phasereg --initial a.png --target b.png --out run/``.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines (keys are the long flag names without dashes), then the
command-line flags.

Exit codes: 0 converged, 2 bad configuration, 3 max iterations reached,
4 line-search failure, 5 I/O error, 6 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import io as pio
from .controls import NormPowers, u_norm_p, write_controls
from .fields import ChiSpec, MbpMapSpec, ReactionSpec
from .forward import NumericalError, SchemeSpec
from .grid import RadialKernelSpec, build_grid, odd_grid_size, set_threads
from .optimizer import OptimizerConfig, Termination
from .registration import (RegistrationError, RegistrationProblem, component_count, decompose,
                           discrepancy, solve)

log = logging.getLogger("phasereg")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MAX_ITERS = 3
EXIT_LINE_SEARCH = 4
EXIT_IO = 5
EXIT_NUMERICAL = 6

_TERMINATION_EXIT = {
    Termination.CONVERGED: EXIT_OK,
    Termination.MAX_ITERS: EXIT_MAX_ITERS,
    Termination.LINE_SEARCH_FAILURE: EXIT_LINE_SEARCH,
}


@dataclass
class RunConfig:
    initial: str | None = None
    target: str | None = None
    out: str = "phasereg_out"
    N: int = 151
    T: int = 30
    L: float = 1.0
    sigma: float = 0.1
    ctop: float = 1e8
    cend: float = 1e10
    p: float = 4.0
    r: float = 6.0
    W: float = 100.0
    a: float = 0.01
    mu: float = 0.05
    psi: float | None = None
    kernel_width: float | None = None
    max_iters: int = 300
    grad_tol: float = 1e-6
    precondition: bool = False
    restarts: int = 0
    discrepancy: bool = False
    decompose: bool = False
    frames: bool = False
    checkpoint_every: int = 0
    soft_input: bool = False
    seed: int = 0
    threads: int | None = None


_BOOL = {"precondition", "discrepancy", "decompose", "frames", "soft_input"}


def _convert(name: str, value: str):
    typ = {f.name: f.type for f in fields(RunConfig)}[name]
    if name in _BOOL:
        v = value.strip().lower()
        if v not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
            raise ValueError(f"{name}: not a boolean: {value!r}")
        return v in ("1", "true", "yes", "on")
    if value.strip().lower() in ("none", ""):
        if "None" in str(typ):
            return None
        raise ValueError(f"{name} may not be empty")
    if "int" in str(typ):
        return int(float(value)) if float(value).is_integer() else int(value)
    if "float" in str(typ):
        return float(value)
    return value.strip()


def load_config_file(path: str | Path) -> dict:
    raw = pio.parse_key_values(Path(path).read_text())
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for k, v in raw.items():
        key = k.replace("-", "_")
        if key not in known:
            raise ValueError(f"unknown config key {k!r}")
        out[key] = _convert(key, v)
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="phasereg", description=__doc__.split("\n")[0])
    ap.add_argument("--config", help="key = value settings file")
    ap.add_argument("--initial", help="initial shape image (8-bit grayscale PNG/PGM)")
    ap.add_argument("--target", help="target shape image")
    ap.add_argument("--out", help="output directory")
    for name, typ, hlp in [
        ("N", int, "grid points per axis (even values are bumped to the next odd)"),
        ("T", int, "time nodes"), ("L", float, "domain half-width"),
        ("sigma", float, "diffusion scale"), ("ctop", float, "weight of the normal control"),
        ("cend", float, "weight of the endpoint misfit"), ("p", float, "time exponent"),
        ("r", float, "space exponent for u"), ("W", float, "reaction strength"),
        ("a", float, "MBP range padding"), ("mu", float, "MBP map gain"),
        ("psi", float, "fixed smoothing floor of |grad f| (default: sqrt(dt 1e-16))"),
        ("kernel-width", float, "RKHS Gaussian width (default 10 dx)"),
        ("max-iters", int, "L-BFGS iteration cap"),
        ("grad-tol", float, "relative gradient-norm tolerance"),
        ("restarts", int, "extra randomized starts"),
        ("checkpoint-every", int, "write a checkpoint every K iterations"),
        ("seed", int, "seed for randomized starts"),
        ("threads", int, "FFT threads (env PHASEREG_THREADS overrides)"),
    ]:
        ap.add_argument(f"--{name}", type=typ, default=None, help=hlp)
    for name, hlp in [
        ("discrepancy", "solve both directions and report d_sigma"),
        ("decompose", "export the u-only / v-only decomposition"),
        ("frames", "export every trajectory frame as PNG and raw grid"),
        ("precondition", "rescale the u block by 1/C_top"),
        ("soft-input", "accept grayscale [0,1] input instead of binary"),
    ]:
        ap.add_argument(f"--{name}", action="store_const", const=True, default=None, help=hlp)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(argv=None) -> RunConfig:
    args = build_parser().parse_args(argv)
    if args.verbose:
        log.setLevel(logging.DEBUG)
    values = {}
    if args.config:
        values.update(load_config_file(args.config))
    for k, v in vars(args).items():
        if k in ("config", "verbose") or v is None:
            continue
        values[k] = v
    return RunConfig(**values)


def _problem(cfg: RunConfig, f0, ft, grid) -> RegistrationProblem:
    ckpt = str(Path(cfg.out) / "checkpoint.bin") if cfg.checkpoint_every else None
    return RegistrationProblem(
        f0, ft, grid,
        powers=NormPowers(cfg.p, cfg.r), C_top=cfg.ctop, C_end=cfg.cend,
        kappa=RadialKernelSpec(cfg.kernel_width),
        scheme=SchemeSpec(ReactionSpec(cfg.W), MbpMapSpec(cfg.a, cfg.mu), ChiSpec(cfg.psi)),
        optimizer=OptimizerConfig(max_iters=cfg.max_iters, grad_tol=cfg.grad_tol,
                                  precondition=cfg.precondition,
                                  checkpoint_every=cfg.checkpoint_every, checkpoint_path=ckpt),
        restarts=cfg.restarts, seed=cfg.seed)


def _boundary_margin_warning(name: str, fld: np.ndarray, grid) -> None:
    idx = np.argwhere(fld > 0)
    if idx.size == 0:
        return
    x = grid.x
    margin = grid.L - max(np.abs(x[idx[:, 0]]).max(), np.abs(x[idx[:, 1]]).max())
    if margin < 5 * grid.tau:
        log.warning("%s shape lies within %.3g of the boundary (< 5 tau = %.3g); "
                    "zero-padded convolutions will leak mass", name, margin, 5 * grid.tau)


class _MetricsRecorder:
    """Collects per-iteration metrics, reusing the trajectory of the accepted point."""

    def __init__(self, problem: RegistrationProblem):
        self.problem = problem
        self.rows: list[tuple] = []
        self._recent: list = []

    def on_eval(self, z, obj):
        self._recent = ([(z.copy(), obj.trajectory.endpoint)] + self._recent)[:4]

    def callback(self, state):
        end = next((e for z, e in self._recent if np.array_equal(z, state.x)), None)
        cc = component_count(end) if end is not None else -1
        self.rows.append((state.iteration, state.E, state.grad_norm_trace[-1], cc))
        log.debug("iteration %d  E=%.6e  |grad|=%.3e  components=%d",
                  state.iteration, state.E, state.grad_norm_trace[-1], cc)


def _export_solution(prefix: str, sol, problem, cfg: RunConfig, outdir: Path, manifest: dict):
    traj = sol.trajectory
    u, m = sol.controls
    counts = [component_count(f) for f in traj.f]
    manifest[f"{prefix}.rho"] = float(sol.rho)
    manifest[f"{prefix}.E_control_u"] = float(sol.objective.control_u)
    manifest[f"{prefix}.E_control_v"] = float(sol.objective.control_v)
    manifest[f"{prefix}.E_endpoint"] = float(sol.objective.endpoint)
    manifest[f"{prefix}.u_norm_p"] = float(u_norm_p(u, problem.powers, problem.grid))
    manifest[f"{prefix}.termination"] = sol.report.termination.value
    manifest[f"{prefix}.iterations"] = sol.report.iterations
    manifest[f"{prefix}.component_counts"] = counts
    manifest[f"{prefix}.target_component_count"] = component_count(sol.target_endpoint)

    ctl_path = outdir / f"{prefix}_controls.bin"
    write_controls(ctl_path, u, m, problem.powers)
    manifest[f"{prefix}.controls"] = ctl_path.name
    final_png = outdir / f"{prefix}_final.png"
    pio.save_field_png(final_png, traj.endpoint)
    manifest[f"{prefix}.final_png"] = final_png.name

    if cfg.frames:
        fdir = outdir / f"{prefix}_frames"
        fdir.mkdir(exist_ok=True)
        for k, f in enumerate(traj.f):
            pio.save_field_png(fdir / f"frame_{k:03d}.png", f)
            pio.write_grids(fdir / f"frame_{k:03d}.bin", f, problem.powers.p, problem.powers.r)
        pio.save_field_png(fdir / "target.png", sol.target_endpoint)
        manifest[f"{prefix}.frames_dir"] = fdir.name

    if cfg.decompose:
        d = decompose(sol, problem)
        for name, fld in (("advected", d.advected_indicator), ("u_only", d.u_only_endpoint),
                          ("v_only", d.v_only_endpoint)):
            path = outdir / f"{prefix}_{name}.png"
            pio.save_field_png(path, fld)
            manifest[f"{prefix}.{name}_png"] = path.name
            manifest[f"{prefix}.{name}_component_count"] = component_count(fld)
        pts = outdir / f"{prefix}_particles.csv"
        end = d.particles[-1]
        with open(pts, "w") as fh:
            fh.write("x1_start,x2_start,x1_end,x2_end,label\n")
            for (a1, a2), (b1, b2), lab in zip(d.particles[0], end, d.labels):
                fh.write(f"{a1!r},{a2!r},{b1!r},{b2!r},{lab}\n")
        manifest[f"{prefix}.particles_csv"] = pts.name


def run(cfg: RunConfig) -> int:
    threads = os.environ.get("PHASEREG_THREADS", cfg.threads)
    if threads is not None:
        set_threads(int(threads))
    try:
        N = odd_grid_size(cfg.N)
        grid = build_grid(N, cfg.L, cfg.T, cfg.sigma)
        NormPowers(cfg.p, cfg.r)
        SchemeSpec(ReactionSpec(cfg.W), MbpMapSpec(cfg.a, cfg.mu), ChiSpec(cfg.psi)).psi(grid)
        if not cfg.cend > 0 or not cfg.ctop >= 0:
            raise ValueError("need cend > 0 and ctop >= 0")
        if not cfg.initial or not cfg.target:
            raise ValueError("both --initial and --target are required")
    except ValueError as exc:
        log.error("configuration: %s", exc)
        return EXIT_CONFIG
    if N != cfg.N:
        log.warning("N=%d is even; using N=%d so the grid contains the origin", cfg.N, N)

    try:
        f0 = pio.load_image(cfg.initial, N, soft=cfg.soft_input)
        ft = pio.load_image(cfg.target, N, soft=cfg.soft_input)
    except (OSError, pio.ImageFormatError) as exc:
        log.error("loading images: %s", exc)
        return EXIT_IO
    for name, fld in (("initial", f0), ("target", ft)):
        _boundary_margin_warning(name, fld, grid)
    problem = _problem(cfg, f0, ft, grid)
    mass = float(problem.kernels.M.sum())
    if abs(mass - 1.0) > 1e-3:
        log.warning("heat kernel under-resolved (sum M = %.4f, tau/dx = %.2f); "
                    "increase sigma or T, or decrease N", mass, grid.tau / grid.dx)

    outdir = Path(cfg.out)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        log.error("creating output directory: %s", exc)
        return EXIT_IO

    manifest = {"phasereg_manifest": "1", "metrics_schema": pio.METRICS_SCHEMA}
    manifest.update({f"config.{k}": ("none" if v is None else v) for k, v in asdict(cfg).items()})
    manifest["grid.N_used"] = N
    manifest["grid.dx"] = grid.dx
    manifest["grid.dt"] = grid.dt
    manifest["grid.tau"] = grid.tau

    recorder = _MetricsRecorder(problem)
    try:
        if cfg.discrepancy:
            res = discrepancy(f0, ft, problem)
            if res.partial:
                raise RegistrationError("one direction failed", partial=res)
            sols = {"forward": res.solutions[0], "backward": res.solutions[1]}
            manifest["rho_forward"] = float(res.rho_forward)
            manifest["rho_backward"] = float(res.rho_backward)
            manifest["d_sigma"] = float(res.d_sigma)
            for sol in res.solutions:
                for it, (E, gn) in enumerate(zip(sol.report.E_trace, sol.report.grad_norm_trace)):
                    recorder.rows.append((it, E, gn, -1))
        else:
            sol = solve(problem, callback=recorder.callback, on_eval=recorder.on_eval)
            sols = {"forward": sol}
            manifest["rho"] = float(sol.rho)
    except (RegistrationError, NumericalError, FloatingPointError) as exc:
        log.error("optimization: %s", exc)
        return EXIT_NUMERICAL

    try:
        for prefix, sol in sols.items():
            p = problem if prefix == "forward" else problem.swapped()
            _export_solution(prefix, sol, p, cfg, outdir, manifest)
        pio.write_metrics(outdir / "metrics.csv", recorder.rows)
        manifest["metrics_csv"] = "metrics.csv"
        pio.write_manifest(outdir / "manifest.txt", manifest)
    except OSError as exc:
        log.error("writing outputs: %s", exc)
        return EXIT_IO

    codes = [_TERMINATION_EXIT[s.report.termination] for s in sols.values()]
    return next((c for c in codes if c != EXIT_OK), EXIT_OK)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(argv)
    except (ValueError, OSError, TypeError) as exc:
        log.error("configuration: %s", exc)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
