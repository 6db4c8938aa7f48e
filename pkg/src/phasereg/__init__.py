"""Phase-field shape registration with normal and transport controls.

A shape is a phase field on a square grid.  It is evolved by a convective
Allen-Cahn scheme driven by a normal-speed control ``u`` and an RKHS velocity
``v``.  The controls are optimized to reach a target shape.
"""
from .grid import GridSpec, KernelSet, RadialKernelSpec, build_grid, build_kernels, set_threads
from .fields import ChiSpec, DomainError, MbpMapSpec, ReactionSpec
from .controls import MomentaField, NormalControl, NormPowers
from .forward import NumericalError, SchemeSpec, Trajectory, evolve, evolve_uncontrolled
from .adjoint import GradientPair, Objective, gradient, objective
from .optimizer import (OptimizationReport, OptimizerConfig, ProblemParams, Termination,
                        minimize)
from .registration import (DiscrepancyResult, RegistrationError, RegistrationProblem, Solution,
                           component_count, decompose, discrepancy, solve)

__version__ = "0.1.0"
