"""Analytic fixtures: rasterized disc indicators on a grid."""
from __future__ import annotations

from typing import Iterable

import numpy as np

from .grid import GridSpec


def disc(grid: GridSpec, radius: float, center: tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    """Indicator of the closed disc, sampled at grid nodes."""
    X1, X2 = grid.meshgrid()
    return ((X1 - center[0]) ** 2 + (X2 - center[1]) ** 2 <= radius**2).astype(float)


def discs(grid: GridSpec, radius: float, centers: Iterable[tuple[float, float]]) -> np.ndarray:
    out = np.zeros((grid.N, grid.N))
    for c in centers:
        out = np.maximum(out, disc(grid, radius, c))
    return out


def one_disc(grid: GridSpec) -> np.ndarray:
    return disc(grid, 0.35)


def two_discs(grid: GridSpec) -> np.ndarray:
    return discs(grid, 0.25, [(-0.4, 0.0), (0.4, 0.0)])


def three_discs(grid: GridSpec) -> np.ndarray:
    return discs(grid, 0.2, [(-0.45, -0.25), (0.45, -0.25), (0.0, 0.45)])


def four_discs(grid: GridSpec) -> np.ndarray:
    return discs(grid, 0.18, [(-0.4, -0.4), (0.4, -0.4), (-0.4, 0.4), (0.4, 0.4)])
