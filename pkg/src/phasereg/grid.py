"""Spatial grid, discrete Gaussian kernels and the linear-convolution engine.

Fields are stored as ``(N, N)`` arrays indexed ``field[i, j]`` with the first
axis along ``x1`` and the second along ``x2``.  Every kernel is centred on the
middle grid node, so ``convolve(K, delta_center) == K``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import signal


@dataclass(frozen=True)
class GridSpec:
    """Uniform ``N x N`` grid on ``[-L, L]^2`` with ``T`` time nodes on [0, 1]."""

    N: int
    L: float
    T: int
    sigma: float

    @property
    def dx(self) -> float:
        return 2.0 * self.L / (self.N - 1)

    @property
    def dt(self) -> float:
        return 1.0 / (self.T - 1)

    @property
    def tau(self) -> float:
        return self.sigma * math.sqrt(self.dt)

    @property
    def x(self) -> np.ndarray:
        """1D node coordinates; the middle entry is exactly zero."""
        c = (self.N - 1) // 2
        return (np.arange(self.N) - c) * self.dx

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.x, indexing="ij")


def build_grid(N: int, L: float = 1.0, T: int = 30, sigma: float = 0.1) -> GridSpec:
    if int(N) != N or N < 3 or N % 2 == 0:
        raise ValueError(f"N must be an odd integer >= 3, got {N}")
    if not L > 0:
        raise ValueError(f"L must be positive, got {L}")
    if int(T) != T or T < 2:
        raise ValueError(f"T must be an integer >= 2, got {T}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return GridSpec(int(N), float(L), int(T), float(sigma))


def odd_grid_size(N: int) -> int:
    """Round an even grid size up to the next odd one (150 -> 151)."""
    return int(N) + 1 if int(N) % 2 == 0 else int(N)


@dataclass(frozen=True)
class RadialKernelSpec:
    """Gaussian RKHS kernel ``kappa(rho) = exp(-rho^2 / (2 width^2))``.

    ``width=None`` means ten grid spacings.
    """

    width: float | None = None

    def resolve_width(self, grid: GridSpec) -> float:
        return 10.0 * grid.dx if self.width is None else float(self.width)

    def __call__(self, rho, grid: GridSpec):
        s = self.resolve_width(grid)
        return np.exp(-np.square(rho) / (2.0 * s * s))


class KernelSet:
    """Heat kernel ``M``, its ``x1`` derivative ``DM`` and the RKHS kernel.

    ``Ktilde`` is sampled on all ``(2N-1)^2`` node offsets so that a
    same-size convolution with it equals the dense collocation sum
    ``sum_kl kappa(|x_ij - x_kl|) m_kl`` exactly.
    """

    def __init__(self, grid: GridSpec, kappa: RadialKernelSpec | None = None):
        self.grid = grid
        self.kappa = kappa or RadialKernelSpec()
        X1, X2 = grid.meshgrid()
        tau2 = grid.tau**2
        M = grid.dx**2 * np.exp(-(X1**2 + X2**2) / (2.0 * tau2)) / (2.0 * np.pi * tau2)
        self.M = M
        self.DM = -(X1 / tau2) * M
        self.DMT = self.DM.T.copy()
        off = (np.arange(2 * grid.N - 1) - (grid.N - 1)) * grid.dx
        O1, O2 = np.meshgrid(off, off, indexing="ij")
        self.Ktilde = self.kappa(np.hypot(O1, O2), grid)
        for arr in (self.M, self.DM, self.DMT, self.Ktilde):
            arr.setflags(write=False)
        self._engine = _FFTEngine(grid.N)

    @property
    def Ktilde_center(self) -> np.ndarray:
        """``Ktilde`` restricted to the N x N offsets around the origin."""
        c = (self.grid.N - 1) // 2
        n = self.grid.N
        return self.Ktilde[c : c + n, c : c + n]

    def conv(self, name: str, h: np.ndarray) -> np.ndarray:
        """Convolve a field with one of the cached kernels (fast path)."""
        return self._engine.apply(getattr(self, name), h)

    def conv_adj(self, name: str, h: np.ndarray) -> np.ndarray:
        return self._engine.apply(getattr(self, name), h, adjoint=True)


def build_kernels(grid: GridSpec, kappa: RadialKernelSpec | None = None) -> KernelSet:
    return KernelSet(grid, kappa)


_WORKERS: int | None = None


def set_threads(n: int | None) -> None:
    """Thread count for the FFT path (``None`` lets scipy decide)."""
    global _WORKERS
    _WORKERS = None if n is None else max(1, int(n))


class _FFTEngine:
    """Zero-padded FFT convolution with per-kernel transform caching."""

    def __init__(self, n: int):
        self.n = n
        self._cache: dict[tuple[int, bool], tuple[np.ndarray, tuple[int, int], int]] = {}

    @property
    def workers(self):
        return _WORKERS

    def _kernel_hat(self, kernel: np.ndarray, adjoint: bool):
        key = (id(kernel), adjoint)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        k = kernel[::-1, ::-1] if adjoint else kernel
        size = [sfft.next_fast_len(self.n + s - 1, real=True) for s in k.shape]
        khat = sfft.rfft2(k, s=size, workers=self.workers)
        entry = (khat, tuple(size), (k.shape[0] - 1) // 2)
        self._cache[key] = entry
        return entry

    def apply(self, kernel: np.ndarray, h: np.ndarray, adjoint: bool = False) -> np.ndarray:
        if h.shape != (self.n, self.n):
            raise ValueError(f"field shape {h.shape} != {(self.n, self.n)}")
        khat, size, c = self._kernel_hat(kernel, adjoint)
        out = sfft.irfft2(khat * sfft.rfft2(h, s=size, workers=self.workers), s=size,
                          workers=self.workers)
        return out[c : c + self.n, c : c + self.n]


def _check_pair(kernel: np.ndarray, fld: np.ndarray) -> None:
    if kernel.ndim != 2 or fld.ndim != 2:
        raise ValueError("kernel and field must be 2D")
    if any(s % 2 == 0 for s in kernel.shape):
        raise ValueError(f"kernel shape {kernel.shape} must be odd on both axes")
    if kernel.shape[0] < fld.shape[0] or kernel.shape[1] < fld.shape[1]:
        raise ValueError(f"kernel {kernel.shape} smaller than field {fld.shape}")


def convolve(kernel: np.ndarray, fld: np.ndarray, method: str = "fft") -> np.ndarray:
    """Same-size central slice of the zero-padded linear convolution.

    ``kernel`` is centred: its middle entry sits at offset zero.  It may be
    larger than ``fld`` (e.g. the ``(2N-1)^2`` RKHS kernel).  ``method`` is
    ``"fft"`` or ``"direct"``.
    """
    kernel = np.asarray(kernel, dtype=float)
    fld = np.asarray(fld, dtype=float)
    _check_pair(kernel, fld)
    n1, n2 = fld.shape
    c1, c2 = (kernel.shape[0] - 1) // 2, (kernel.shape[1] - 1) // 2
    if method == "direct":
        full = signal.convolve2d(fld, kernel, mode="full")
    elif method == "fft":
        size = [sfft.next_fast_len(n + k - 1, real=True) for n, k in zip(fld.shape, kernel.shape)]
        full = sfft.irfft2(sfft.rfft2(kernel, s=size) * sfft.rfft2(fld, s=size), s=size)
    else:
        raise ValueError(f"unknown method {method!r}")
    return full[c1 : c1 + n1, c2 : c2 + n2]


def adjoint_convolve(kernel: np.ndarray, fld: np.ndarray, method: str = "fft") -> np.ndarray:
    """Adjoint of ``convolve(kernel, .)`` for the Euclidean grid inner product."""
    kernel = np.asarray(kernel, dtype=float)
    return convolve(kernel[::-1, ::-1], fld, method=method)
