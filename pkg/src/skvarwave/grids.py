"""Periodic grid, discrete derivatives, mollifier and fractional Sobolev norms.

Everything lives on the unit torus [0, 1) sampled at N equispaced nodes.
Fields are plain 1-D float64 arrays; NaN/Inf anywhere is a hard error at
operation boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MollifierResolutionError(ValueError):
    """Kernel width below the grid spacing: refine the grid or enlarge eps."""


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform grid on the torus of unit length.

    Attributes
    ----------
    N : number of nodes (>= 8, even so FFT modes pair up symmetrically)
    dx : node spacing 1/N
    x : node coordinates j/N
    """

    N: int
    dx: float = field(init=False)
    x: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.N < 8 or self.N % 2 != 0:
            raise ValueError(f"grid size must be even and >= 8, got N={self.N}")
        object.__setattr__(self, "dx", 1.0 / self.N)
        object.__setattr__(self, "x", np.arange(self.N) / self.N)

    def wavenumbers(self) -> np.ndarray:
        """Integer DFT mode numbers k in {-N/2, ..., N/2 - 1} (fft layout)."""
        return np.fft.fftfreq(self.N, d=self.dx)

    def integrate(self, f: np.ndarray) -> float:
        """Torus integral (the rectangle rule is spectrally accurate here)."""
        return float(np.sum(f) * self.dx)

    def mean(self, f: np.ndarray) -> float:
        return float(np.mean(f))


def as_field(values, grid: PeriodicGrid) -> np.ndarray:
    """Validate and return a field on ``grid`` (finite float64, length N)."""
    f = np.asarray(values, dtype=float)
    if f.shape != (grid.N,):
        raise ValueError(f"field shape {f.shape} does not match grid N={grid.N}")
    if not np.all(np.isfinite(f)):
        raise FloatingPointError("field contains NaN/Inf")
    return f


def mollifier_kernel(grid: PeriodicGrid, eps: float) -> np.ndarray:
    """Periodized triangular (Fejer) kernel of half-width eps.

    Nonnegative, symmetric, exact unit mass (normalized in a fixed summation
    order), so convolution preserves constants and the grid mean exactly up
    to round-off.
    """
    if eps < grid.dx:
        raise MollifierResolutionError(
            f"mollifier width eps={eps:g} is below dx={grid.dx:g}; refine the grid"
        )
    # signed periodic distance of each node from 0
    d = np.minimum(grid.x, 1.0 - grid.x)
    w = np.maximum(0.0, 1.0 - d / eps)
    return w / np.sum(w)


def mollify(f: np.ndarray, eps: float, grid: PeriodicGrid) -> np.ndarray:
    """Circular convolution with the triangular kernel of width ``eps``."""
    f = as_field(f, grid)
    w = mollifier_kernel(grid, eps)
    out = np.real(np.fft.ifft(np.fft.fft(f) * np.fft.fft(w)))
    return out


def mollifier_second_moment(grid: PeriodicGrid, eps: float) -> float:
    """Second moment of the kernel; predicts |J_eps f - f| ~ m2/2 * |f''|."""
    w = mollifier_kernel(grid, eps)
    d = np.minimum(grid.x, 1.0 - grid.x)
    return float(np.sum(w * d**2))


def sobolev_norm(f: np.ndarray, s: float, grid: PeriodicGrid) -> float:
    """Spectral H^s norm with symbol (1 + |2 pi k|^2)^(s/2).

    Normalized so s = 0 gives the L2(torus) norm: the DFT is scaled by 1/N,
    making Parseval read sum_k |fhat_k|^2 = (1/N) sum_j f_j^2.
    """
    f = as_field(f, grid)
    fhat = np.fft.fft(f) / grid.N
    k = grid.wavenumbers()
    weights = (1.0 + (2.0 * np.pi * k) ** 2) ** s
    return float(np.sqrt(np.sum(weights * np.abs(fhat) ** 2)))


def derivative(f: np.ndarray, grid: PeriodicGrid, scheme: str = "spectral") -> np.ndarray:
    """Periodic spatial derivative.

    schemes: 'centered', 'upwind+' (backward difference, for positive
    advection speed), 'upwind-' (forward difference), 'spectral'.
    """
    f = as_field(f, grid)
    if scheme == "centered":
        return (np.roll(f, -1) - np.roll(f, 1)) / (2.0 * grid.dx)
    if scheme == "upwind+":
        return (f - np.roll(f, 1)) / grid.dx
    if scheme == "upwind-":
        return (np.roll(f, -1) - f) / grid.dx
    if scheme == "spectral":
        k = grid.wavenumbers()
        fhat = np.fft.fft(f)
        # zero the (unpaired) Nyquist mode of the derivative
        ik = 2j * np.pi * k
        ik[grid.N // 2] = 0.0
        return np.real(np.fft.ifft(ik * fhat))
    raise ValueError(f"unknown derivative scheme {scheme!r}")


def cumulative_integral(f: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    """Left-endpoint cumulative integral G_j = dx * sum_{m<j} f_m, G_0 = 0.

    If f has zero grid mean the wrap-around value G_N vanishes exactly, which
    is what keeps periodic antiderivatives single-valued.
    """
    f = as_field(f, grid)
    out = np.empty(grid.N)
    out[0] = 0.0
    np.cumsum(f[:-1] * grid.dx, out=out[1:])
    return out
