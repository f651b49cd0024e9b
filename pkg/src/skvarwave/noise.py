"""Truncated cylindrical Wiener noise on the torus with reproducible paths.

The noise pushes K independent scalar Wiener processes into space through
mode profiles sigma_k(x).  Mollified profiles sigma_k^eps feed the
regularized wave system; q = sum sigma_k^2 and its mollified counterpart
enter the energy bookkeeping.

Paths are generated by a counter-based generator (Philox) keyed by the
seed, with one uniform per (step, mode) slot mapped through the inverse
normal CDF.  Any sub-block of increments is therefore reproducible without
generating its predecessors, and the same path can be handed to every
solver that couples to it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

from .grids import PeriodicGrid, as_field, derivative, mollify


@dataclass(frozen=True)
class ModeSpec:
    """One noise mode: sin/cos profile of frequency k, or a tabulated field."""

    kind: str                    # 'sin' | 'cos' | 'table'
    k: int = 1
    amplitude: float = 1.0
    values: Optional[np.ndarray] = None

    def sample(self, grid: PeriodicGrid) -> np.ndarray:
        if self.kind == "sin":
            return self.amplitude * np.sin(2.0 * np.pi * self.k * grid.x)
        if self.kind == "cos":
            return self.amplitude * np.cos(2.0 * np.pi * self.k * grid.x)
        if self.kind == "table":
            return self.amplitude * as_field(self.values, grid)
        raise ValueError(f"unknown mode kind {self.kind!r}")


def default_mode_family(K: int, amplitude: float = 0.1, decay: float = 2.0) -> list:
    """Alternating sin/cos modes with amplitudes A k^-decay (decay >= 2)."""
    modes = []
    for i in range(K):
        k = i // 2 + 1
        kind = "sin" if i % 2 == 0 else "cos"
        modes.append(ModeSpec(kind=kind, k=k, amplitude=amplitude * k ** (-decay)))
    return modes


@dataclass(frozen=True)
class NoiseSpec:
    """Sampled mode profiles, their mollifications, and derived q fields."""

    grid: PeriodicGrid
    eps: float
    sigma: np.ndarray            # (K, N) profiles
    sigma_eps: np.ndarray        # (K, N) mollified profiles
    q_field: np.ndarray          # sum_k sigma_k^2
    q_eps_field: np.ndarray      # sum_k (sigma_k^eps)^2
    q0: float                    # sum_k ||sigma_k||_{W^{1,inf}}^2 (max convention)
    pointwise_dominated: bool    # |sigma_k^eps| <= |sigma_k| held at every node

    @property
    def K(self) -> int:
        return self.sigma.shape[0]

    def q_eps_l1(self) -> float:
        return self.grid.integrate(self.q_eps_field)


def build_noise(profiles: Sequence[ModeSpec], grid: PeriodicGrid, eps: float,
                allow_empty: bool = False) -> NoiseSpec:
    """Sample the mode profiles, mollify them, and assemble q, q^eps, q0.

    The W^{1,inf} norm uses the max convention max(sup|sigma|, sup|sigma'|);
    derivatives are spectral.  Empty profile lists are rejected unless
    ``allow_empty`` marks an intentionally deterministic run.
    """
    if len(profiles) == 0 and not allow_empty:
        raise ValueError("no noise modes given; pass allow_empty=True for a "
                         "deterministic run")
    K = len(profiles)
    sigma = np.zeros((K, grid.N))
    sigma_eps = np.zeros((K, grid.N))
    q0 = 0.0
    pointwise = True
    for i, p in enumerate(profiles):
        s = p.sample(grid)
        se = mollify(s, eps, grid)
        sup_s = float(np.max(np.abs(s)))
        # mollification is a convex combination of translates, so the sup-norm
        # domination is exact; the pointwise form can fail near sign changes
        if np.max(np.abs(se)) > sup_s * (1.0 + 1e-12) + 1e-300:
            raise AssertionError("sup-norm domination of the mollified profile failed")
        pointwise = pointwise and bool(np.all(np.abs(se) <= np.abs(s) + 1e-12))
        ds = derivative(s, grid, "spectral")
        q0 += max(sup_s, float(np.max(np.abs(ds)))) ** 2
        sigma[i] = s
        sigma_eps[i] = se
    q_field = np.sum(sigma**2, axis=0)
    q_eps_field = np.sum(sigma_eps**2, axis=0)
    if np.any(q_field < 0.0) or not np.isfinite(q0):
        raise AssertionError("q must be nonnegative with finite q0")
    return NoiseSpec(grid=grid, eps=eps, sigma=sigma, sigma_eps=sigma_eps,
                     q_field=q_field, q_eps_field=q_eps_field, q0=q0,
                     pointwise_dominated=pointwise)


# ---------------------------------------------------------------------------
# Wiener paths
# ---------------------------------------------------------------------------

_PHILOX_BLOCK = 4  # uint64 outputs per counter increment


def _uniforms(key: int, start: int, count: int) -> np.ndarray:
    """Uniform doubles u_start..u_{start+count-1} of the stream keyed by key."""
    bg = Philox(key=key)
    skip = start % _PHILOX_BLOCK
    bg.advance(start // _PHILOX_BLOCK)
    raw = bg.random_raw(skip + count)[skip:]
    return (raw >> np.uint64(11)) * 2.0**-53


def _normals(key: int, start: int, count: int) -> np.ndarray:
    # open-interval shift keeps ndtri finite at u = 0
    u = _uniforms(key, start, count)
    return ndtri(u + 2.0**-54)


@dataclass(frozen=True)
class WienerPath:
    """Increments of K scalar Wiener processes over n_steps steps of size dt.

    increments[n, k] ~ N(0, dt), a pure function of (seed, dt, n_steps, K)
    for paths made by ``sample_path``.  Refined paths carry the increments
    directly together with the seed of the bridge draws.
    """

    seed: int
    dt: float
    n_steps: int
    K: int
    increments: np.ndarray
    level: int = 0

    def block(self, step0: int, step1: int) -> np.ndarray:
        return self.increments[step0:step1]


def sample_path(spec: NoiseSpec, seed: int, dt: float, n_steps: int) -> WienerPath:
    """Draw the (n_steps, K) increment array for the given key.

    The (step, mode) slot maps to stream position step*K + mode, so any
    sub-block can be regenerated in isolation.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    K = spec.K
    z = _normals(int(seed), 0, n_steps * K).reshape(n_steps, K) if n_steps * K else \
        np.zeros((n_steps, K))
    return WienerPath(seed=int(seed), dt=float(dt), n_steps=int(n_steps), K=K,
                      increments=z * np.sqrt(dt))


def increments_block(spec: NoiseSpec, seed: int, dt: float,
                     step0: int, step1: int) -> np.ndarray:
    """Regenerate increments for steps [step0, step1) without their history."""
    K = spec.K
    z = _normals(int(seed), step0 * K, (step1 - step0) * K).reshape(-1, K)
    return z * np.sqrt(dt)


def _bridge_pair(parent: np.ndarray, z: np.ndarray, dt: float):
    """Split parent increments into Brownian-bridge halves.

    The conditional law of the first half given the total is
    N(parent/2, dt/4); the second half is derived as parent minus the first
    and the first is then re-derived against the rounded second, which pins
    fl(even + odd) to the parent up to at most one ulp.  Exact bitwise
    equality for every pair is unattainable in binary64: when a child is
    much larger than its parent, the parent's residue modulo the children's
    ulp grid is an invariant no representable pair can cancel.
    """
    even = 0.5 * parent + 0.5 * np.sqrt(dt) * z
    odd = parent - even
    mask = (even + odd) != parent
    if np.any(mask):
        even = np.where(mask, parent - odd, even)
    return even, odd


def refine_path(path: WienerPath) -> WienerPath:
    """Brownian-bridge midpoint refinement to step dt/2 on the same path.

    Consecutive child increments reproduce the parent increments to the
    last representable bit (most pairs bitwise, all within one ulp), so
    coupled dt-refinement studies run on one underlying path.
    """
    half = 0.5 * path.dt
    n2 = 2 * path.n_steps
    bridge_key = (int(path.seed) ^ 0x9E3779B97F4A7C15) + 977 * (path.level + 1)
    z = _normals(bridge_key & (2**64 - 1), 0, path.n_steps * path.K)
    z = z.reshape(path.n_steps, path.K)
    even, odd = _bridge_pair(path.increments, z, path.dt)
    child = np.empty((n2, path.K))
    child[0::2] = even
    child[1::2] = odd
    return WienerPath(seed=path.seed, dt=half, n_steps=n2, K=path.K,
                      increments=child, level=path.level + 1)
