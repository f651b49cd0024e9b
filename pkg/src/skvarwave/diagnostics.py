"""Energy ledger, convergence reports, limit distances and Ito-formula checks.

Conventions shared by every diagnostic here:

* u_t always means the accumulated-displacement derivative
  (R + S)/(2 sqrt(mu)), the quantity the uniform estimates control; the
  reconstructed-u time derivative appears only in the Xi diagnostic of the
  wave module.
* Martingale terms are reconstructed from the exact increments the solver
  consumed, never re-sampled, so residuals measure scheme error only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .grids import PeriodicGrid, sobolev_norm


# ---------------------------------------------------------------------------
# energy ledger
# ---------------------------------------------------------------------------

@dataclass
class EnergyLedger:
    """Running discrete terms of the wave energy balance.

    mu E(t) + 4 mu * frictional(t) + truncation(t)
        = mu E(0) + q_input(t) + forcing(t) + martingale(t) + residual

    with E = int (R^2 + S^2), frictional = int int gamma(u) u_t^2,
    truncation = 2 sqrt(mu) int int c'(u)/(4c(u)) [R chi(R) + S chi(S)],
    q_input = 2 ||q^eps||_L1 t, forcing = 4 mu int int u_t f(u_check) and
    martingale = 4 mu sum_k int u_t sigma_k^eps dx dW_k.
    """

    mu: float
    q_eps_l1: float
    t: np.ndarray
    E_mu: np.ndarray
    frictional: np.ndarray
    truncation: np.ndarray
    forcing: np.ndarray
    martingale: np.ndarray
    n_recorded: int = 0

    @classmethod
    def empty(cls, mu: float, n_steps: int, q_eps_l1: float) -> "EnergyLedger":
        z = lambda: np.zeros(n_steps + 1)
        return cls(mu=mu, q_eps_l1=q_eps_l1, t=z(), E_mu=z(), frictional=z(),
                   truncation=z(), forcing=z(), martingale=z())

    def record_initial(self, energy: float) -> None:
        self.E_mu[0] = energy
        self.n_recorded = 1

    def record_step(self, n: int, t: float, energy: float, frictional_inc: float,
                    truncation_inc: float, forcing_inc: float,
                    martingale_inc: float) -> None:
        self.t[n] = t
        self.E_mu[n] = energy
        self.frictional[n] = self.frictional[n - 1] + frictional_inc
        self.truncation[n] = self.truncation[n - 1] + truncation_inc
        self.forcing[n] = self.forcing[n - 1] + forcing_inc
        self.martingale[n] = self.martingale[n - 1] + martingale_inc
        self.n_recorded = n + 1

    def truncate(self, n: int) -> None:
        for name in ("t", "E_mu", "frictional", "truncation", "forcing",
                     "martingale"):
            setattr(self, name, getattr(self, name)[:n])
        self.n_recorded = min(self.n_recorded, n)

    def q_input(self) -> np.ndarray:
        return 2.0 * self.q_eps_l1 * self.t

    def residual_series(self) -> np.ndarray:
        lhs = self.mu * self.E_mu + 4.0 * self.mu * self.frictional + self.truncation
        rhs = (self.mu * self.E_mu[0] + self.q_input() + self.forcing
               + self.martingale)
        return lhs - rhs


def energy_balance_residual(ledger: EnergyLedger, t: float) -> float:
    """|LHS - RHS| of the discrete energy balance at the recorded time <= t."""
    times = ledger.t[:ledger.n_recorded]
    if t > times[-1] + 1e-12:
        raise ValueError(f"t={t:g} beyond the ledger horizon {times[-1]:g}")
    n = int(np.searchsorted(times, t - 1e-14))
    n = min(n, ledger.n_recorded - 1)
    return float(abs(ledger.residual_series()[n]))


# ---------------------------------------------------------------------------
# convergence report
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceReport:
    """Distance statistics across an ensemble at a decreasing parameter list."""

    parameter_name: str
    parameters: np.ndarray            # strictly decreasing
    samples: list                     # one array of per-path values per parameter
    median: np.ndarray = field(init=False)
    q25: np.ndarray = field(init=False)
    q75: np.ndarray = field(init=False)
    mean: np.ndarray = field(init=False)
    stderr: np.ndarray = field(init=False)
    slope: float = field(init=False)

    def __post_init__(self):
        p = np.asarray(self.parameters, dtype=float)
        if np.any(np.diff(p) >= 0.0):
            raise ValueError("parameter list must be strictly decreasing")
        arrs = [np.asarray(s, dtype=float) for s in self.samples]
        if any(np.any(a < 0.0) for a in arrs):
            raise ValueError("distances must be nonnegative")
        self.parameters = p
        self.median = np.array([np.median(a) for a in arrs])
        self.q25 = np.array([np.quantile(a, 0.25) for a in arrs])
        self.q75 = np.array([np.quantile(a, 0.75) for a in arrs])
        self.mean = np.array([np.mean(a) for a in arrs])
        self.stderr = np.array([np.std(a, ddof=1) / np.sqrt(a.size) if a.size > 1
                                else 0.0 for a in arrs])
        pos = self.median > 0.0
        if np.count_nonzero(pos) >= 2:
            self.slope = float(np.polyfit(np.log(p[pos]),
                                          np.log(self.median[pos]), 1)[0])
        else:
            self.slope = float("nan")
        pos = self.mean > 0.0
        if np.count_nonzero(pos) >= 2:
            self.slope_mean = float(np.polyfit(np.log(p[pos]),
                                               np.log(self.mean[pos]), 1)[0])
        else:
            self.slope_mean = float("nan")

    def rows(self):
        for i, p in enumerate(self.parameters):
            yield (p, self.median[i], self.q25[i], self.q75[i], self.stderr[i])

    def __str__(self):
        head = f"{self.parameter_name:>12s} {'median':>13s} {'q25':>13s} " \
               f"{'q75':>13s} {'stderr':>13s}"
        body = [f"{p:12.5g} {m:13.6g} {a:13.6g} {b:13.6g} {s:13.6g}"
                for p, m, a, b, s in self.rows()]
        return "\n".join([head, *body, f"{'log-log slope':>12s} {self.slope:13.4f}"])


# ---------------------------------------------------------------------------
# distances for the small-mass limit experiment
# ---------------------------------------------------------------------------

def sk_distance(u_wave: np.ndarray, u_limit: np.ndarray, times: np.ndarray,
                grid: PeriodicGrid, delta: float = 0.5, p_exp: float = 2.0):
    """(L2-in-time H^delta, Lp-in-time L2) distances of two snapshot arrays.

    Both trajectories must share the grid and the snapshot times; time
    integrals use the trapezoid rule on the common stride.
    """
    u_wave = np.asarray(u_wave, dtype=float)
    u_limit = np.asarray(u_limit, dtype=float)
    if u_wave.shape != u_limit.shape:
        raise ValueError(f"trajectory shapes differ: {u_wave.shape} vs "
                         f"{u_limit.shape}")
    if u_wave.shape[0] != len(times) or u_wave.shape[1] != grid.N:
        raise ValueError("snapshot array does not match times/grid")
    diff = u_wave - u_limit
    hs = np.array([sobolev_norm(d, delta, grid) for d in diff])
    l2 = np.array([sobolev_norm(d, 0.0, grid) for d in diff])
    d_h = float(np.sqrt(np.trapezoid(hs**2, times)))
    d_p = float(np.trapezoid(l2**p_exp, times) ** (1.0 / p_exp))
    return d_h, d_p


# ---------------------------------------------------------------------------
# per-step accumulators for defect-measure statistics
# ---------------------------------------------------------------------------

def make_time_bump(t0: float, t1: float) -> Callable:
    """Smooth bump supported on (t0, t1) (the classical exp(-1/(1-s^2)))."""
    if not t1 > t0:
        raise ValueError("need t1 > t0")

    def bump(t):
        s = (2.0 * (np.asarray(t, dtype=float) - t0) / (t1 - t0)) - 1.0
        out = np.zeros_like(s)
        inside = np.abs(s) < 1.0
        out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
        return out

    return bump


class DefectAccumulator:
    """Per-step integral of (2 mu gamma(u) u_t^2 - q) psi over time and space.

    psi(t, x) = time_weight(t) * space_weight(x) must be nonnegative with
    time support strictly inside the run window.  The positive part of the
    total is the defect-decay statistic.
    """

    def __init__(self, time_weight: Callable, space_weight: np.ndarray,
                 q_field: np.ndarray, coeffs, grid: PeriodicGrid):
        self.time_weight = time_weight
        self.space_weight = np.asarray(space_weight, dtype=float)
        if np.any(self.space_weight < 0.0):
            raise ValueError("psi must be nonnegative")
        self.q_field = q_field
        self.coeffs = coeffs
        self.grid = grid
        self.total = 0.0

    def __call__(self, old, new, dt, n):
        w = float(self.time_weight(old.t))
        if w < 0.0:
            raise ValueError("psi must be nonnegative")
        if w == 0.0:
            return
        ut = old.u_check_t()
        integrand = (2.0 * old.mu * self.coeffs.gamma(old.u) * ut**2
                     - self.q_field) * self.space_weight
        self.total += w * dt * self.grid.integrate(integrand)

    def positive_part(self) -> float:
        return max(self.total, 0.0)


class DefectFieldAccumulator:
    """psi-paired estimate of the defect density
    c'(u) (mu gamma(u) u_t^2 - q/2) / (c(u) gamma(u))."""

    def __init__(self, time_weight: Callable, space_weight: np.ndarray,
                 q_field: np.ndarray, coeffs, grid: PeriodicGrid):
        self.time_weight = time_weight
        self.space_weight = np.asarray(space_weight, dtype=float)
        self.q_field = q_field
        self.coeffs = coeffs
        self.grid = grid
        self.total = 0.0

    def __call__(self, old, new, dt, n):
        w = float(self.time_weight(old.t))
        if w == 0.0:
            return
        ut = old.u_check_t()
        cu = self.coeffs.c(old.u)
        gu = self.coeffs.gamma(old.u)
        r = old.mu * gu * ut**2
        dens = self.coeffs.c_prime(old.u) * (r - 0.5 * self.q_field) / (cu * gu)
        self.total += w * dt * self.grid.integrate(dens * self.space_weight)


def ensemble_mean_stderr(values: Sequence[float]):
    v = np.asarray(values, dtype=float)
    return float(np.mean(v)), float(np.std(v, ddof=1) / np.sqrt(v.size))


# ---------------------------------------------------------------------------
# stationary oracle for constant coefficients
# ---------------------------------------------------------------------------

def lyapunov_mode_variance(mode_amp: float, gamma0: float, c0: float,
                           wavenumber: int = 1, mu: Optional[float] = None) -> float:
    """Stationary variance of one orthonormal Fourier mode of u.

    For constant coefficients the mode a(t) obeys
    mu a'' + gamma0 a' + (2 pi k c0)^2 a = mode_amp dW; the stationary
    variance mode_amp^2 / (2 gamma0 (2 pi k c0)^2) is independent of mu and
    equals the mu = 0 (parabolic) value, which is what makes it a shared
    oracle for both solvers.  When ``mu`` is given the value is obtained by
    solving the 2x2 stationary Lyapunov equation instead of the closed form.
    """
    Kspring = (2.0 * np.pi * wavenumber * c0) ** 2
    if mu is None:
        return mode_amp**2 / (2.0 * gamma0 * Kspring)
    from scipy.linalg import solve_continuous_lyapunov
    A = np.array([[0.0, 1.0], [-Kspring / mu, -gamma0 / mu]])
    B = np.array([[0.0], [mode_amp / mu]])
    P = solve_continuous_lyapunov(A, -B @ B.T)
    return float(P[0, 0])


def first_sine_mode(u_snapshots: np.ndarray, grid: PeriodicGrid,
                    wavenumber: int = 1) -> np.ndarray:
    """Projection of each snapshot on the orthonormal mode sqrt(2) sin(2 pi k x)."""
    e = np.sqrt(2.0) * np.sin(2.0 * np.pi * wavenumber * grid.x)
    return (u_snapshots @ e) * grid.dx


# ---------------------------------------------------------------------------
# discrete Ito-formula checks (Monte Carlo)
# ---------------------------------------------------------------------------

def _evolve_additive(u0: np.ndarray, drift: Callable, H: np.ndarray,
                     sigma: np.ndarray, dW: np.ndarray, dt: float):
    """Explicit Euler-Maruyama du = drift(u) dt + H sum_k sigma_k dW_k,
    returning the full per-step states (n_steps+1, N)."""
    n_steps = dW.shape[0]
    out = np.empty((n_steps + 1, u0.size))
    out[0] = u0
    u = u0.copy()
    for n in range(n_steps):
        u = u + dt * drift(u) + H * (sigma.T @ dW[n])
        out[n + 1] = u
    return out


def ito_residual_first(u_states: np.ndarray, drift: Callable, H: np.ndarray,
                       sigma: np.ndarray, dW: np.ndarray, dt: float,
                       Psi: Callable, Psi_p: Callable, Psi_pp: Callable,
                       phi: np.ndarray, grid: PeriodicGrid) -> float:
    """Discrete defect of the chain-rule identity for Psi(u) paired with phi.

    All quadratures are left-endpoint and the stochastic sum reuses the
    increments that generated the trajectory.
    """
    n_steps = dW.shape[0]
    boundary = grid.integrate((Psi(u_states[-1]) - Psi(u_states[0])) * phi)
    drift_term = 0.0
    sto = 0.0
    corr = 0.0
    q_H2 = np.sum(sigma**2, axis=0) * H**2
    for n in range(n_steps):
        u = u_states[n]
        drift_term += dt * grid.integrate(Psi_p(u) * drift(u) * phi)
        sto += float((sigma @ (Psi_p(u) * H * phi)) @ dW[n]) * grid.dx
        corr += 0.5 * dt * grid.integrate(Psi_pp(u) * q_H2 * phi)
    return float(boundary - drift_term - sto - corr)


def ito_check_1(grid: PeriodicGrid, sigma: np.ndarray, H: np.ndarray,
                drift: Callable, Psi: Callable, Psi_p: Callable,
                Psi_pp: Callable, phi: np.ndarray, u0: np.ndarray,
                dt_levels: Sequence[float], n_steps0: int, n_paths: int,
                seed: int = 0) -> ConvergenceReport:
    """Mean-square residual of the first Ito identity at each dt level.

    dt_levels must halve from one level to the next; every path is evolved
    independently per level with increments refined by pairwise splitting so
    the levels share the underlying Brownian motion.
    """
    from .noise import _normals
    K = sigma.shape[0]
    residuals = [np.zeros(n_paths) for _ in dt_levels]
    for p in range(n_paths):
        z = _normals(seed + 7919 * p, 0, n_steps0 * K).reshape(n_steps0, K)
        dW = z * np.sqrt(dt_levels[0])
        for lev, dt in enumerate(dt_levels):
            if lev > 0:
                # midpoint split keeping the same path (bridge draws keyed per level)
                zb = _normals((seed ^ 0xABCDEF) + 104729 * p + lev, 0,
                              dW.shape[0] * K).reshape(dW.shape[0], K)
                even = 0.5 * dW + 0.5 * np.sqrt(2.0 * dt) * zb
                odd = dW - even
                dW = np.empty((2 * dW.shape[0], K))
                dW[0::2] = even
                dW[1::2] = odd
            states = _evolve_additive(u0, drift, H, sigma, dW, dt)
            residuals[lev][p] = ito_residual_first(
                states, drift, H, sigma, dW, dt, Psi, Psi_p, Psi_pp, phi, grid)
    return ConvergenceReport(parameter_name="dt",
                             parameters=np.asarray(dt_levels, dtype=float),
                             samples=[r**2 for r in residuals])


def _evolve_second_order(u0: np.ndarray, v0: np.ndarray, Gamma: Callable,
                         drift: Callable, H: np.ndarray, sigma: np.ndarray,
                         dW: np.ndarray, dt: float):
    """Discrete analog of d(u_t + Gamma(u)) = F dt + H sigma dW with
    du/dt = u_t; returns per-step (u, u_t) arrays."""
    n_steps = dW.shape[0]
    N = u0.size
    us = np.empty((n_steps + 1, N))
    vs = np.empty((n_steps + 1, N))
    us[0], vs[0] = u0, v0
    u, v = u0.copy(), v0.copy()
    m = v + Gamma(u)
    for n in range(n_steps):
        u_new = u + dt * v
        m = m + dt * drift(u, v) + H * (sigma.T @ dW[n])
        v = m - Gamma(u_new)
        u = u_new
        us[n + 1], vs[n + 1] = u, v
    return us, vs


def ito_residual_second(us: np.ndarray, vs: np.ndarray, drift: Callable,
                        Gamma_tilde: Callable, H: np.ndarray, sigma: np.ndarray,
                        dW: np.ndarray, dt: float, Psi: Callable,
                        Psi_p: Callable, phi: Callable, phi_t: Callable,
                        grid: PeriodicGrid) -> float:
    """Discrete defect of the product identity for Psi(u) u_t paired with a
    time-dependent phi;  Gamma_tilde' = Psi Gamma'."""
    n_steps = dW.shape[0]
    T = n_steps * dt
    res = grid.integrate(Psi(us[-1]) * vs[-1] * phi(T) - Psi(us[0]) * vs[0] * phi(0.0))
    res += grid.integrate(Gamma_tilde(us[-1]) * phi(T) - Gamma_tilde(us[0]) * phi(0.0))
    acc = 0.0
    for n in range(n_steps):
        t = n * dt
        u, v = us[n], vs[n]
        acc += dt * grid.integrate(Psi(u) * v * phi_t(t)
                                   + Psi_p(u) * v**2 * phi(t)
                                   + Gamma_tilde(u) * phi_t(t)
                                   + Psi(u) * drift(u, v) * phi(t))
        acc += float((sigma @ (Psi(u) * H * phi(t))) @ dW[n]) * grid.dx
    return float(res - acc)


def ito_check_2(grid: PeriodicGrid, sigma: np.ndarray, H: np.ndarray,
                drift: Callable, Gamma: Callable, Gamma_tilde: Callable,
                Psi: Callable, Psi_p: Callable, phi: Callable, phi_t: Callable,
                u0: np.ndarray, v0: np.ndarray, dt_levels: Sequence[float],
                n_steps0: int, n_paths: int, seed: int = 0) -> ConvergenceReport:
    """Mean-square residual of the second (product) Ito identity per dt level."""
    from .noise import _normals
    K = sigma.shape[0]
    residuals = [np.zeros(n_paths) for _ in dt_levels]
    for p in range(n_paths):
        z = _normals(seed + 6211 * p, 0, n_steps0 * K).reshape(n_steps0, K)
        dW = z * np.sqrt(dt_levels[0])
        for lev, dt in enumerate(dt_levels):
            if lev > 0:
                zb = _normals((seed ^ 0x5A5A5A) + 15485863 * p + lev, 0,
                              dW.shape[0] * K).reshape(dW.shape[0], K)
                even = 0.5 * dW + 0.5 * np.sqrt(2.0 * dt) * zb
                odd = dW - even
                dW = np.empty((2 * dW.shape[0], K))
                dW[0::2] = even
                dW[1::2] = odd
            us, vs = _evolve_second_order(u0, v0, Gamma, drift, H, sigma, dW, dt)
            residuals[lev][p] = ito_residual_second(
                us, vs, drift, Gamma_tilde, H, sigma, dW, dt, Psi, Psi_p,
                phi, phi_t, grid)
    return ConvergenceReport(parameter_name="dt",
                             parameters=np.asarray(dt_levels, dtype=float),
                             samples=[r**2 for r in residuals])
