"""Time integration of the regularized Riemann-invariant wave system.

State variables are the invariants R = sqrt(mu) u_t - c(u) u_x and
S = sqrt(mu) u_t + c(u) u_x of the damped variational wave equation, with
the quadratic cut-off chi_eps in the sources, the spatial-mean correction
Theta that keeps the reconstruction of u periodic, and the accumulated
displacement u_check whose time derivative is (R+S)/(2 sqrt(mu)).

One step is a Lie splitting:

  A. explicit first-order upwind transport at speeds +-c(u)/sqrt(mu) plus
     the non-stiff sources (coupling terms, cut-off, Theta terms, source f);
  B. exponential relaxation of Sigma = R+S at the frozen rate gamma(u)/mu
     with per-mode noise of the exact frozen-coefficient Ornstein-Uhlenbeck
     variance, the same draw entering R and S so that S-R receives zero
     stochastic input at every step.

The relaxation substep is exact in law for constant coefficients, which is
what the constant-coefficient stationary oracle certifies; the explicit
rate gamma/mu would otherwise force dt = O(mu).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .coefficients import CoefficientRangeError, ModelCoefficients, PrimitiveMaps
from .diagnostics import EnergyLedger
from .grids import PeriodicGrid, as_field, cumulative_integral, derivative, mollify
from .noise import NoiseSpec, WienerPath


class CflError(RuntimeError):
    """Transport CFL condition dt <= cfl * sqrt(mu) dx / c2 violated."""


class BlowUpError(RuntimeError):
    """Invariant growth or range exit; carries the blow-up time and reason."""

    def __init__(self, time: float, reason: str):
        super().__init__(f"blow-up at t={time:.6g}: {reason}")
        self.time = time
        self.reason = reason


@dataclass(frozen=True)
class BlowUpRecord:
    time: float
    reason: str


def chi_eps(xi, eps: float):
    """Quadratic cut-off (xi - 1/eps)^2 above the threshold 1/eps, else 0."""
    xi = np.asarray(xi, dtype=float)
    gap = xi - 1.0 / eps
    out = np.where(gap >= 0.0, gap * gap, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class WaveState:
    """Grid fields and scalars of one (mu, eps) wave run at time t."""

    grid: PeriodicGrid
    mu: float
    eps: float
    t: float
    R: np.ndarray
    S: np.ndarray
    u: np.ndarray
    u_check: np.ndarray
    u_at_0_integral: float      # running int_0^t (R+S)/(2 sqrt(mu)) at node 0
    u00: float                  # mollified initial displacement at node 0
    theta: float                # spatial mean of (S-R)/2

    def u_check_t(self) -> np.ndarray:
        return (self.R + self.S) / (2.0 * np.sqrt(self.mu))

    def energy(self) -> float:
        """Instantaneous energy integral of R^2 + S^2."""
        return self.grid.integrate(self.R**2 + self.S**2)

    def negative_part_extrema(self):
        """sup of the negative parts of sqrt(mu) u_t -+ c(u) u_x (optional
        entropy diagnostic; no pass/fail threshold is attached)."""
        minus = self.R + self.theta
        plus = self.S - self.theta
        return (float(np.max(np.maximum(-minus, 0.0))),
                float(np.max(np.maximum(-plus, 0.0))))


def init_state(u0: np.ndarray, v0: np.ndarray, mu: float, eps: float,
               prims: PrimitiveMaps, grid: PeriodicGrid) -> WaveState:
    """Mollified initial invariants and displacement.

    c(u0) u0' is evaluated as the spectral derivative of C(u0), which has an
    exactly vanishing grid mean; the initial Theta is then zero to round-off
    and the periodic reconstruction is solvable from the start.
    """
    u0 = as_field(u0, grid)
    v0 = as_field(v0, grid)
    sq = np.sqrt(mu)
    cux = derivative(prims.C(u0), grid, "spectral")
    R0 = mollify(sq * v0 - cux, eps, grid)
    S0 = mollify(sq * v0 + cux, eps, grid)
    u0e = prims.C_inv(mollify(prims.C(u0), eps, grid))
    theta0 = grid.mean(0.5 * (S0 - R0))
    return WaveState(grid=grid, mu=mu, eps=eps, t=0.0, R=R0, S=S0,
                     u=np.array(u0e, dtype=float), u_check=np.array(u0e, dtype=float),
                     u_at_0_integral=0.0, u00=float(u0e[0]), theta=theta0)


def _minmod(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.where(a * b > 0.0, np.where(np.abs(a) < np.abs(b), a, b), 0.0)


def _advect(f: np.ndarray, nu: np.ndarray, direction: int,
            scheme: str) -> np.ndarray:
    """One transport substep at local Courant numbers nu (all in [0, 1]).

    direction +1 moves the field right (R), -1 left (S).  'muscl' is the
    minmod-limited second-order reconstruction (monotone, and its interface
    differences telescope so the mean is conserved exactly); 'upwind' is the
    classical first-order scheme, noticeably dissipative at these Courant
    numbers.
    """
    if direction < 0:
        return _advect(f[::-1], nu[::-1], +1, scheme)[::-1]
    if scheme == "upwind":
        return f - nu * (f - np.roll(f, 1))
    if scheme != "muscl":
        raise ValueError(f"unknown transport scheme {scheme!r}")
    slope = _minmod(f - np.roll(f, 1), np.roll(f, -1) - f)
    face = f + 0.5 * (1.0 - nu) * slope      # value at the j+1/2 interface
    return f - nu * (face - np.roll(face, 1))


def step(state: WaveState, dW: np.ndarray, dt: float, spec: NoiseSpec,
         prims: PrimitiveMaps, coeffs: ModelCoefficients,
         scheme: str = "muscl") -> WaveState:
    """Advance one step of size dt consuming the increment row dW (K,)."""
    grid, mu, eps = state.grid, state.mu, state.eps
    sq = np.sqrt(mu)
    R, S, u, uc = state.R, state.S, state.u, state.u_check

    cu = coeffs.c(u)
    nu = cu * dt / (sq * grid.dx)
    numax = float(np.max(nu))
    if numax > 1.0:
        raise CflError(f"Courant number {numax:.3f} > 1 at t={state.t:.6g}; "
                       f"need dt <= sqrt(mu) dx / max c")

    # substep A: limited transport (speeds are positive for R, negative for S)
    Ra = _advect(R, nu, +1, scheme)
    Sa = _advect(S, nu, -1, scheme)
    tcp = coeffs.tilde_c_prime(u)
    chiR = chi_eps(R, eps)
    chiS = chi_eps(S, eps)
    fuc = coeffs.f(uc)
    th = state.theta
    R1 = Ra + (dt / sq) * (tcp * (R * R - S * S - chiR + 2.0 * R * th) + fuc)
    S1 = Sa + (dt / sq) * (tcp * (S * S - R * R - chiS - 2.0 * S * th) + fuc)

    # substep B: exact frozen-coefficient relaxation of Sigma plus noise;
    # Delta = S - R is untouched, so the noise cancels there identically
    gu = coeffs.gamma(u)
    a = gu * dt / mu
    rho = np.exp(-a)
    Sig = R1 + S1
    Del = S1 - R1
    if spec.K:
        amp = np.sqrt((2.0 / gu) * (-np.expm1(-2.0 * a)))
        xi = amp * (spec.sigma_eps.T @ (dW / np.sqrt(dt)))
        Sig = rho * Sig + xi
    else:
        Sig = rho * Sig
    R2 = 0.5 * (Sig - Del)
    S2 = 0.5 * (Sig + Del)

    sup_inv = max(float(np.max(np.abs(R2))), float(np.max(np.abs(S2))))
    if sup_inv > 10.0 / eps:
        raise BlowUpError(state.t + dt, f"invariant sup norm {sup_inv:.3g} "
                                        f"exceeded 10/eps = {10.0/eps:.3g}")

    theta2 = grid.mean(0.5 * (S2 - R2))

    # accumulate u_check and the anchor value u(t, 0) with the same trapezoid
    ut_old = (R + S) / (2.0 * sq)
    ut_new = (R2 + S2) / (2.0 * sq)
    uc2 = uc + 0.5 * dt * (ut_old + ut_new)
    u0int2 = state.u_at_0_integral + 0.5 * dt * (ut_old[0] + ut_new[0])

    # reconstruct u: integrand has zero grid mean by construction of theta
    integrand = 0.5 * (S2 - R2) - theta2
    G = cumulative_integral(integrand, grid)
    try:
        base = prims.C(state.u00 + u0int2)
        u2 = prims.C_inv(base + G)
    except CoefficientRangeError as exc:
        raise BlowUpError(state.t + dt, f"reconstruction left the working "
                                        f"range ({exc})") from exc

    return replace(state, t=state.t + dt, R=R2, S=S2, u=u2, u_check=uc2,
                   u_at_0_integral=u0int2, theta=theta2)


def theta_rhs(state: WaveState, coeffs: ModelCoefficients):
    """alpha_chi and beta of the correction-term dynamics
    sqrt(mu) dTheta/dt = alpha_chi + beta Theta."""
    tcp = coeffs.tilde_c_prime(state.u)
    alpha = state.grid.integrate(
        0.5 * tcp * (chi_eps(state.R, state.eps) - chi_eps(state.S, state.eps)))
    beta = state.grid.integrate(tcp * (state.R + state.S))
    return float(alpha), float(beta)


@dataclass(frozen=True)
class XiDiagnostic:
    """Both routes to the discrepancy Xi = sqrt(mu) (u_t - u_check_t)."""

    xi: np.ndarray            # finite differences of the stored u, u_check
    xi_from_zeta: np.ndarray  # (1/c(u)) int_0^x (zeta - mean zeta)
    zeta: np.ndarray
    zeta_bar: float


def xi_diagnostic(prev: WaveState, state: WaveState,
                  coeffs: ModelCoefficients) -> XiDiagnostic:
    """Compare the defining Xi with its integral representation.

    Needs two stored time levels for the finite-difference route; the two
    fields agree to O(dt + dx) under refinement.
    """
    dt = state.t - prev.t
    if dt <= 0.0:
        raise ValueError("xi diagnostic needs two increasing time levels")
    grid = state.grid
    tcp = coeffs.tilde_c_prime(state.u)
    zeta = tcp * (0.5 * (chi_eps(state.R, state.eps) - chi_eps(state.S, state.eps))
                  + (state.R + state.S) * state.theta)
    zeta_bar = grid.mean(zeta)
    xi_zeta = cumulative_integral(zeta - zeta_bar, grid) / coeffs.c(state.u)
    u_t = (state.u - prev.u) / dt
    uc_t = (state.u_check - prev.u_check) / dt
    xi_fd = np.sqrt(state.mu) * (u_t - uc_t)
    return XiDiagnostic(xi=xi_fd, xi_from_zeta=xi_zeta, zeta=zeta,
                        zeta_bar=float(zeta_bar))


@dataclass
class WaveTrajectory:
    """Fixed-stride snapshots plus the full per-step correction-term series."""

    times: np.ndarray          # (n_snap,)
    u: np.ndarray              # (n_snap, N)
    u_check: np.ndarray
    R: np.ndarray
    S: np.ndarray
    t_steps: np.ndarray        # (n_steps+1,)
    theta: np.ndarray          # (n_steps+1,)
    alpha_chi: np.ndarray      # (n_steps+1,)
    beta: np.ndarray           # (n_steps+1,)


@dataclass
class WaveRunResult:
    trajectory: WaveTrajectory
    ledger: EnergyLedger
    blow_up: Optional[BlowUpRecord]
    final_state: WaveState


def check_cfl(dt: float, mu: float, grid: PeriodicGrid, c2: float,
              cfl: float = 0.9) -> None:
    limit = cfl * np.sqrt(mu) * grid.dx / c2
    if dt > limit * (1.0 + 1e-12):
        raise CflError(f"dt={dt:g} exceeds cfl*sqrt(mu)*dx/c2 = {limit:g}")


def run(u0: np.ndarray, v0: np.ndarray, mu: float, eps: float, dt: float,
        n_steps: int, path: WienerPath, spec: NoiseSpec, prims: PrimitiveMaps,
        coeffs: ModelCoefficients, grid: PeriodicGrid,
        snapshot_stride: int = 1, cfl: float = 0.9,
        observers: Sequence[Callable] = ()) -> WaveRunResult:
    """Integrate n_steps steps, filling snapshots and the energy ledger.

    Deterministic given the inputs.  Observers are called as
    observer(old_state, new_state, dt, step_index) after every accepted step
    (per-step accumulation keeps fast-fluctuation statistics honest where
    snapshot-stride quadrature would not).  A blow-up truncates the run and
    is reported in the result, not raised.
    """
    if path.n_steps < n_steps:
        raise ValueError("path is shorter than the requested number of steps")
    check_cfl(dt, mu, grid, coeffs.c2, cfl)
    state = init_state(u0, v0, mu, eps, prims, grid)

    n_snap = n_steps // snapshot_stride + 1 + (1 if n_steps % snapshot_stride else 0)
    traj = WaveTrajectory(
        times=np.zeros(n_snap),
        u=np.zeros((n_snap, grid.N)), u_check=np.zeros((n_snap, grid.N)),
        R=np.zeros((n_snap, grid.N)), S=np.zeros((n_snap, grid.N)),
        t_steps=np.zeros(n_steps + 1), theta=np.zeros(n_steps + 1),
        alpha_chi=np.zeros(n_steps + 1), beta=np.zeros(n_steps + 1),
    )
    ledger = EnergyLedger.empty(mu, n_steps, q_eps_l1=spec.q_eps_l1())

    def record_snapshot(i_snap, st):
        traj.times[i_snap] = st.t
        traj.u[i_snap] = st.u
        traj.u_check[i_snap] = st.u_check
        traj.R[i_snap] = st.R
        traj.S[i_snap] = st.S

    def record_series(n, st):
        traj.t_steps[n] = st.t
        traj.theta[n] = st.theta
        a, b = theta_rhs(st, coeffs)
        traj.alpha_chi[n] = a
        traj.beta[n] = b

    record_snapshot(0, state)
    record_series(0, state)
    ledger.record_initial(state.energy())

    blow_up = None
    i_snap = 1
    sq = np.sqrt(mu)
    for n in range(n_steps):
        dW = path.increments[n]
        try:
            new = step(state, dW, dt, spec, prims, coeffs)
        except BlowUpError as exc:
            blow_up = BlowUpRecord(time=exc.time, reason=exc.reason)
            traj.times = traj.times[:i_snap]
            traj.u, traj.u_check = traj.u[:i_snap], traj.u_check[:i_snap]
            traj.R, traj.S = traj.R[:i_snap], traj.S[:i_snap]
            traj.t_steps = traj.t_steps[:n + 1]
            traj.theta = traj.theta[:n + 1]
            traj.alpha_chi = traj.alpha_chi[:n + 1]
            traj.beta = traj.beta[:n + 1]
            ledger.truncate(n + 1)
            break

        # ledger increments: trapezoid for the absolutely continuous terms,
        # left endpoint for the stochastic integral (the Ito choice)
        ut_old, ut_new = state.u_check_t(), new.u_check_t()
        fr_old = grid.integrate(coeffs.gamma(state.u) * ut_old**2)
        fr_new = grid.integrate(coeffs.gamma(new.u) * ut_new**2)
        tcp_old = coeffs.tilde_c_prime(state.u)
        tcp_new = coeffs.tilde_c_prime(new.u)
        trunc_old = grid.integrate(tcp_old * (state.R * chi_eps(state.R, eps)
                                              + state.S * chi_eps(state.S, eps)))
        trunc_new = grid.integrate(tcp_new * (new.R * chi_eps(new.R, eps)
                                              + new.S * chi_eps(new.S, eps)))
        fo_old = grid.integrate(ut_old * coeffs.f(state.u_check))
        fo_new = grid.integrate(ut_new * coeffs.f(new.u_check))
        mart_inc = 4.0 * mu * float(
            (spec.sigma_eps @ ut_old) @ dW) * grid.dx if spec.K else 0.0
        ledger.record_step(
            n + 1, t=new.t, energy=new.energy(),
            frictional_inc=0.5 * dt * (fr_old + fr_new),
            truncation_inc=2.0 * sq * 0.5 * dt * (trunc_old + trunc_new),
            forcing_inc=4.0 * mu * 0.5 * dt * (fo_old + fo_new),
            martingale_inc=mart_inc,
        )
        for obs in observers:
            obs(state, new, dt, n)
        record_series(n + 1, new)
        if (n + 1) % snapshot_stride == 0:
            record_snapshot(i_snap, new)
            i_snap += 1
        state = new

    if blow_up is None and i_snap < n_snap:
        record_snapshot(n_snap - 1, state)

    return WaveRunResult(trajectory=traj, ledger=ledger, blow_up=blow_up,
                         final_state=state)
