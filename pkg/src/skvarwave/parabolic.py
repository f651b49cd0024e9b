"""Semi-implicit integration of the limiting quasilinear parabolic SPDE.

The same limit dynamics can be driven in three unknowns:

  U_FORM  du = (c(u)/gamma(u)) (c(u) u_x)_x dt + [f(u)/gamma(u)
               - gamma'(u) q(x) / (2 gamma(u)^3)] dt + Phi/gamma(u) dW
  W_FORM  dw = alpha(w) (beta(w) w_x)_x dt + f(G^{-1}(w)) dt + Phi dW,
          w = Gamma(u), alpha = c o Gamma^{-1}, beta = (c/gamma) o Gamma^{-1}
  P_FORM  dp = (b(p) p_x)_x dt + F(x, p) dt + psi_scale(p) Phi dW,
          p = Gamma_under(u), b = (c^2/gamma) o Gamma_under^{-1}

The drift in U_FORM carries the Ito correction produced by state-dependent
friction meeting the noise; it vanishes identically for constant gamma.
Each step freezes the diffusion coefficient at the current state and solves
one periodic tridiagonal system; reaction, correction drift and noise enter
the right-hand side explicitly.  Non-divergence forms use the same face
products c D-(c D+ .) as the divergence form so summation by parts is
inherited.  The limit equation sees the raw noise profiles (never the
mollified ones; the regularization parameter lives in the wave solver only).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_banded

from .coefficients import DivergenceCoeffs, ModelCoefficients, PrimitiveMaps
from .grids import PeriodicGrid, as_field, derivative
from .noise import NoiseSpec, WienerPath

U_FORM = "u"
W_FORM = "w"
P_FORM = "p"
FORMS = (U_FORM, W_FORM, P_FORM)


class TridiagonalSolveError(RuntimeError):
    """Loss of diagonal dominance: the frozen diffusion coefficient is not
    positive, i.e. the coefficient bounds are violated."""


def solve_cyclic_tridiagonal(low: np.ndarray, diag: np.ndarray, up: np.ndarray,
                             rhs: np.ndarray) -> np.ndarray:
    """Solve the periodic tridiagonal system by Sherman-Morrison.

    Row j reads low[j] x[j-1] + diag[j] x[j] + up[j] x[j+1] = rhs[j] with
    periodic wrap-around; requires strict diagonal dominance.
    """
    n = diag.size
    if np.any(np.abs(diag) <= np.abs(low) + np.abs(up) - 1e-14):
        raise TridiagonalSolveError("system is not strictly diagonally dominant")
    corner_low = low[0]    # A[0, n-1]
    corner_up = up[n - 1]  # A[n-1, 0]
    gamma = -diag[0]
    d = diag.copy()
    d[0] -= gamma
    d[n - 1] -= corner_low * corner_up / gamma

    ab = np.zeros((3, n))
    ab[0, 1:] = up[:-1]
    ab[1, :] = d
    ab[2, :-1] = low[1:]

    u_vec = np.zeros(n)
    u_vec[0] = gamma
    u_vec[n - 1] = corner_up
    sol = solve_banded((1, 1), ab, np.stack([rhs, u_vec], axis=1))
    y, z = sol[:, 0], sol[:, 1]
    vy = y[0] + corner_low / gamma * y[n - 1]
    vz = z[0] + corner_low / gamma * z[n - 1]
    return y - z * (vy / (1.0 + vz))


@dataclass(frozen=True)
class ParabolicState:
    grid: PeriodicGrid
    form: str
    t: float
    field: np.ndarray


def _faces(values: np.ndarray) -> np.ndarray:
    """Arithmetic face averages; entry j sits between nodes j and j+1."""
    return 0.5 * (values + np.roll(values, -1))


def _implicit_solve(factor: np.ndarray, faces: np.ndarray, rhs: np.ndarray,
                    dx: float) -> np.ndarray:
    """Solve (I - dt L) x = rhs with (L v)_j = factor_j / dx^2 *
    [faces_j (v_{j+1} - v_j) - faces_{j-1} (v_j - v_{j-1})]."""
    r = factor / dx**2
    up = -r * faces
    low = -r * np.roll(faces, 1)
    diag = 1.0 - up - low
    return solve_cyclic_tridiagonal(low, diag, up, rhs)


def step_parabolic(state: ParabolicState, dW: np.ndarray, dt: float,
                   spec: NoiseSpec, prims: PrimitiveMaps,
                   coeffs: ModelCoefficients,
                   div: Optional[DivergenceCoeffs] = None,
                   ito_correction: bool = True) -> ParabolicState:
    """One semi-implicit step of the configured formulation."""
    grid = state.grid
    y = state.field
    noise = spec.sigma.T @ dW if spec.K else 0.0

    if state.form == U_FORM:
        cu = coeffs.c(y)
        gu = coeffs.gamma(y)
        drift = coeffs.f(y) / gu
        if ito_correction:
            drift = drift - coeffs.gamma_prime(y) * spec.q_field / (2.0 * gu**3)
        rhs = y + dt * drift + noise / gu
        new = _implicit_solve(dt * cu / gu, _faces(cu), rhs, grid.dx)
    elif state.form == W_FORM:
        u = prims.Gamma_inv(y)
        alpha = coeffs.c(u)
        beta = coeffs.c(u) / coeffs.gamma(u)
        rhs = y + dt * coeffs.f(u) + noise
        new = _implicit_solve(dt * alpha, _faces(beta), rhs, grid.dx)
    elif state.form == P_FORM:
        if div is None:
            raise ValueError("P_FORM stepping needs the divergence coefficients")
        rhs = y + dt * div.F_div(y, spec.q_field) + div.psi_scale(y) * noise
        new = _implicit_solve(np.full(grid.N, dt), _faces(div.b(y)), rhs, grid.dx)
    else:
        raise ValueError(f"unknown form {state.form!r}")

    return replace(state, t=state.t + dt, field=as_field(new, grid))


def convert(state: ParabolicState, target: str,
            prims: PrimitiveMaps) -> ParabolicState:
    """Pointwise change of unknown between the three formulations."""
    if target not in FORMS:
        raise ValueError(f"unknown form {target!r}")
    if target == state.form:
        return state
    to_u = {U_FORM: lambda y: y,
            W_FORM: prims.Gamma_inv,
            P_FORM: prims.Gamma_under_inv}[state.form]
    from_u = {U_FORM: lambda u: u,
              W_FORM: prims.Gamma,
              P_FORM: prims.Gamma_under}[target]
    u = to_u(state.field)
    return replace(state, form=target, field=np.asarray(from_u(u), dtype=float))


@dataclass
class ParabolicRunResult:
    form: str
    times: np.ndarray            # snapshot times
    fields: np.ndarray           # (n_snap, N) in the evolved form
    u_fields: np.ndarray         # (n_snap, N) converted to the displacement
    full_fields: Optional[np.ndarray]   # (n_steps+1, N) when stored
    path: WienerPath
    n_steps: int
    dt: float


def reaction_stability_limit(coeffs: ModelCoefficients) -> float:
    """dt bound 0.5 / L_reaction for the explicit reaction term."""
    L_reac = coeffs.L / coeffs.gamma1
    return np.inf if L_reac == 0.0 else 0.5 / L_reac


def run_parabolic(u0: np.ndarray, form: str, dt: float, n_steps: int,
                  path: WienerPath, spec: NoiseSpec, prims: PrimitiveMaps,
                  coeffs: ModelCoefficients, grid: PeriodicGrid,
                  div: Optional[DivergenceCoeffs] = None,
                  snapshot_stride: int = 1, store_full: bool = False,
                  ito_correction: bool = True) -> ParabolicRunResult:
    """Integrate the chosen formulation from the displacement data u0."""
    if path.n_steps < n_steps:
        raise ValueError("path is shorter than the requested number of steps")
    if dt > reaction_stability_limit(coeffs) * (1.0 + 1e-12):
        raise ValueError(f"dt={dt:g} exceeds the explicit-reaction bound "
                         f"{reaction_stability_limit(coeffs):g}")
    u0 = as_field(u0, grid)
    from_u = {U_FORM: lambda u: u, W_FORM: prims.Gamma,
              P_FORM: prims.Gamma_under}[form]
    to_u = {U_FORM: lambda y: y, W_FORM: prims.Gamma_inv,
            P_FORM: prims.Gamma_under_inv}[form]
    state = ParabolicState(grid=grid, form=form, t=0.0,
                           field=np.asarray(from_u(u0), dtype=float))

    n_snap = n_steps // snapshot_stride + 1 + (1 if n_steps % snapshot_stride else 0)
    times = np.zeros(n_snap)
    fields = np.zeros((n_snap, grid.N))
    u_fields = np.zeros((n_snap, grid.N))
    full = np.zeros((n_steps + 1, grid.N)) if store_full else None

    def snap(i, st):
        times[i] = st.t
        fields[i] = st.field
        u_fields[i] = to_u(st.field)

    snap(0, state)
    if store_full:
        full[0] = state.field
    i_snap = 1
    for n in range(n_steps):
        state = step_parabolic(state, path.increments[n], dt, spec, prims,
                               coeffs, div=div, ito_correction=ito_correction)
        if store_full:
            full[n + 1] = state.field
        if (n + 1) % snapshot_stride == 0:
            snap(i_snap, state)
            i_snap += 1
    if i_snap < n_snap:
        snap(n_snap - 1, state)

    return ParabolicRunResult(form=form, times=times, fields=fields,
                              u_fields=u_fields, full_fields=full, path=path,
                              n_steps=n_steps, dt=dt)


def weak_residual(result: ParabolicRunResult, phi: np.ndarray,
                  spec: NoiseSpec, prims: PrimitiveMaps,
                  coeffs: ModelCoefficients, grid: PeriodicGrid,
                  div: Optional[DivergenceCoeffs] = None,
                  n_steps: Optional[int] = None,
                  ito_correction: bool = True) -> float:
    """Discrete defect of the weak formulation over [0, t_n].

    Uses the per-step trajectory (``store_full=True``) with left-endpoint
    time quadrature, spectral derivatives for the dualities, and the exact
    increments the solver consumed for the stochastic sum.  Independent of
    the solver's own stencils, so it measures the gap between the discrete
    trajectory and the continuum weak identity; for the constant-coefficient
    heat case it shrinks at O(dt + dx^2) under coupled refinement.
    """
    if result.full_fields is None:
        raise ValueError("weak_residual needs a run stored with store_full=True")
    phi = as_field(phi, grid)
    m = result.n_steps if n_steps is None else int(n_steps)
    if m == 0:
        return 0.0
    fields = result.full_fields
    dW = result.path.increments
    dt = result.dt
    phi_x = derivative(phi, grid, "spectral")

    boundary = grid.integrate((fields[m] - fields[0]) * phi)
    drift_sum = 0.0
    sto_sum = 0.0
    for n in range(m):
        y = fields[n]
        if result.form == U_FORM:
            u = y
            gu = coeffs.gamma(u)
            cu = coeffs.c(u)
            ux = derivative(u, grid, "spectral")
            pair = derivative(cu / gu * phi, grid, "spectral")
            drift = -grid.integrate(cu * ux * pair)
            react = coeffs.f(u) / gu
            if ito_correction:
                react = react - coeffs.gamma_prime(u) * spec.q_field / (2.0 * gu**3)
            drift += grid.integrate(react * phi)
            scale = 1.0 / gu
        elif result.form == W_FORM:
            u = prims.Gamma_inv(y)
            alpha = coeffs.c(u)
            beta = alpha / coeffs.gamma(u)
            wx = derivative(y, grid, "spectral")
            pair = derivative(alpha * phi, grid, "spectral")
            drift = -grid.integrate(beta * wx * pair)
            drift += grid.integrate(coeffs.f(u) * phi)
            scale = np.ones(grid.N)
        else:
            if div is None:
                raise ValueError("P_FORM residual needs divergence coefficients")
            px = derivative(y, grid, "spectral")
            drift = -grid.integrate(div.b(y) * px * phi_x)
            drift += grid.integrate(div.F_div(y, spec.q_field) * phi)
            scale = div.psi_scale(y)
        drift_sum += dt * drift
        if spec.K:
            sto_sum += float((spec.sigma @ (scale * phi)) @ dW[n]) * grid.dx
    return float(abs(boundary - drift_sum - sto_sum))
