"""Model coefficients c, gamma, f and every derived scalar map.

The wave speed c, friction gamma and source f are user-supplied closures
with declared bounds.  All primitive maps (antiderivatives of c, c^2,
gamma, gamma/c, sqrt(c'c)) are tabulated once by composite Gauss-Legendre
quadrature over a working range and inverted by monotone bracketing; no
closed forms are assumed.  Out-of-range queries are hard errors, never
extrapolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.interpolate import CubicSpline


class CoefficientRangeError(ValueError):
    """Query outside the tabulated working range."""


class NonMonotonicTabulationError(ValueError):
    """Tabulated primitive is not strictly increasing (violated bounds)."""


# 5-point Gauss-Legendre rule on [-1, 1]; exact for degree 9, so the
# per-interval quadrature error is negligible next to spline interpolation.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


def _cumulative_quadrature(func: Callable, nodes: np.ndarray) -> np.ndarray:
    """Integral of ``func`` from nodes[0] to every node, Gauss-Legendre per cell."""
    lef, rig = nodes[:-1], nodes[1:]
    mid = 0.5 * (lef + rig)
    half = 0.5 * (rig - lef)
    # shape (cells, 5)
    pts = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    vals = func(pts)
    cell = half * (vals @ _GL_WEIGHTS)
    out = np.empty(nodes.size)
    out[0] = 0.0
    np.cumsum(cell, out=out[1:])
    return out


@dataclass(frozen=True)
class ModelCoefficients:
    """Wave speed, friction and source with their declared bounds.

    kappa is a finite-range proxy for the liminf of c'(u) * int_ubar^u dv/c(v)
    as u -> -infinity, computed on a logarithmic grid down to ``kappa_floor``.
    Any finite-range proxy can misclassify pathological speeds; reports carry
    that caveat.
    """

    c: Callable
    c_prime: Callable
    c_second: Callable
    gamma: Callable
    gamma_prime: Callable
    f: Callable
    f_prime: Callable
    c1: float
    c2: float
    c3: float
    gamma1: float
    gamma2: float
    L: float
    ubar: float = 0.0
    kappa_floor: float = -1.0e6
    name: str = "custom"
    kappa: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "kappa", kappa_proxy(self, floor=self.kappa_floor))

    def tilde_c_prime(self, u):
        """Derivative of (1/4) log c, the coupling strength of the invariants."""
        return self.c_prime(u) / (4.0 * self.c(u))


def kappa_proxy(coeffs, floor: float = -1.0e6, n: int = 600) -> float:
    """min over a logarithmic grid of c'(u) g(u), g(u) = int_ubar^u dv/c.

    A proxy for the liminf as u -> -infinity; the grid reaches down to
    ``floor``.  Since g <= 0 and c' >= 0 below ubar the proxy is <= 0.
    """
    if floor >= coeffs.ubar - 1.0:
        floor = coeffs.ubar - 10.0
    # log-spaced depths below ubar, from 1e-3 down to |floor - ubar|
    depth = np.logspace(-3, np.log10(coeffs.ubar - floor), n)
    nodes = (coeffs.ubar - depth)[::-1]  # increasing, ends just below ubar
    nodes = np.append(nodes, coeffs.ubar)
    ginv = _cumulative_quadrature(lambda v: 1.0 / coeffs.c(v), nodes)
    g = ginv - ginv[-1]  # g(ubar) = 0
    vals = coeffs.c_prime(nodes) * g
    return float(np.min(vals))


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def _zero(u):
    return np.zeros_like(np.asarray(u, dtype=float))


def preset_constant(c0: float = 1.0, gamma0: float = 1.0) -> ModelCoefficients:
    """Constant speed and friction, no source."""
    return ModelCoefficients(
        c=lambda u: np.full_like(np.asarray(u, dtype=float), c0),
        c_prime=_zero,
        c_second=_zero,
        gamma=lambda u: np.full_like(np.asarray(u, dtype=float), gamma0),
        gamma_prime=_zero,
        f=_zero,
        f_prime=_zero,
        c1=c0, c2=c0, c3=0.0,
        gamma1=gamma0, gamma2=gamma0, L=0.0,
        name="constant",
    )


def preset_tanh_speed(a: float = 2.0, gamma0: float = 1.0,
                      gamma_amp: float = 0.0, f_amp: float = 0.0) -> ModelCoefficients:
    """Speed c(u) = a + tanh(u) (a > 1), friction gamma0 + gamma_amp tanh(u),
    source f_amp sin(u)."""
    if a <= 1.0:
        raise ValueError("tanh-speed preset needs a > 1 so that c >= a - 1 > 0")
    if abs(gamma_amp) >= gamma0:
        raise ValueError("need |gamma_amp| < gamma0 for a positive friction")

    def sech2(u):
        # overflow-safe: sech(u) = 2 e^{-|u|} / (1 + e^{-2|u|})
        s = np.exp(-np.abs(u))
        return (2.0 * s / (1.0 + s * s)) ** 2

    return ModelCoefficients(
        c=lambda u: a + np.tanh(u),
        c_prime=sech2,
        c_second=lambda u: -2.0 * np.tanh(u) * sech2(u),
        gamma=lambda u: gamma0 + gamma_amp * np.tanh(u),
        gamma_prime=lambda u: gamma_amp * sech2(u),
        f=lambda u: f_amp * np.sin(u),
        f_prime=lambda u: f_amp * np.cos(u),
        c1=a - 1.0, c2=a + 1.0, c3=1.0,
        gamma1=gamma0 - abs(gamma_amp), gamma2=gamma0 + abs(gamma_amp),
        L=abs(f_amp),
        name="tanh-speed",
    )


def preset_from_table(path) -> ModelCoefficients:
    """Generic coefficients splined from a CSV with columns u, c, gamma, f."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    u = np.asarray(data["u"], dtype=float)
    order = np.argsort(u)
    u = u[order]
    cs = CubicSpline(u, np.asarray(data["c"], dtype=float)[order])
    gs = CubicSpline(u, np.asarray(data["gamma"], dtype=float)[order])
    fs = CubicSpline(u, np.asarray(data["f"], dtype=float)[order])
    csd, csdd = cs.derivative(), cs.derivative(2)
    gsd, fsd = gs.derivative(), fs.derivative()
    probe = np.linspace(u[0], u[-1], 4001)
    return ModelCoefficients(
        c=cs, c_prime=csd, c_second=csdd,
        gamma=gs, gamma_prime=gsd, f=fs, f_prime=fsd,
        c1=float(np.min(cs(probe))), c2=float(np.max(cs(probe))),
        c3=float(np.max(csd(probe))),
        gamma1=float(np.min(gs(probe))), gamma2=float(np.max(gs(probe))),
        L=float(np.max(np.abs(fsd(probe)))),
        kappa_floor=float(u[0]),
        name="paper-generic",
    )


PRESETS = {
    "constant": preset_constant,
    "tanh-speed": preset_tanh_speed,
    "paper-generic": preset_from_table,
}


# ---------------------------------------------------------------------------
# tabulated monotone maps
# ---------------------------------------------------------------------------

class TabulatedMap:
    """Primitive map tabulated on a uniform grid with cubic interpolation.

    The inverse (available when the tabulation is strictly increasing) is
    found by monotone bracketing of the node table followed by Newton
    iterations clamped to the bracketing cell; accurate to ~1e-12 on the
    argument and robust because the forward slope is bounded away from zero.
    """

    def __init__(self, nodes: np.ndarray, values: np.ndarray, name: str,
                 require_increasing: bool = True):
        self.nodes = nodes
        self.values = values
        self.name = name
        diffs = np.diff(values)
        self.strictly_increasing = bool(np.all(diffs > 0.0))
        if require_increasing and not self.strictly_increasing:
            raise NonMonotonicTabulationError(
                f"tabulation of {name} is not strictly increasing; "
                "coefficient bounds are violated"
            )
        self._spline = CubicSpline(nodes, values)
        self._dspline = self._spline.derivative()

    @property
    def umin(self):
        return self.nodes[0]

    @property
    def umax(self):
        return self.nodes[-1]

    def _check_range(self, u, lo, hi, what):
        u = np.asarray(u, dtype=float)
        if np.any(u < lo) or np.any(u > hi):
            raise CoefficientRangeError(
                f"{what} query outside [{lo:g}, {hi:g}] for map {self.name} "
                f"(provoked by min={u.min():g}, max={u.max():g})"
            )
        return u

    def __call__(self, u):
        u = self._check_range(u, self.nodes[0], self.nodes[-1], "forward")
        return self._spline(u)

    def deriv(self, u):
        u = self._check_range(u, self.nodes[0], self.nodes[-1], "derivative")
        return self._dspline(u)

    def inverse(self, y):
        if not self.strictly_increasing:
            raise NonMonotonicTabulationError(
                f"map {self.name} has no inverse (not strictly increasing)"
            )
        y = self._check_range(y, self.values[0], self.values[-1], "inverse")
        scalar = np.isscalar(y) or np.asarray(y).ndim == 0
        y = np.atleast_1d(np.asarray(y, dtype=float))
        idx = np.clip(np.searchsorted(self.values, y) - 1, 0, self.nodes.size - 2)
        lo, hi = self.nodes[idx], self.nodes[idx + 1]
        u = np.interp(y, self.values, self.nodes)
        for _ in range(3):
            u = u - (self._spline(u) - y) / self._dspline(u)
            u = np.clip(u, lo, hi)
        return float(u[0]) if scalar else u


@dataclass
class PrimitiveMaps:
    """All tabulated primitives for one coefficient set on one working range."""

    coeffs: ModelCoefficients
    urange: tuple
    quad_step: float
    C: TabulatedMap              # int_0^r c
    C2: TabulatedMap             # int_0^u c^2
    Gamma: TabulatedMap          # int_0^u gamma
    Gamma_under: TabulatedMap    # int_0^u gamma/c
    k_map: TabulatedMap          # int_0^u sqrt(c'c)  (flat when c is constant)

    def C_inv(self, y):
        return self.C.inverse(y)

    def Gamma_inv(self, y):
        return self.Gamma.inverse(y)

    def Gamma_under_inv(self, y):
        return self.Gamma_under.inverse(y)

    def tilde_c_prime(self, u):
        return self.coeffs.tilde_c_prime(u)


def build_primitives(coeffs: ModelCoefficients,
                     urange: tuple = (-50.0, 50.0),
                     quad_step: float = 1.0 / 512.0) -> PrimitiveMaps:
    """Tabulate C, C2, Gamma, Gamma_under and k on ``urange``.

    The range must contain 0 (all primitives are normalized there) and the
    anticipated solution range.
    """
    lo, hi = float(urange[0]), float(urange[1])
    if not (lo < 0.0 < hi):
        raise ValueError(f"working range {urange} must contain 0")
    if quad_step <= 0:
        raise ValueError("quad_step must be positive")
    n = int(np.ceil((hi - lo) / quad_step))
    nodes = np.linspace(lo, hi, n + 1)

    def tab(func, name, require=True):
        vals = _cumulative_quadrature(func, nodes)
        # normalize so the primitive vanishes at 0
        vals = vals - np.interp(0.0, nodes, vals)
        return TabulatedMap(nodes, vals, name, require_increasing=require)

    return PrimitiveMaps(
        coeffs=coeffs,
        urange=(lo, hi),
        quad_step=quad_step,
        C=tab(coeffs.c, "C"),
        C2=tab(lambda u: coeffs.c(u) ** 2, "C2"),
        Gamma=tab(coeffs.gamma, "Gamma"),
        Gamma_under=tab(lambda u: coeffs.gamma(u) / coeffs.c(u), "Gamma_under"),
        k_map=tab(lambda u: np.sqrt(np.maximum(coeffs.c_prime(u), 0.0) * coeffs.c(u)),
                  "k", require=False),
    )


# ---------------------------------------------------------------------------
# the h / H construction behind the parabolic-in-mu energy estimate
# ---------------------------------------------------------------------------

class HFuncs(NamedTuple):
    h: Callable
    h_prime: Callable
    H: Callable
    u_star: float
    u_under: float
    shift: float


def build_h_H(coeffs: ModelCoefficients,
              urange: tuple = (-50.0, 50.0),
              quad_step: float = 1.0 / 512.0) -> HFuncs:
    """Build h and H with h = H'/gamma, h' = 1/c and (hc)' >= (1+kappa)/2.

    Follows the constructive proof: g(u) = int_ubar^u dv/c; u_under is the
    largest sampled point below ubar such that c'(u) g(u) >= (kappa-1)/2 for
    every sampled u below it (range minimum if the threshold always holds
    below some point but never stabilizes);
    h = g + sup_{[u_under, ubar]} |g|;  u* = h^{-1}(0);
    H(u) = int_{u*}^u h(v) gamma(v) dv.

    When c is constant this degenerates to the affine h(u) = (u - u*)/c.
    """
    kappa = coeffs.kappa
    if kappa <= -1.0:
        raise ValueError(f"kappa proxy {kappa:g} <= -1; the construction fails")
    lo, hi = float(urange[0]), float(urange[1])
    if not (lo < coeffs.ubar < hi):
        raise ValueError("working range must contain ubar strictly")
    n = int(np.ceil((hi - lo) / quad_step))
    nodes = np.linspace(lo, hi, n + 1)

    ginv = _cumulative_quadrature(lambda v: 1.0 / coeffs.c(v), nodes)
    g_at_ubar = np.interp(coeffs.ubar, nodes, ginv)
    g_vals = ginv - g_at_ubar
    g_map = TabulatedMap(nodes, g_vals, "g")

    below = nodes <= coeffs.ubar
    cond = coeffs.c_prime(nodes) * g_vals >= 0.5 * (kappa - 1.0)
    ok_prefix = np.logical_and.accumulate(cond)
    candidates = nodes[below & ok_prefix & cond]
    u_under = float(candidates[-1]) if candidates.size else float(nodes[0])

    window = (nodes >= u_under) & (nodes <= coeffs.ubar)
    shift = float(np.max(np.abs(g_vals[window]))) if np.any(window) else 0.0

    h_vals = g_vals + shift
    if not (h_vals[0] < 0.0 < h_vals[-1] or np.any(h_vals == 0.0)):
        raise ValueError("h has no zero inside the working range; widen it")
    h_map = TabulatedMap(nodes, h_vals, "h")
    u_star = float(h_map.inverse(0.0))

    H_raw = _cumulative_quadrature(lambda v: h_map(v) * coeffs.gamma(v), nodes)
    H_vals = H_raw - np.interp(u_star, nodes, H_raw)
    H_map = TabulatedMap(nodes, H_vals, "H", require_increasing=False)

    return HFuncs(
        h=h_map,
        h_prime=lambda u: 1.0 / coeffs.c(u),
        H=H_map,
        u_star=u_star,
        u_under=u_under,
        shift=shift,
    )


# ---------------------------------------------------------------------------
# divergence-form coefficients of the limiting parabolic equation
# ---------------------------------------------------------------------------

class DivergenceCoeffs(NamedTuple):
    b: Callable            # b(p) = (c^2/gamma) o Gamma_under^{-1}
    F_div: Callable        # F_div(p, q) = (f/c - q c'/(2 gamma c^2)) o Gamma_under^{-1}
    psi_scale: Callable    # psi_scale(p) = 1/(c o Gamma_under^{-1})


def build_divergence_coeffs(prims: PrimitiveMaps,
                            coeffs: ModelCoefficients,
                            q_field: Optional[np.ndarray] = None) -> DivergenceCoeffs:
    """Coefficients of the divergence-form equation on p = Gamma_under(u).

    ``F_div(p, q)`` takes the q values aligned with p's grid; passing the
    stored ``q_field`` reproduces the configured forcing.
    """
    default_q = q_field

    def b(p):
        u = prims.Gamma_under_inv(p)
        return coeffs.c(u) ** 2 / coeffs.gamma(u)

    def F_div(p, q=None):
        qq = default_q if q is None else q
        if qq is None:
            qq = 0.0
        u = prims.Gamma_under_inv(p)
        cu = coeffs.c(u)
        return coeffs.f(u) / cu - qq * coeffs.c_prime(u) / (2.0 * coeffs.gamma(u) * cu**2)

    def psi_scale(p):
        return 1.0 / coeffs.c(prims.Gamma_under_inv(p))

    return DivergenceCoeffs(b=b, F_div=F_div, psi_scale=psi_scale)


# ---------------------------------------------------------------------------
# assumption verification
# ---------------------------------------------------------------------------

@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    value: float
    detail: str


@dataclass
class AssumptionReport:
    checks: list
    kappa: float
    banner: str = ("kappa is a finite-range proxy for an asymptotic liminf; "
                   "a pathological speed outside the probed range can evade it")

    @property
    def all_passed(self) -> bool:
        return all(ch.passed for ch in self.checks)

    def __str__(self):
        lines = [f"# {self.banner}"]
        for ch in self.checks:
            lines.append(
                f"{'PASS' if ch.passed else 'FAIL':4s}  {ch.name:28s} "
                f"value={ch.value:+.6g}  {ch.detail}"
            )
        return "\n".join(lines)


def verify_assumptions(coeffs: ModelCoefficients, u0: np.ndarray,
                       urange: tuple = (-50.0, 50.0),
                       n_samples: int = 4001) -> AssumptionReport:
    """Check every standing assumption on a sampled range, with extremal values."""
    u = np.linspace(urange[0], urange[1], n_samples)
    cu, cpu = coeffs.c(u), coeffs.c_prime(u)
    gu = coeffs.gamma(u)
    checks = []

    checks.append(AssumptionCheck(
        "speed-bounds", bool(np.min(cu) >= coeffs.c1 - 1e-12
                             and np.max(cu) <= coeffs.c2 + 1e-12
                             and np.min(cu) > 0.0),
        float(np.min(cu)), f"declared [{coeffs.c1:g}, {coeffs.c2:g}], max={np.max(cu):.6g}"))
    checks.append(AssumptionCheck(
        "speed-slope", bool(np.min(cpu) >= -1e-12 and np.max(cpu) <= coeffs.c3 + 1e-12),
        float(np.max(cpu)), f"0 <= c' <= {coeffs.c3:g}, min={np.min(cpu):.3g}"))
    checks.append(AssumptionCheck(
        "friction-bounds", bool(np.min(gu) >= coeffs.gamma1 - 1e-12
                                and np.max(gu) <= coeffs.gamma2 + 1e-12
                                and np.min(gu) > 0.0),
        float(np.min(gu)), f"declared [{coeffs.gamma1:g}, {coeffs.gamma2:g}]"))

    lip = float(np.max(np.abs(coeffs.f_prime(u))))
    checks.append(AssumptionCheck(
        "source-lipschitz", bool(lip <= coeffs.L + 1e-12),
        lip, f"max |f'| vs declared L={coeffs.L:g}"))

    smooth = float(np.max(np.abs(coeffs.c_second(u)) + np.abs(coeffs.gamma_prime(u))))
    checks.append(AssumptionCheck(
        "second-derivatives-finite", bool(np.isfinite(smooth)),
        smooth, "sup(|c''| + |gamma'|) on the sampled range"))

    checks.append(AssumptionCheck(
        "speed-growth-at-minus-infinity", bool(coeffs.kappa > -1.0),
        coeffs.kappa, f"kappa proxy down to u={coeffs.kappa_floor:g}, needs > -1"))

    inf_cp_u0 = float(np.min(coeffs.c_prime(np.asarray(u0, dtype=float))))
    checks.append(AssumptionCheck(
        "initial-slope-positivity", bool(inf_cp_u0 > 0.0),
        inf_cp_u0, "inf_x c'(u0(x)) must be > 0"))

    return AssumptionReport(checks=checks, kappa=coeffs.kappa)
