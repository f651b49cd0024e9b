"""Scenario registry, configuration, ensemble execution and output files.

Configs are flat ``key = value`` text with dotted sections.  Every scenario
is deterministic given (config bytes, base seed): per-path seeds derive from
the base seed and the path index, aggregation happens in path order after a
join barrier, and worker count never changes any emitted byte.  The manifest
echoes the config verbatim and lists a digest of every emitted file.
"""

from __future__ import annotations

import hashlib
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import coefficients as mc
from . import diagnostics as dg
from . import parabolic as pb
from . import wave as wv
from .grids import PeriodicGrid
from .noise import ModeSpec, NoiseSpec, build_noise, refine_path, sample_path


class ConfigError(ValueError):
    """Configuration does not validate (CLI exit status 2)."""


class ScenarioAssertionError(AssertionError):
    """A scenario-internal acceptance assertion failed (CLI exit status 1)."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.split("#", 1)[0].strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


@dataclass
class ExperimentConfig:
    """Typed view over the flat key = value config."""

    raw: dict
    raw_bytes: bytes

    scenario: str = ""
    seed: int = 0
    paths: int = 1
    workers: int = 1
    out_dir: str = "out"

    coeffs_preset: str = "tanh-speed"
    coeffs_params: dict = field(default_factory=dict)
    urange: tuple = (-50.0, 50.0)
    quad_step: float = 1.0 / 512.0

    N: int = 64
    dt: Optional[float] = None      # None -> CFL-derived where applicable
    T: float = 1.0
    cfl: float = 0.45
    snapshot_stride: int = 1

    mu_list: tuple = (0.1, 0.03, 0.01)
    eps_user: float = 0.1

    noise_modes: tuple = ()
    u0_offset: float = 0.5
    u0_amp: float = 0.1
    u0_k: int = 1
    v0_amp: float = 0.0
    v0_k: int = 1

    delta: float = 0.5
    p_exp: float = 2.0
    alpha: float = 0.75

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        raw = parse_config_text(text)
        cfg = cls(raw=raw, raw_bytes=text.encode())

        def get(key, default, conv):
            if key not in raw:
                return default
            try:
                return conv(raw[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {raw[key]!r} ({exc})")

        floats = lambda s: tuple(float(v) for v in s.split(",") if v.strip())
        cfg.scenario = get("scenario", cfg.scenario, str)
        cfg.seed = get("seed", cfg.seed, lambda s: int(s, 0))
        cfg.paths = get("paths", cfg.paths, int)
        cfg.workers = get("workers", cfg.workers, int)
        cfg.out_dir = get("out", cfg.out_dir, str)
        cfg.coeffs_preset = get("coeffs.preset", cfg.coeffs_preset, str)
        for key, value in raw.items():
            if key.startswith("coeffs.") and key not in ("coeffs.preset",
                                                         "coeffs.range",
                                                         "coeffs.quad_step"):
                name = key.split(".", 1)[1]
                try:
                    cfg.coeffs_params[name] = float(value)
                except ValueError:
                    cfg.coeffs_params[name] = value
        cfg.urange = get("coeffs.range", cfg.urange, floats)
        cfg.quad_step = get("coeffs.quad_step", cfg.quad_step, float)
        cfg.N = get("grid.N", cfg.N, int)
        cfg.dt = get("time.dt", cfg.dt,
                     lambda s: None if s == "auto" else float(s))
        cfg.T = get("time.T", cfg.T, float)
        cfg.cfl = get("time.cfl", cfg.cfl, float)
        cfg.snapshot_stride = get("snapshot.stride", cfg.snapshot_stride, int)
        cfg.mu_list = get("mu.list", cfg.mu_list, floats)
        cfg.eps_user = get("eps.user", cfg.eps_user, float)
        cfg.noise_modes = get("noise.modes", cfg.noise_modes, parse_modes)
        cfg.u0_offset = get("init.u0_offset", cfg.u0_offset, float)
        cfg.u0_amp = get("init.u0_amp", cfg.u0_amp, float)
        cfg.u0_k = get("init.u0_k", cfg.u0_k, int)
        cfg.v0_amp = get("init.v0_amp", cfg.v0_amp, float)
        cfg.v0_k = get("init.v0_k", cfg.v0_k, int)
        cfg.delta = get("report.delta", cfg.delta, float)
        cfg.p_exp = get("report.p_exp", cfg.p_exp, float)
        cfg.alpha = get("report.alpha", cfg.alpha, float)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())

    def validate(self) -> None:
        if self.scenario and self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; known: "
                              f"{sorted(SCENARIOS)}")
        for name in ("paths", "workers", "N", "u0_k", "v0_k", "snapshot_stride"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("T", "cfl", "eps_user", "quad_step"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive")
        if self.dt is not None and self.dt <= 0.0:
            raise ConfigError("time.dt must be positive or 'auto'")
        if len(self.mu_list) == 0 or any(m <= 0 for m in self.mu_list):
            raise ConfigError("mu.list must hold positive values")
        if any(b >= a for a, b in zip(self.mu_list, self.mu_list[1:])):
            raise ConfigError("mu.list must be strictly decreasing")
        if self.coeffs_preset not in mc.PRESETS:
            raise ConfigError(f"unknown coefficients preset "
                              f"{self.coeffs_preset!r}")
        if self.scenario == "sk-convergence" and len(self.mu_list) < 3:
            raise ConfigError("sk-convergence needs at least 3 mu values")
        if self.scenario in ("defect-decay",) and len(self.mu_list) < 2:
            raise ConfigError("defect-decay needs at least 2 mu values")


def parse_modes(text: str) -> tuple:
    """Parse 'sin:1:0.1, cos:2:0.05' into ModeSpec tuples."""
    modes = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) != 3 or parts[0] not in ("sin", "cos"):
            raise ValueError(f"mode spec {chunk!r} is not kind:k:amplitude")
        modes.append(ModeSpec(kind=parts[0], k=int(parts[1]),
                              amplitude=float(parts[2])))
    return tuple(modes)


# ---------------------------------------------------------------------------
# shared per-run context
# ---------------------------------------------------------------------------

def eps_effective(mu: float, cfg: ExperimentConfig, grid: PeriodicGrid):
    """Regularization width min(eps_user, mu), floored at dx.

    The floor keeps the mollifier resolvable on the configured grid; which
    bound was active is reported alongside every result.
    """
    eps = min(cfg.eps_user, mu)
    active = "user" if cfg.eps_user <= mu else "mu"
    if eps < grid.dx:
        return grid.dx, "dx-floor"
    return eps, active


@dataclass
class Context:
    cfg: ExperimentConfig
    grid: PeriodicGrid
    coeffs: mc.ModelCoefficients
    prims: mc.PrimitiveMaps
    u0: np.ndarray
    v0: np.ndarray
    _noise_cache: dict = field(default_factory=dict)

    def noise(self, eps: float) -> NoiseSpec:
        key = round(eps, 15)
        if key not in self._noise_cache:
            self._noise_cache[key] = build_noise(self.cfg.noise_modes,
                                                 self.grid, eps)
        return self._noise_cache[key]


def build_context(cfg: ExperimentConfig, coeffs=None) -> Context:
    grid = PeriodicGrid(cfg.N)
    if coeffs is None:
        preset = mc.PRESETS[cfg.coeffs_preset]
        coeffs = preset(**cfg.coeffs_params)
    prims = mc.build_primitives(coeffs, cfg.urange, cfg.quad_step)
    u0 = cfg.u0_offset + cfg.u0_amp * np.sin(2 * np.pi * cfg.u0_k * grid.x)
    v0 = cfg.v0_amp * np.sin(2 * np.pi * cfg.v0_k * grid.x)
    return Context(cfg=cfg, grid=grid, coeffs=coeffs, prims=prims,
                   u0=u0, v0=v0)


def derive_path_seed(base_seed: int, index: int) -> int:
    """Stable per-path seed; SeedSequence hashing is specified by numpy."""
    state = np.random.SeedSequence([int(base_seed), int(index)])
    return int(state.generate_state(1, np.uint64)[0])


class EnsembleError(RuntimeError):
    pass


def ensemble(run_one: Callable, M: int, base_seed: int, workers: int = 1) -> list:
    """M independent runs with derived seeds; results in path order.

    run_one(seed, index) must be a pure function of its arguments; failures
    abort with the path index and seed for replay.
    """
    if M < 1:
        raise ValueError("ensemble needs M >= 1")
    seeds = [derive_path_seed(base_seed, i) for i in range(M)]

    def guarded(i):
        try:
            return run_one(seeds[i], i)
        except Exception as exc:
            raise EnsembleError(f"path {i} (seed {seeds[i]}) failed: {exc}") from exc

    if workers <= 1:
        return [guarded(i) for i in range(M)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(guarded, i) for i in range(M)]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


class ScenarioIO:
    """Deterministic CSV/.dat emission with digest bookkeeping."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.files = []

    def write_text(self, name: str, text: str) -> Path:
        path = self.out_dir / name
        path.write_text(text)
        self.files.append(path)
        return path

    def write_csv(self, name: str, header, rows, preamble: str = "") -> Path:
        lines = []
        if preamble:
            lines.extend("# " + ln for ln in preamble.splitlines())
        lines.append(",".join(header))
        for row in rows:
            lines.append(",".join(_fmt(v) for v in row))
        return self.write_text(name, "\n".join(lines) + "\n")

    def write_report(self, name: str, report: dg.ConvergenceReport,
                     preamble: str = "") -> Path:
        rows = list(report.rows())
        rows.append(("slope", report.slope, "", "", ""))
        path = self.write_csv(name, ("parameter", "median", "q25", "q75",
                                     "stderr"), rows, preamble=preamble)
        dat = "\n".join(f"{_fmt(p)} {_fmt(m)}"
                        for p, m, *_ in report.rows()) + "\n"
        self.write_text(name.replace(".csv", ".dat"), dat)
        return path

    def manifest(self, cfg: ExperimentConfig, wall_time: float,
                 notes: str = "") -> Path:
        import scipy
        lines = [
            "# skvarwave manifest",
            f"scenario = {cfg.scenario}",
            f"base_seed = {cfg.seed}",
            f"paths = {cfg.paths}",
            f"python = {sys.version.split()[0]}",
            f"numpy = {np.__version__}",
            f"scipy = {scipy.__version__}",
            f"wall_time_s = {wall_time:.3f}",
            f"config_sha256 = {hashlib.sha256(cfg.raw_bytes).hexdigest()}",
        ]
        if notes:
            lines.extend("note = " + ln for ln in notes.splitlines())
        lines.append("[config]")
        lines.append(cfg.raw_bytes.decode())
        lines.append("[files]")
        for path in self.files:
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            lines.append(f"{path.name} {digest}")
        path = self.out_dir / "manifest.txt"
        path.write_text("\n".join(lines) + "\n")
        return path


# ---------------------------------------------------------------------------
# scenario implementations
# ---------------------------------------------------------------------------

def _wave_dt(cfg: ExperimentConfig, mu: float, grid: PeriodicGrid,
             coeffs) -> float:
    if cfg.dt is not None:
        return cfg.dt
    return cfg.cfl * np.sqrt(mu) * grid.dx / coeffs.c2


def _run_wave_path(ctx: Context, mu: float, dt: float, n_steps: int, seed: int,
                   snapshot_stride: int = 1, observers=()):
    eps, _ = eps_effective(mu, ctx.cfg, ctx.grid)
    spec = ctx.noise(eps)
    path = sample_path(spec, seed, dt, n_steps)
    return wv.run(ctx.u0, ctx.v0, mu, eps, dt, n_steps, path, spec, ctx.prims,
                  ctx.coeffs, ctx.grid, snapshot_stride=snapshot_stride,
                  cfl=min(0.999, ctx.cfg.cfl * 2.0), observers=observers)


def scenario_validate_assumptions(cfg: ExperimentConfig, io: ScenarioIO,
                                  workers: int):
    ctx = build_context(cfg)
    report = mc.verify_assumptions(ctx.coeffs, ctx.u0, cfg.urange)
    rows = [(ch.name, "PASS" if ch.passed else "FAIL", ch.value, ch.detail)
            for ch in report.checks]
    io.write_csv("assumptions.csv", ("assumption", "status", "value", "detail"),
                 rows, preamble=report.banner)
    if not report.all_passed:
        failed = [ch.name for ch in report.checks if not ch.passed]
        return False, f"assumption checks failed: {failed}"
    return True, f"all {len(rows)} assumption checks passed (kappa proxy " \
                 f"{report.kappa:+.3g})"


def scenario_constant_oracle(cfg: ExperimentConfig, io: ScenarioIO,
                             workers: int):
    """Stationary first-mode variance of wave and all parabolic forms against
    the 2x2 Lyapunov oracle (criteria: constant-coefficient oracles)."""
    c0 = float(cfg.coeffs_params.get("c0", 1.0))
    gamma0 = float(cfg.coeffs_params.get("gamma0", 1.0))
    ctx = build_context(cfg, coeffs=mc.preset_constant(c0=c0, gamma0=gamma0))
    mu = cfg.mu_list[0]
    grid = ctx.grid
    dt = _wave_dt(cfg, mu, grid, ctx.coeffs)
    n_steps = int(round(cfg.T / dt))
    burn = min(2.0, 0.25 * cfg.T)
    if len(cfg.noise_modes) != 1:
        raise ConfigError("constant-oracle expects exactly one noise mode")
    mode = cfg.noise_modes[0]
    # orthonormal-mode amplitude: profile amp * sin(2 pi k x) has L2 norm amp/sqrt(2)
    mode_amp = mode.amplitude / np.sqrt(2.0)
    lyap = dg.lyapunov_mode_variance(mode_amp, gamma0, c0, mode.k)
    lyap_num = dg.lyapunov_mode_variance(mode_amp, gamma0, c0, mode.k, mu=mu)

    u00 = np.zeros(grid.N)

    def wave_one(seed, index):
        eps, _ = eps_effective(mu, cfg, grid)
        spec = ctx.noise(eps)
        path = sample_path(spec, seed, dt, n_steps)
        res = wv.run(u00, u00, mu, eps, dt, n_steps, path, spec, ctx.prims,
                     ctx.coeffs, grid, snapshot_stride=1, cfl=0.999)
        a = dg.first_sine_mode(res.trajectory.u, grid, mode.k)
        keep = res.trajectory.times >= burn
        return float(np.var(a[keep]))

    def parab_one(form):
        def run_one(seed, index):
            eps, _ = eps_effective(mu, cfg, grid)
            spec = ctx.noise(eps)
            path = sample_path(spec, seed, dt, n_steps)
            div = mc.build_divergence_coeffs(ctx.prims, ctx.coeffs,
                                             spec.q_field)
            res = pb.run_parabolic(u00, form, dt, n_steps, path, spec,
                                   ctx.prims, ctx.coeffs, grid, div=div)
            a = dg.first_sine_mode(res.u_fields, grid, mode.k)
            keep = res.times >= burn
            return float(np.var(a[keep]))
        return run_one

    rows = []
    messages = []
    ok = True
    wave_vars = ensemble(wave_one, cfg.paths, cfg.seed, workers)
    est, se = dg.ensemble_mean_stderr(wave_vars)
    rows.append(("wave", est, se, lyap, abs(est - lyap) / max(se, 1e-300)))
    if abs(est - lyap) > 3.0 * se:
        ok = False
        messages.append(f"wave variance {est:.4g} vs Lyapunov {lyap:.4g} "
                        f"outside 3 s.e. ({se:.2g})")
    form_estimates = {}
    for form in pb.FORMS:
        vals = ensemble(parab_one(form), cfg.paths, cfg.seed, workers)
        fest, fse = dg.ensemble_mean_stderr(vals)
        form_estimates[form] = (fest, fse)
        rows.append((f"parabolic-{form}", fest, fse, lyap,
                     abs(fest - lyap) / max(fse, 1e-300)))
        if abs(fest - lyap) > 3.0 * fse:
            ok = False
            messages.append(f"parabolic {form} variance {fest:.4g} vs "
                            f"Lyapunov {lyap:.4g} outside 3 s.e. ({fse:.2g})")
    for fa in pb.FORMS:
        for fb in pb.FORMS:
            if fa < fb:
                ea, sa = form_estimates[fa]
                eb, sb = form_estimates[fb]
                gap = abs(ea - eb)
                lim = 2.0 * np.hypot(sa, sb)
                if gap > lim + 1e-300:
                    ok = False
                    messages.append(f"forms {fa},{fb} disagree: gap {gap:.3g} "
                                    f"> 2 s.e. {lim:.3g}")
    io.write_csv("constant_oracle.csv",
                 ("solver", "variance", "stderr", "lyapunov", "sigma_distance"),
                 rows,
                 preamble=f"stationary Lyapunov value {lyap:.12g} "
                          f"(mu-resolved {lyap_num:.12g}); mu={mu}, dt={dt:g}, "
                          f"N={grid.N}, T={cfg.T}, burn-in {burn}")
    msg = "; ".join(messages) if messages else \
        f"all solvers within 3 s.e. of Lyapunov variance {lyap:.4g}"
    return ok, msg


def scenario_energy_ledger(cfg: ExperimentConfig, io: ScenarioIO, workers: int):
    """Mean energy-balance residual must drop >= 1.4x per dt halving."""
    ctx = build_context(cfg)
    mu = cfg.mu_list[0]
    grid = ctx.grid
    dt0 = _wave_dt(cfg, mu, grid, ctx.coeffs)
    n0 = int(round(cfg.T / dt0))
    eps, _ = eps_effective(mu, cfg, grid)
    spec = ctx.noise(eps)

    def run_one(seed, index):
        path = sample_path(spec, seed, dt0, n0)
        out = []
        for level in range(3):
            res = wv.run(ctx.u0, ctx.v0, mu, eps, path.dt, path.n_steps, path,
                         spec, ctx.prims, ctx.coeffs, grid,
                         snapshot_stride=path.n_steps, cfl=0.999)
            out.append(dg.energy_balance_residual(res.ledger, cfg.T))
            if level < 2:
                path = refine_path(path)
        return out

    results = np.array(ensemble(run_one, cfg.paths, cfg.seed, workers))
    dts = np.array([dt0, dt0 / 2, dt0 / 4])
    report = dg.ConvergenceReport("dt", dts, [results[:, i] for i in range(3)])
    io.write_report("energy_ledger_residual.csv", report,
                    preamble=f"mu={mu}, N={grid.N}, T={cfg.T}, paths={cfg.paths}")
    means = report.mean
    r1, r2 = means[0] / means[1], means[1] / means[2]
    ok = bool(r1 >= 1.4 and r2 >= 1.4)
    msg = (f"energy residual means {means[0]:.3g} -> {means[1]:.3g} -> "
           f"{means[2]:.3g}; ratios {r1:.2f}, {r2:.2f} (required >= 1.4)")
    return ok, msg


def scenario_formulation_equivalence(cfg: ExperimentConfig, io: ScenarioIO,
                                     workers: int):
    """||Gamma(u)-w|| and ||Gamma_under(u)-p|| under coupled (dt, dx^2)
    refinement must both shrink >= 1.4x per level."""
    base_N = cfg.N
    dt0 = cfg.dt if cfg.dt is not None else 2e-3
    n0 = int(round(cfg.T / dt0))
    preset = mc.PRESETS[cfg.coeffs_preset]
    coeffs = preset(**cfg.coeffs_params)
    prims = mc.build_primitives(coeffs, cfg.urange, cfg.quad_step)
    seed = derive_path_seed(cfg.seed, 0)

    dist_w, dist_p, dts = [], [], []
    path = None
    for level in range(3):
        N = base_N * 2**level
        dt = dt0 / 4**level
        n_steps = n0 * 4**level
        grid = PeriodicGrid(N)
        spec = build_noise(cfg.noise_modes, grid, eps=max(grid.dx, 0.05))
        if path is None:
            path = sample_path(spec, seed, dt0, n0)
        else:
            path = refine_path(refine_path(path))
        div = mc.build_divergence_coeffs(prims, coeffs, spec.q_field)
        u0 = cfg.u0_offset + cfg.u0_amp * np.sin(2 * np.pi * cfg.u0_k * grid.x)
        stride = max(1, n_steps // 64)
        runs = {form: pb.run_parabolic(u0, form, dt, n_steps, path, spec,
                                       prims, coeffs, grid, div=div,
                                       snapshot_stride=stride)
                for form in pb.FORMS}
        tu = runs[pb.U_FORM]
        gamma_u = np.asarray(prims.Gamma(tu.u_fields))
        gunder_u = np.asarray(prims.Gamma_under(tu.u_fields))
        dw = np.sqrt(np.trapezoid(
            [np.mean((gamma_u[i] - runs[pb.W_FORM].fields[i])**2)
             for i in range(len(tu.times))], tu.times))
        dp = np.sqrt(np.trapezoid(
            [np.mean((gunder_u[i] - runs[pb.P_FORM].fields[i])**2)
             for i in range(len(tu.times))], tu.times))
        dist_w.append(float(dw))
        dist_p.append(float(dp))
        dts.append(dt)

    rows = [(dts[i], base_N * 2**i, dist_w[i], dist_p[i]) for i in range(3)]
    io.write_csv("formulation_equivalence.csv",
                 ("dt", "N", "dist_gamma_w", "dist_gammaunder_p"), rows,
                 preamble=f"coupled (dt, dx^2) refinement, T={cfg.T}")
    io.write_text("formulation_equivalence.dat",
                  "\n".join(f"{_fmt(d)} {_fmt(w)} {_fmt(p)}"
                            for d, w, p in zip(dts, dist_w, dist_p)) + "\n")
    ratios = [dist_w[0] / dist_w[1], dist_w[1] / dist_w[2],
              dist_p[0] / dist_p[1], dist_p[1] / dist_p[2]]
    ok = all(r >= 1.4 for r in ratios)
    msg = (f"w-dist {dist_w[0]:.3g}->{dist_w[1]:.3g}->{dist_w[2]:.3g}, "
           f"p-dist {dist_p[0]:.3g}->{dist_p[1]:.3g}->{dist_p[2]:.3g}; "
           f"ratios {['%.2f' % r for r in ratios]} (required >= 1.4)")
    return ok, msg


def scenario_sk_convergence(cfg: ExperimentConfig, io: ScenarioIO, workers: int):
    """Median wave-vs-limit distances strictly decreasing in mu on coupled
    noise (no rate is asserted, only monotone decrease)."""
    ctx = build_context(cfg)
    grid = ctx.grid
    mu0 = cfg.mu_list[0]
    dt0 = _wave_dt(cfg, mu0, grid, ctx.coeffs)
    n0 = int(round(cfg.T / dt0))
    dt0 = cfg.T / n0
    levels = []
    for m in cfg.mu_list:
        target = cfg.cfl * np.sqrt(m) * grid.dx / ctx.coeffs.c2
        j = max(0, int(np.ceil(np.log2(dt0 / target))))
        levels.append(j)

    base_stride = max(1, n0 // 50)

    def run_one(seed, index):
        eps0, _ = eps_effective(mu0, cfg, grid)
        path0 = sample_path(ctx.noise(eps0), seed, dt0, n0)
        out = []
        for m, j in zip(cfg.mu_list, levels):
            path = path0
            for _ in range(j):
                path = refine_path(path)
            eps, _ = eps_effective(m, cfg, grid)
            spec = ctx.noise(eps)
            stride = base_stride * 2**j
            wres = wv.run(ctx.u0, ctx.v0, m, eps, path.dt, path.n_steps, path,
                          spec, ctx.prims, ctx.coeffs, grid,
                          snapshot_stride=stride, cfl=0.999)
            div = mc.build_divergence_coeffs(ctx.prims, ctx.coeffs, spec.q_field)
            pres = pb.run_parabolic(ctx.u0, pb.U_FORM, path.dt, path.n_steps,
                                    path, spec, ctx.prims, ctx.coeffs, grid,
                                    div=div, snapshot_stride=stride)
            d_h, d_p = dg.sk_distance(wres.trajectory.u, pres.u_fields,
                                      wres.trajectory.times, grid,
                                      delta=cfg.delta, p_exp=cfg.p_exp)
            out.append((d_h, d_p))
        return out

    results = np.array(ensemble(run_one, cfg.paths, cfg.seed, workers))
    mus = np.asarray(cfg.mu_list)
    rep_h = dg.ConvergenceReport("mu", mus,
                                 [results[:, i, 0] for i in range(len(mus))])
    rep_p = dg.ConvergenceReport("mu", mus,
                                 [results[:, i, 1] for i in range(len(mus))])
    io.write_report("sk_distance_hdelta.csv", rep_h,
                    preamble=f"L2([0,T];H^{cfg.delta}) distance, "
                             f"paths={cfg.paths}, T={cfg.T}, N={grid.N}")
    io.write_report("sk_distance_lp.csv", rep_p,
                    preamble=f"L^{cfg.p_exp}([0,T];L2) distance")
    mono_h = bool(np.all(np.diff(rep_h.median) < 0.0))
    mono_p = bool(np.all(np.diff(rep_p.median) < 0.0))
    ok = mono_h and mono_p
    msg = (f"median H^{cfg.delta} distances {[f'{v:.4g}' for v in rep_h.median]}, "
           f"L{cfg.p_exp:g}-L2 {[f'{v:.4g}' for v in rep_p.median]}; "
           f"strictly decreasing in mu: {mono_h}/{mono_p}")
    return ok, msg


def scenario_defect_decay(cfg: ExperimentConfig, io: ScenarioIO, workers: int):
    """E[(int (2 mu gamma u_t^2 - q) psi)^+] decreasing in mu with separated
    2 s.e. intervals (constant preset), plus the defect-density pairing
    within 2 s.e. of zero or shrinking (tanh preset)."""
    c0 = float(cfg.coeffs_params.get("c0", 1.0))
    gamma0 = float(cfg.coeffs_params.get("gamma0", 1.0))
    ctx_const = build_context(cfg, coeffs=mc.preset_constant(c0=c0,
                                                             gamma0=gamma0))
    grid = ctx_const.grid
    t_bump = dg.make_time_bump(0.15 * cfg.T, 0.85 * cfg.T)
    space_w = 1.0 + 0.5 * np.cos(2 * np.pi * grid.x)

    def defect_one(ctx, mu, accumulator_cls):
        dt = _wave_dt(cfg, mu, grid, ctx.coeffs)
        n_steps = int(round(cfg.T / dt))
        eps, _ = eps_effective(mu, cfg, grid)
        spec = ctx.noise(eps)

        def run_one(seed, index):
            acc = accumulator_cls(t_bump, space_w, spec.q_field, ctx.coeffs,
                                  grid)
            path = sample_path(spec, seed, dt, n_steps)
            wv.run(ctx.u0, ctx.v0, mu, eps, dt, n_steps, path, spec, ctx.prims,
                   ctx.coeffs, grid, snapshot_stride=n_steps, cfl=0.999,
                   observers=(acc,))
            if accumulator_cls is dg.DefectAccumulator:
                return acc.positive_part()
            return acc.total
        return ensemble(run_one, cfg.paths, cfg.seed, workers)

    mus = cfg.mu_list[:2]
    rows = []
    stats = []
    for m in mus:
        vals = defect_one(ctx_const, m, dg.DefectAccumulator)
        est, se = dg.ensemble_mean_stderr(vals)
        stats.append((est, se))
        rows.append(("constant-positive-part", m, est, se))
    (e1, s1), (e2, s2) = stats
    separated = bool(e2 + 2 * s2 < e1 - 2 * s1)

    ctx_tanh = build_context(cfg)
    tanh_stats = []
    for m in mus:
        vals = defect_one(ctx_tanh, m, dg.DefectFieldAccumulator)
        est, se = dg.ensemble_mean_stderr(vals)
        tanh_stats.append((est, se))
        rows.append(("tanh-defect-pairing", m, est, se))
    (te1, ts1), (te2, ts2) = tanh_stats
    tanh_ok = bool(abs(te2) <= 2 * ts2 or abs(te2) < abs(te1))

    io.write_csv("defect_decay.csv", ("statistic", "mu", "mean", "stderr"),
                 rows, preamble=f"paths={cfg.paths}, T={cfg.T}, N={grid.N}; "
                                f"psi = smooth time bump x (1+cos/2)")
    ok = separated and tanh_ok
    msg = (f"positive part {e1:.4g}+-{s1:.2g} (mu={mus[0]}) vs "
           f"{e2:.4g}+-{s2:.2g} (mu={mus[1]}), separated={separated}; "
           f"defect pairing {te1:.3g}+-{ts1:.2g} -> {te2:.3g}+-{ts2:.2g}, "
           f"ok={tanh_ok}")
    return ok, msg


def scenario_ito_suite(cfg: ExperimentConfig, io: ScenarioIO, workers: int):
    """Both discrete Ito identities: mean-square residual slope 1 +- 0.3."""
    grid = PeriodicGrid(cfg.N)
    sigma = np.stack([m.sample(grid) for m in cfg.noise_modes]) \
        if cfg.noise_modes else 0.1 * np.sin(2 * np.pi * grid.x)[None, :]
    H = np.ones(grid.N)
    phi = 1.0 + 0.5 * np.sin(2 * np.pi * grid.x)
    u0 = 0.5 * np.sin(2 * np.pi * grid.x)
    dt0 = cfg.dt if cfg.dt is not None else 0.45 * grid.dx**2
    n0 = max(1, int(round(cfg.T / dt0)))
    dts = [dt0, dt0 / 2, dt0 / 4]

    def lap(u):
        return (np.roll(u, -1) - 2 * u + np.roll(u, 1)) / grid.dx**2

    rep1 = dg.ito_check_1(grid, sigma, H, lap, np.sin, np.cos,
                          lambda u: -np.sin(u), phi, u0, dts, n0,
                          n_paths=cfg.paths, seed=cfg.seed)

    # damping 2.0 keeps the explicit second-order update stable at dt ~ dx^2/2
    def drift2(u, v):
        return lap(u) - 2.0 * v

    gamma_fn = lambda u: u                      # Gamma(u) = u (unit friction)
    gamma_tilde = lambda u: 1.0 - np.cos(u)     # integral of Psi * Gamma'
    phi_fn = lambda t: phi * (1.0 + 0.3 * np.sin(t))
    phi_t_fn = lambda t: phi * 0.3 * np.cos(t)
    v0 = 0.3 * np.cos(2 * np.pi * grid.x)
    rep2 = dg.ito_check_2(grid, sigma, H, drift2, gamma_fn, gamma_tilde,
                          np.sin, np.cos, phi_fn, phi_t_fn, u0, v0, dts, n0,
                          n_paths=cfg.paths, seed=cfg.seed + 1)

    io.write_report("ito_check_1.csv", rep1,
                    preamble=f"mean-square residual, {cfg.paths} paths")
    io.write_report("ito_check_2.csv", rep2,
                    preamble=f"mean-square residual, {cfg.paths} paths")
    ok = bool(abs(rep1.slope_mean - 1.0) <= 0.3
              and abs(rep2.slope_mean - 1.0) <= 0.3)
    msg = (f"mean-square residual slopes {rep1.slope_mean:.3f} and "
           f"{rep2.slope_mean:.3f} (required 1 +- 0.3)")
    return ok, msg


def scenario_theta_residual(cfg: ExperimentConfig, io: ScenarioIO, workers: int):
    """L1-in-time residual of sqrt(mu) dTheta/dt = alpha_chi + beta Theta
    must shrink >= 1.4x per coupled (dt, dx) halving."""
    mu = cfg.mu_list[0]
    preset = mc.PRESETS[cfg.coeffs_preset]
    coeffs = preset(**cfg.coeffs_params)
    prims = mc.build_primitives(coeffs, cfg.urange, cfg.quad_step)
    seed = derive_path_seed(cfg.seed, 0)

    grid0 = PeriodicGrid(cfg.N)
    dt0 = _wave_dt(cfg, mu, grid0, coeffs)
    n0 = int(round(cfg.T / dt0))
    dt0 = cfg.T / n0

    res_l1 = []
    dts = []
    path = None
    for level in range(3):
        N = cfg.N * 2**level
        grid = PeriodicGrid(N)
        dt = dt0 / 2**level
        n_steps = n0 * 2**level
        eps, _ = eps_effective(mu, cfg, grid)
        spec = build_noise(cfg.noise_modes, grid, eps)
        if path is None:
            path = sample_path(spec, seed, dt, n_steps)
        else:
            path = refine_path(path)
        u0 = cfg.u0_offset + cfg.u0_amp * np.sin(2 * np.pi * cfg.u0_k * grid.x)
        v0 = cfg.v0_amp * np.sin(2 * np.pi * cfg.v0_k * grid.x)
        res = wv.run(u0, v0, mu, eps, dt, n_steps, path, spec, prims, coeffs,
                     grid, snapshot_stride=n_steps, cfl=0.999)
        th = res.trajectory.theta
        al = res.trajectory.alpha_chi
        be = res.trajectory.beta
        resid = (np.sqrt(mu) * np.diff(th) / dt
                 - (al[:-1] + be[:-1] * th[:-1]))
        res_l1.append(float(np.sum(np.abs(resid)) * dt))
        dts.append(dt)

    rows = [(dts[i], cfg.N * 2**i, res_l1[i]) for i in range(3)]
    io.write_csv("theta_residual.csv", ("dt", "N", "l1_residual"), rows,
                 preamble=f"mu={mu}, coupled (dt, dx) refinement")
    io.write_text("theta_residual.dat",
                  "\n".join(f"{_fmt(d)} {_fmt(r)}"
                            for d, r in zip(dts, res_l1)) + "\n")
    r1, r2 = res_l1[0] / res_l1[1], res_l1[1] / res_l1[2]
    ok = bool(r1 >= 1.4 and r2 >= 1.4)
    msg = (f"theta residual L1 {res_l1[0]:.3g} -> {res_l1[1]:.3g} -> "
           f"{res_l1[2]:.3g}; ratios {r1:.2f}, {r2:.2f} (required >= 1.4)")
    return ok, msg


SCENARIOS = {
    "validate-assumptions": scenario_validate_assumptions,
    "constant-oracle": scenario_constant_oracle,
    "energy-ledger": scenario_energy_ledger,
    "formulation-equivalence": scenario_formulation_equivalence,
    "sk-convergence": scenario_sk_convergence,
    "defect-decay": scenario_defect_decay,
    "ito-suite": scenario_ito_suite,
    "theta-residual": scenario_theta_residual,
}


@dataclass
class ScenarioOutcome:
    passed: bool
    message: str
    out_dir: Path
    manifest: Path


def run_scenario(cfg: ExperimentConfig, force: bool = False,
                 workers: Optional[int] = None) -> ScenarioOutcome:
    """Execute the configured scenario, emit files and the manifest."""
    if cfg.scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {cfg.scenario!r}")
    n_workers = cfg.workers if workers is None else workers
    io = ScenarioIO(Path(cfg.out_dir))
    if cfg.scenario not in ("ito-suite", "validate-assumptions"):
        ctx = build_context(cfg)
        report = mc.verify_assumptions(ctx.coeffs, ctx.u0, cfg.urange)
        if not report.all_passed and not force:
            failed = [ch.name for ch in report.checks if not ch.passed]
            raise ConfigError(f"assumption checks failed: {failed}; rerun "
                              f"with --force to proceed anyway")
    t0 = time.perf_counter()
    passed, message = SCENARIOS[cfg.scenario](cfg, io, n_workers)
    wall = time.perf_counter() - t0
    manifest = io.manifest(cfg, wall, notes=message)
    return ScenarioOutcome(passed=passed, message=message,
                           out_dir=io.out_dir, manifest=manifest)
