"""Simulation and verification toolkit for the small-mass limit of the
1-D periodic stochastic variational wave equation.

The wave solver integrates the damped system in Riemann-invariant form;
the parabolic solver integrates the limiting quasilinear SPDE in its three
equivalent formulations; both couple to the same truncated cylindrical
Wiener noise, and the diagnostics check every identity and estimate that is
checkable at a discrete level (energy balance, correction-term dynamics,
defect-measure decay, limit distances, discrete Ito formulas).
"""

from .coefficients import (AssumptionReport, CoefficientRangeError,
                           DivergenceCoeffs, HFuncs, ModelCoefficients,
                           NonMonotonicTabulationError, PrimitiveMaps,
                           build_divergence_coeffs, build_h_H,
                           build_primitives, kappa_proxy, preset_constant,
                           preset_from_table, preset_tanh_speed,
                           verify_assumptions)
from .diagnostics import (ConvergenceReport, DefectAccumulator,
                          DefectFieldAccumulator, EnergyLedger,
                          energy_balance_residual, first_sine_mode,
                          ito_check_1, ito_check_2, lyapunov_mode_variance,
                          make_time_bump, sk_distance)
from .grids import (MollifierResolutionError, PeriodicGrid, as_field,
                    cumulative_integral, derivative, mollify, sobolev_norm)
from .noise import (ModeSpec, NoiseSpec, WienerPath, build_noise,
                    default_mode_family, increments_block, refine_path,
                    sample_path)
from .parabolic import (FORMS, P_FORM, ParabolicState, U_FORM, W_FORM,
                        convert, run_parabolic, step_parabolic, weak_residual)
from .wave import (BlowUpRecord, CflError, WaveState, chi_eps, init_state,
                   run, step, theta_rhs, xi_diagnostic)

__version__ = "0.1.0"
