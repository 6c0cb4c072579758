"""Monte Carlo and quadrature tools for averaging of fast-slow SDEs driven by alpha-stable noise."""
from .stable_noise import (RngStream, StableCDFError, StableLaw, cdf_1d, gil_pelaez_cdf,
                           increment, levy_constant, levy_density, sample_unit)
from .systems import (HypothesisWarning, MultiscaleSystem, check_hypotheses, get_system,
                      register)
from .sde_engine import (IntegratorBlowUp, SamplePath, VariationalFlow, observe_frozen,
                         observe_sde, simulate_frozen, simulate_multiscale, simulate_variational,
                         step_multiscale)
from .fractional import (ConstantTail, GeneratorSpec, GridFunction, PeriodicTail,
                         QuadratureError, apply_generator, frac_laplacian, tabulate)
from .ergodics import (EmpiricalMeasure, EscapedPathsError, MixingReport, SignalBelowNoise,
                       density_oracle, estimate_invariant, integrate_measure, mixing_rate,
                       stationary_cdf)
from .poisson import (CorrectorField, NotCentered, PoissonProblem, TailNotResolved,
                      bound_check, build_corrector, linear_sine_solution, poisson_solve,
                      residual_check)
from .averaging import (AveragedSystem, WeakConvergenceReport, build_averaged,
                        martingale_residual, simulate_averaged, weak_convergence_test)

__version__ = "0.1.0"

__all__ = [
    "RngStream", "StableCDFError", "StableLaw", "cdf_1d", "gil_pelaez_cdf", "increment",
    "levy_constant", "levy_density", "sample_unit",
    "HypothesisWarning", "MultiscaleSystem", "check_hypotheses", "get_system", "register",
    "IntegratorBlowUp", "SamplePath", "VariationalFlow", "observe_frozen", "observe_sde",
    "simulate_frozen", "simulate_multiscale", "simulate_variational", "step_multiscale",
    "ConstantTail", "GeneratorSpec", "GridFunction", "PeriodicTail", "QuadratureError",
    "apply_generator", "frac_laplacian", "tabulate",
    "EmpiricalMeasure", "EscapedPathsError", "MixingReport", "SignalBelowNoise",
    "density_oracle", "estimate_invariant", "integrate_measure", "mixing_rate", "stationary_cdf",
    "CorrectorField", "NotCentered", "PoissonProblem", "TailNotResolved", "bound_check",
    "build_corrector", "linear_sine_solution", "poisson_solve", "residual_check",
    "AveragedSystem", "WeakConvergenceReport", "build_averaged", "martingale_residual",
    "simulate_averaged", "weak_convergence_test",
]
