"""Random walks on linear groups conditioned to stay non-negative.

Monte Carlo estimators for the killed harmonic functions and the target
harmonic measures, an exact enumeration oracle for finite-support laws, and
checkers for the exact identities relating them.
"""

from ._accel import USE_JIT
from .ensemble import (Ensemble, EnsembleSpec, LyapunovEstimate, boundary_point, build_ensemble, center,
                       contraction_profile, default_start, discrete, draw, estimate_lyapunov, gaussian_perturbed,
                       identity, log_normal, rotation_diagonal, sample_stationary)
from .errors import (CondWalkError, ConfigError, DegenerateVariance, DiagnosticWarning, DimensionError,
                     IllConditioned, InfiniteDelta, InfinitePerturbation, InvalidPoint, MissingRun,
                     MomentOverflow, NotConverged, ProximalityWarning, SingularAtom, TooLarge, WeightError)
from .harmonic import VarianceEstimate, estimate_V, estimate_variance, survival_curve
from .oracle import enumerate_paths, exact_duality_sides, exact_rho_action, exact_U, exact_V, exact_W_chain
from .perturbed import (ChainState, estimate_U, estimate_W_chain, martingale_residual, project_finite_size,
                        quasi_monotonicity_scan, simulate_chain)
from .projective import (DualProjPoint, GroupElement, ProjPoint, act, cocycle, cohomology_residual, delta,
                         normalize_dual, normalize_point, sin_distance)
from .stats import WeightedEstimate
from .target import (cllt_ratio, density_W, estimate_rho_action, harmonicity_residual, negative_tail_report,
                     reversal_residual, translation_profile)
from .testfunctions import PiecewiseLinear, ProductTest, TestFunction, hat, product, trapezoid
from .walk import PathRecord, ReversedRecord, exit_time, perturbed_exit_time, reversed_walk_values, simulate_path

__version__ = "0.1.0"

__all__ = [
    "act", "boundary_point", "build_ensemble", "center", "ChainState", "cllt_ratio", "cocycle",
    "cohomology_residual", "CondWalkError", "ConfigError", "contraction_profile", "default_start",
    "DegenerateVariance", "delta", "density_W", "DiagnosticWarning", "DimensionError", "discrete", "draw",
    "DualProjPoint", "Ensemble", "EnsembleSpec", "enumerate_paths", "estimate_lyapunov",
    "estimate_rho_action", "estimate_U", "estimate_V", "estimate_variance", "estimate_W_chain",
    "exact_duality_sides", "exact_rho_action", "exact_U", "exact_V", "exact_W_chain", "exit_time",
    "gaussian_perturbed", "GroupElement", "harmonicity_residual", "hat", "identity", "IllConditioned",
    "InfiniteDelta", "InfinitePerturbation", "InvalidPoint", "log_normal", "LyapunovEstimate",
    "martingale_residual", "MissingRun", "MomentOverflow", "negative_tail_report", "normalize_dual",
    "normalize_point", "NotConverged", "PathRecord", "perturbed_exit_time", "PiecewiseLinear", "product",
    "ProductTest", "project_finite_size", "ProjPoint", "ProximalityWarning", "quasi_monotonicity_scan",
    "reversal_residual", "reversed_walk_values", "ReversedRecord", "rotation_diagonal",
    "sample_stationary", "simulate_chain", "simulate_path", "sin_distance", "SingularAtom",
    "survival_curve", "TestFunction", "TooLarge", "translation_profile", "trapezoid", "USE_JIT",
    "VarianceEstimate", "WeightedEstimate", "WeightError",
]
