"""pmflab: a numerical laboratory for heterogeneous interacting-SDE networks.

Simulates coupled linear SDE networks next to their partial mean-field
approximations on shared noise, evaluates the explicit error rates and
constants that certify the approximation, generates directed
preferential-attachment interaction networks, and probes scaled cumulants
and tail probabilities of the approximation gap at desk scale.
"""

__version__ = "0.1.0"

from .network import (
    CoefficientSet,
    CorePeripheryLayout,
    VQuantities,
    build_coefficients,
    compute_v_quantities,
    validate_layout,
)
from .noise import DriftDensity, JumpPart, LevySpec, NoiseModel, NoisePath, dominating_spec, psi, sample_path
from .rates import ChaosRates, RateReport, SparsityReport, chaos_inequalities, chaos_rates, compute_rates, compute_constants, sparsity_report, theorem_bound
from .simulate import ErrorEstimate, PairTrajectory, SimConfig, estimate_error, solve_mean_curve, step_ips, step_pmfs
from .sparse import SparseMatrix

__all__ = [
    "__version__",
    "SparseMatrix",
    "CoefficientSet", "CorePeripheryLayout", "VQuantities",
    "build_coefficients", "compute_v_quantities", "validate_layout",
    "LevySpec", "JumpPart", "DriftDensity", "NoiseModel", "NoisePath",
    "psi", "dominating_spec", "sample_path",
    "SimConfig", "PairTrajectory", "ErrorEstimate",
    "solve_mean_curve", "step_ips", "step_pmfs", "estimate_error",
    "RateReport", "ChaosRates", "SparsityReport",
    "compute_rates", "compute_constants", "theorem_bound",
    "chaos_rates", "chaos_inequalities", "sparsity_report",
]
