"""Guarded modular first-order solvers for nonconvex composite minimization.

The package couples user-specified iteration modules with per-iteration
scheduling policies that preserve descent and convergence guarantees, and
ships two end-to-end imaging applications (non-blind and blind image
deconvolution) plus an experiment CLI.
"""

from .errors import (ConfigError, EstimationError, FimaError, ModuleError,
                     ModuleSkipped, SolverError, SubproblemError)
from .metrics import MetricReport, error_rate, kernel_similarity, psnr, ssim, stopping
from .modules import (ModulePair, module_external_denoiser, module_identity,
                      module_pg_step, module_recursive_filter, module_tv_denoise)
from .problem import (CompositeProblem, ErrorCertificate, NonsmoothTerm, SmoothTerm,
                      estimate_lipschitz, least_squares_term, objective, penalty_term,
                      prox_gradient_step, simplex_term, subdiff_error, validate_gradient,
                      zero_term)
from .prox import (ScalarPenalty, SimplexSet, project_simplex, prox_l0, prox_l1,
                   prox_lp_half, quadratic_model)
from .solvers import (BlockState, MultiBlockModules, MultiBlockProblem, SolverConfig,
                      solve_baseline, solve_efima, solve_ifima, solve_mfima)
from .trace import IterateRecord, IterateTrace, read_trace_csv, read_trace_json, write_trace_csv, write_trace_json

__version__ = "0.1.0"

__all__ = [
    "BlockState", "CompositeProblem", "ConfigError", "ErrorCertificate",
    "EstimationError", "FimaError", "IterateRecord", "IterateTrace", "MetricReport",
    "ModuleError", "ModulePair", "ModuleSkipped", "MultiBlockModules",
    "MultiBlockProblem", "NonsmoothTerm", "ScalarPenalty", "SimplexSet", "SmoothTerm",
    "SolverConfig", "SolverError", "SubproblemError", "error_rate",
    "estimate_lipschitz", "kernel_similarity", "least_squares_term",
    "module_external_denoiser", "module_identity", "module_pg_step",
    "module_recursive_filter", "module_tv_denoise", "objective", "penalty_term",
    "project_simplex", "prox_gradient_step", "prox_l0", "prox_l1", "prox_lp_half",
    "psnr", "quadratic_model", "read_trace_csv", "read_trace_json", "simplex_term",
    "solve_baseline", "solve_efima", "solve_ifima", "solve_mfima", "ssim", "stopping",
    "subdiff_error", "validate_gradient", "write_trace_csv", "write_trace_json",
    "zero_term",
]
