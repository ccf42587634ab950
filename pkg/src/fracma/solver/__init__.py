"""Barrier, truncated-ball solver, continuation and solution checks."""
from .barrier import Barrier, build_barrier, fit_decay_exponent, w1_profile
from .checks import check_comparison, check_positivity, check_regularity
from .convolution import sup_inf_convolution
from .truncated import (ConvergenceError, SolveOutput, SolveReport, TruncatedProblem, solve,
                        solve_truncated, stage_family, stage_lattice)

__all__ = ["Barrier", "build_barrier", "fit_decay_exponent", "w1_profile",
           "check_comparison", "check_positivity", "check_regularity",
           "sup_inf_convolution", "ConvergenceError", "SolveReport", "TruncatedProblem",
           "solve", "solve_truncated", "stage_family", "stage_lattice", "SolveOutput"]
