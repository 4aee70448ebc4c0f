"""Wiener-space coupling for coupled forward-backward SDEs.

Simulate paired and coupled Brownian motions, solve FBSDEs by Picard
iteration with least-squares Monte Carlo, extend solutions with decoupling
fields, and estimate coupling variances and regularity diagnostics.
"""

__version__ = "0.1.0"

from .coupling import (PathFunctional, SigmaAlgebraWindow, conditional_expectation_window,  # noqa: E402
                       sandwich_check, transfer_coefficient, transfer_process, transfer_variable)
from .diagnostics import (malliavin_ratio, malliavin_ratio_fbsde, run_fracpot_check,  # noqa: E402
                          run_path_regularity)
from .fbsde import (FbsdeSpec, Lipschitz, PicardConfig, SolutionTriple,  # noqa: E402
                    build_augmented_system, check_solvability, solve_small_interval, theta_norm)
from .field import DecouplingFieldModel, Partition, build_field, solve_long_horizon  # noqa: E402
from .grid import (CouplingFunction, PathBundle, TimeGrid, build_coupled_path,  # noqa: E402
                   haar_analyze, haar_synthesize, sample_paths)
from .library import build_spec  # noqa: E402
from .regression import RegressionConfig  # noqa: E402
from .variance import estimate_cv, estimate_potentials, verify_bound  # noqa: E402

__all__ = [
    "CouplingFunction", "DecouplingFieldModel", "FbsdeSpec", "Lipschitz", "Partition",
    "PathBundle", "PathFunctional", "PicardConfig", "RegressionConfig", "SigmaAlgebraWindow",
    "SolutionTriple", "TimeGrid", "build_augmented_system", "build_coupled_path", "build_field",
    "build_spec", "check_solvability", "conditional_expectation_window", "estimate_cv",
    "estimate_potentials", "haar_analyze", "haar_synthesize", "malliavin_ratio",
    "malliavin_ratio_fbsde", "run_fracpot_check", "run_path_regularity", "sample_paths",
    "sandwich_check", "solve_long_horizon", "solve_small_interval", "theta_norm",
    "transfer_coefficient", "transfer_process", "transfer_variable", "verify_bound",
]
