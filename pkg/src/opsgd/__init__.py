"""Stochastic gradient descent for linear operators between Hilbert spaces.

Modules
-------
hilbert
    Truncated vectors, operators, Hilbert-Schmidt norms, covariance spectra.
problem
    Synthetic generative models and samplers.
sgd
    The SGD iteration, step schedules, feasibility checks, diagnostics.
metrics
    Rate and minimax exponents, best-linear-approximation residual.
harness
    Replicated runs and log-log rate fits.
rkhs
    Kernel SGD, functional linear regression, biased-model lift.
minimax
    Packings and hard instances behind the lower bounds.
experiments, cli
    Config-driven experiment runner.
"""

from .hilbert import (
    HilbertVec,
    LinearOp,
    Space,
    SpectralDiagonal,
    apply_semi_norm,
    frac_power,
    hs_norm,
    operator_norm,
    tensor_product,
)
from .metrics import RateRegime, minimax_exponent, theoretical_exponent
from .problem import ProblemSpec, TargetSpec, build_spectrum, make_rng, sample
from .sgd import StepSchedule, TrajectoryLog, run_trajectory, sgd_step

__version__ = "0.1.0"

__all__ = [
    "HilbertVec",
    "LinearOp",
    "Space",
    "SpectralDiagonal",
    "apply_semi_norm",
    "frac_power",
    "hs_norm",
    "operator_norm",
    "tensor_product",
    "RateRegime",
    "minimax_exponent",
    "theoretical_exponent",
    "ProblemSpec",
    "TargetSpec",
    "build_spectrum",
    "make_rng",
    "sample",
    "StepSchedule",
    "TrajectoryLog",
    "run_trajectory",
    "sgd_step",
]
