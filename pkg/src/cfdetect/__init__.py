"""Grant-free activity detection for cell-free massive MIMO.

Two Bayesian detectors that need no channel statistics (a block-coordinate
MAP estimator and a mean-field variational one under a generalized
hyperbolic prior), a covariance-fitting baseline that does, a channel
simulator, and a Monte Carlo evaluation harness.
"""

from .covbase import CovKnowledge, CovOptions, run_cov
from .estimators import CovarianceDetector, GHVIDetector, MapDetector, calibrate_threshold
from .evalharness import ExperimentSpec, RocCurve, roc_curve, run_trials
from .ghvi import run_ghvi
from .mapdet import run_map
from .model import Hyperparameters, SolverDivergence, SolverOptions
from .simkit import Perturbation, PilotMatrix, ReceivedSignals, SystemConfig

__version__ = "0.1.0"

__all__ = [
    "CovKnowledge",
    "CovOptions",
    "CovarianceDetector",
    "ExperimentSpec",
    "GHVIDetector",
    "Hyperparameters",
    "MapDetector",
    "Perturbation",
    "PilotMatrix",
    "ReceivedSignals",
    "RocCurve",
    "SolverDivergence",
    "SolverOptions",
    "SystemConfig",
    "calibrate_threshold",
    "roc_curve",
    "run_cov",
    "run_ghvi",
    "run_map",
    "run_trials",
]
