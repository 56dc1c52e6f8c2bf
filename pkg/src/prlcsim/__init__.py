"""Simulator and bound calculator for parameter-server SGD with probabilistic pulls and local compensation."""

__version__ = "0.1.0"

from .objectives import (Dataset, Logistic, MLP1, Objective, ProblemConstants, Quadratic,
                         estimate_constants, make_logreg, make_mlp1, make_quadratic)
from .policies import PolicyKind, PullPolicy
from .simulator import (ConfigError, DivergenceError, EtaSchedule, ExperimentConfig, MetricsSeries,
                        ergodic_avg_sq_grad, pulling_stats, run, staleness_histogram)
from .vecmath import RngStream

__all__ = [
    "__version__", "Dataset", "Logistic", "MLP1", "Objective", "ProblemConstants", "Quadratic",
    "estimate_constants", "make_logreg", "make_mlp1", "make_quadratic", "PolicyKind", "PullPolicy",
    "ConfigError", "DivergenceError", "EtaSchedule", "ExperimentConfig", "MetricsSeries",
    "ergodic_avg_sq_grad", "pulling_stats", "run", "staleness_histogram", "RngStream",
]
