"""Nonparametric sensor privacy mappings for decentralized detection.

Sensors quantize their observations through stochastic mappings chosen so
that a fusion center can still detect a public hypothesis while a correlated
private hypothesis stays hard to infer.
"""

from .data import SyntheticSpec, gen_binary, gen_mary, ingest_csv
from .estimator import NPOClassifier
from .exceptions import InfoPrivacyError
from .kernels import KernelSpec, PrivacyMapping
from .losses import LOSSES, get_loss
from .oracle import JointModel, induced_joint, mapping_errors
from .risk import RiskConfig, TrainingSet
from .solver import SolverConfig, SolveResult, find_theta_star, optimize_npo, predict_H, solve

__version__ = "0.1.0"

__all__ = [
    "SyntheticSpec",
    "gen_binary",
    "gen_mary",
    "ingest_csv",
    "NPOClassifier",
    "InfoPrivacyError",
    "KernelSpec",
    "PrivacyMapping",
    "LOSSES",
    "get_loss",
    "JointModel",
    "induced_joint",
    "mapping_errors",
    "RiskConfig",
    "TrainingSet",
    "SolverConfig",
    "SolveResult",
    "find_theta_star",
    "optimize_npo",
    "predict_H",
    "solve",
]
