"""Deterministic simulator for decentralized optimization with local updates.

Implements DSE-MVR and DSE-SGD (slow gradient tracking + slow partial
averaging, optionally with momentum-based variance reduction) next to the
DSGD and DLSGD baselines.
"""
from .errors import (
    ArtifactConflict,
    ConfigError,
    ContractViolation,
    DivergenceError,
    DSEError,
    InvalidTopologyError,
    PartitionError,
    TheoryViolation,
)
from .optimizers import AlgoParams, Constant, Decay, Halving, SwarmState, run
from .problems import GradientOracle, Problem, ProblemKind, build_problem
from .topology import MixingMatrix, build_complete, build_ring, metropolis_hastings_weights, uniform_average_matrix

__version__ = "0.1.0"

__all__ = [
    "AlgoParams",
    "ArtifactConflict",
    "build_complete",
    "build_problem",
    "build_ring",
    "ConfigError",
    "Constant",
    "ContractViolation",
    "Decay",
    "DivergenceError",
    "DSEError",
    "GradientOracle",
    "Halving",
    "InvalidTopologyError",
    "metropolis_hastings_weights",
    "MixingMatrix",
    "PartitionError",
    "Problem",
    "ProblemKind",
    "run",
    "SwarmState",
    "TheoryViolation",
    "uniform_average_matrix",
]
