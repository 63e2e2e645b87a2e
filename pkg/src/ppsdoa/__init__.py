"""Joint DOA and polynomial-phase estimation of wideband sources on a uniform linear array.

Sequential RANSAC/ML estimation with spectral DOA search (``estimate_sequential``),
a low-cost variant (``estimate_lowcost``), Cramer-Rao bounds and a Monte-Carlo harness.
"""

from .bench import ScenarioConfig, run_monte_carlo, four_source_scenario
from .crb import CrbReport, compute_crb
from .estimators import (
    ESTIMATORS,
    EstimationReport,
    RansacOptions,
    estimate_lowcost,
    estimate_sequential,
    refine_estimates,
    run_estimator,
)
from .kernels import BACKEND
from .mlcost import EstimateSet
from .model import ArrayConfig, SnapshotBlock, SourceParams, generate_snapshots

__version__ = "0.1.0"

__all__ = [
    "ArrayConfig",
    "BACKEND",
    "CrbReport",
    "ESTIMATORS",
    "EstimateSet",
    "EstimationReport",
    "RansacOptions",
    "ScenarioConfig",
    "SnapshotBlock",
    "SourceParams",
    "compute_crb",
    "estimate_lowcost",
    "estimate_sequential",
    "generate_snapshots",
    "refine_estimates",
    "run_estimator",
    "run_monte_carlo",
    "four_source_scenario",
]
