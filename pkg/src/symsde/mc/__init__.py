"""Monte Carlo engine: simulation, pathwise transformations and estimators."""

from .engine import PathEnsemble, SimulationConfig, load_ensemble, map_chunks, save_ensemble, simulate
from .estimators import (
    EstimatorResult,
    estimate_expectation,
    estimate_ibp,
    estimate_isserlis,
    estimate_quasi_invariance,
    estimate_stein,
)
from .paths import (
    GirsanovWeights,
    TransformedEnsemble,
    apply_path_transformation,
    girsanov_weight,
    interpolate_states,
    rotate_brownian,
)

__all__ = [
    "PathEnsemble", "SimulationConfig", "load_ensemble", "map_chunks", "save_ensemble", "simulate",
    "EstimatorResult", "estimate_expectation", "estimate_ibp", "estimate_isserlis", "estimate_quasi_invariance",
    "estimate_stein", "GirsanovWeights", "TransformedEnsemble", "apply_path_transformation", "girsanov_weight",
    "interpolate_states", "rotate_brownian",
]
