"""Bilayer gossip decentralised SGD on a simulated mobile device field."""

from .errors import GdpsgdError
from .harness import ExperimentConfig, PRESETS, compare_runs, load_config, preset, run_experiment, simulate, spectra

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig", "GdpsgdError", "PRESETS", "compare_runs", "load_config", "preset",
    "run_experiment", "simulate", "spectra", "__version__",
]
