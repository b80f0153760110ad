"""Experiment registry, configuration, execution and plot-data emission."""
from .config import ExperimentConfig
from .registry import REGISTRY, MODULES
from .runner import RunManifest, emit_plot_data, list_experiments, run_experiment, run_many

__all__ = ["ExperimentConfig", "REGISTRY", "MODULES", "RunManifest", "emit_plot_data", "list_experiments",
           "run_experiment", "run_many"]
