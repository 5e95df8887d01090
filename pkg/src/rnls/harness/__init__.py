"""Configuration, experiment orchestration and report emission."""

from .config import ExperimentConfig, load_config
from .experiments import ReportBundle, run_experiment
from .report import emit_report

__all__ = ["ExperimentConfig", "ReportBundle", "emit_report", "load_config", "run_experiment"]
