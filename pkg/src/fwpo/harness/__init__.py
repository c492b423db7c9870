"""Experiment orchestration: configuration, seeding, training, evaluation, CLI."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .rng import stream, streams
from .run import RunMetrics, RunResult, aggregate, evaluate, read_metrics, run_sweep, run_training

__all__ = [
    "ConfigError", "ExperimentConfig", "RunMetrics", "RunResult", "aggregate", "evaluate",
    "load_config", "parse_config", "read_metrics", "run_sweep", "run_training", "stream", "streams",
]
