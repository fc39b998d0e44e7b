"""Utils package for FMD-analysis"""
from .config import Config, ExperimentConfig, validate_experiment_config
from .helpers import (
    get_logger,
    configure_logging,
    keyed_rng,
    entropy_seed,
    parse_int_list,
    ProgressTracker,
)
from .reporting import ReportWriter

__all__ = [
    'Config',
    'ExperimentConfig',
    'validate_experiment_config',
    'get_logger',
    'configure_logging',
    'keyed_rng',
    'entropy_seed',
    'parse_int_list',
    'ProgressTracker',
    'ReportWriter',
]
