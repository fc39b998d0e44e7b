"""Configuration management for FMD-analysis"""
import json
import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv

from utils.errors import ConfigError
from utils.helpers import get_logger, parse_int_list, validate_probability

# Load environment variables
load_dotenv()

logger = get_logger(__name__)

BACKENDS = ("per_message", "aggregated")
EPOCH_MODES = ("contiguous", "random")


def load_flat_json(path: str) -> Dict[str, Any]:
    """
    Read a flat key-value JSON object. Values may be scalars or lists of
    scalars; nested objects are rejected.
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object of key/value pairs")
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigError(f"{path}: key {key!r} is nested; config files are flat")
        if isinstance(value, list) and any(isinstance(v, (dict, list)) for v in value):
            raise ConfigError(f"{path}: key {key!r} holds nested lists")
    return data


class Config:
    """Application configuration management"""

    def __init__(self, config_file: Optional[str] = None):
        self.config_file = config_file or os.getenv("FMD_CONFIG_FILE") or None
        self.default_config = {
            "dataset_path": None,
            "rate_exponents": list(range(1, 8)),
            "folds": 10,
            "seed": None,
            "alpha": 0.01,
            "epoch_size": 25000,
            "epoch_mode": "contiguous",
            "relationship_backend": "aggregated",
            "epoch_backend": "per_message",
            "unordered_pairs": False,
            "threads": 0,
            "output_dir": "results",
        }
        self.load_config()

    def load_config(self, config_file: Optional[str] = None) -> Dict[str, Any]:
        """Load configuration from file merged over defaults"""
        if config_file is not None:
            self.config_file = config_file
        self.config = self.default_config.copy()
        self.explicit_keys = set()
        if self.config_file:
            overrides = load_flat_json(self.config_file)
            unknown = sorted(set(overrides) - set(self.default_config))
            if unknown:
                logger.warning(f"⚠️ Ignoring unknown config keys in {self.config_file}: {', '.join(unknown)}")
            self.config.update({k: v for k, v in overrides.items() if k in self.default_config})
            self.explicit_keys.update(k for k in overrides if k in self.default_config)
        return self.config

    def save_config(self, path: Optional[str] = None):
        """Save current configuration to file"""
        path = path or self.config_file
        if not path:
            raise ConfigError("no config file to save to")
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.config, f, indent=2, sort_keys=True)

    def get(self, key: str, default=None):
        """Get configuration value"""
        return self.config.get(key, default)

    def set(self, key: str, value: Any):
        """Set configuration value"""
        self.config[key] = value
        self.explicit_keys.add(key)

    def update(self, updates: Dict[str, Any]):
        """Update multiple configuration values, skipping None (unset flags)"""
        given = {k: v for k, v in updates.items() if v is not None}
        self.config.update(given)
        self.explicit_keys.update(given)

    @property
    def output_dir(self) -> str:
        """Output directory: explicit setting, then FMD_OUTPUT_DIR, then default"""
        if "output_dir" in self.explicit_keys and self.config.get("output_dir"):
            return self.config["output_dir"]
        return os.getenv("FMD_OUTPUT_DIR") or self.default_config["output_dir"]


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one reproduction run"""

    dataset_path: str
    rate_exponents: List[int] = field(default_factory=lambda: list(range(1, 8)))
    folds: int = 10
    seed: Optional[int] = None
    alpha: float = 0.01
    epoch_size: int = 25000
    epoch_mode: str = "contiguous"
    relationship_backend: str = "aggregated"
    epoch_backend: str = "per_message"
    unordered_pairs: bool = False
    threads: int = 0
    output_dir: str = "results"

    @classmethod
    def from_sources(cls, cfg: Config, overrides: Optional[Dict[str, Any]] = None) -> "ExperimentConfig":
        """Build from a Config (file + environment) with flag overrides on top"""
        values = dict(cfg.config)
        values["output_dir"] = cfg.output_dir
        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = value
        if not values.get("dataset_path"):
            raise ConfigError("dataset_path is required (flag --dataset or config key)")
        exponents = values.get("rate_exponents")
        if isinstance(exponents, str):
            try:
                exponents = parse_int_list(exponents)
            except ValueError as e:
                raise ConfigError(f"rate_exponents: {e}")
        values["rate_exponents"] = list(exponents)
        names = {f.name for f in fields(cls)}
        try:
            experiment = cls(**{k: v for k, v in values.items() if k in names})
        except TypeError as e:
            raise ConfigError(str(e))
        is_valid, message = validate_experiment_config(experiment)
        if not is_valid:
            raise ConfigError(message)
        return experiment

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed)

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def validate_experiment_config(experiment: ExperimentConfig) -> Tuple[bool, str]:
    """
    Validate an experiment configuration
    Returns: (is_valid, error_message)
    """
    if not isinstance(experiment.folds, int) or experiment.folds < 1:
        return False, f"folds must be >= 1, got {experiment.folds}"
    if not experiment.rate_exponents:
        return False, "rate_exponents must not be empty"
    if any((not isinstance(l, int)) or l < 0 or l > 64 for l in experiment.rate_exponents):
        return False, f"rate_exponents must be integers in [0, 64], got {experiment.rate_exponents}"
    is_valid, message = validate_probability(experiment.alpha, "alpha", open_interval=True)
    if not is_valid:
        return False, message
    if not isinstance(experiment.epoch_size, int) or experiment.epoch_size < 1:
        return False, f"epoch_size must be >= 1, got {experiment.epoch_size}"
    if experiment.epoch_mode not in EPOCH_MODES:
        return False, f"epoch_mode must be one of {EPOCH_MODES}, got {experiment.epoch_mode!r}"
    for key in ("relationship_backend", "epoch_backend"):
        if getattr(experiment, key) not in BACKENDS:
            return False, f"{key} must be one of {BACKENDS}, got {getattr(experiment, key)!r}"
    if experiment.epoch_backend != "per_message":
        return False, "epoch_backend must be per_message: epochs need per-message downloads"
    if experiment.seed is not None and (not isinstance(experiment.seed, int) or experiment.seed < 0):
        return False, f"seed must be a non-negative integer, got {experiment.seed}"
    if not isinstance(experiment.threads, int) or experiment.threads < 0:
        return False, f"threads must be >= 0, got {experiment.threads}"
    return True, ""

