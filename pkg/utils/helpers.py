"""Utility helper functions for FMD-analysis"""
import logging
import math
import os
import re
import sys
from typing import List, Optional, Sequence, Tuple

import numpy as np

from utils.errors import ArgumentError

# Purposes folded into every keyed stream so that rate assignment, per-message
# downloads, aggregated tag counts and epoch sampling never share draws for
# the same fold.
STREAM_RATES = 1
STREAM_DOWNLOADS = 2
STREAM_EPOCHS = 3
STREAM_GAME = 4
STREAM_MONTE_CARLO = 5
STREAM_TAG_COUNTS = 6

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def get_logger(name: str) -> logging.Logger:
    """Module logger; configuration is left to the entry point"""
    return logging.getLogger(name)


def configure_logging(verbosity: int = 0):
    """Route log records to stderr. 0 = info, >0 = debug, <0 = warnings only"""
    if verbosity > 0:
        level = logging.DEBUG
    elif verbosity < 0:
        level = logging.WARNING
    else:
        level = logging.INFO
    logging.basicConfig(format=LOG_FORMAT, stream=sys.stderr)
    logging.getLogger().setLevel(level)


def validate_probability(value: float, name: str = "p", open_interval: bool = False) -> Tuple[bool, str]:
    """
    Validate a probability
    Returns: (is_valid, error_message)
    """
    try:
        value = float(value)
    except (TypeError, ValueError):
        return False, f"{name} must be a number, got {value!r}"
    if math.isnan(value):
        return False, f"{name} is NaN"
    if open_interval:
        if not 0.0 < value < 1.0:
            return False, f"{name} must lie in (0, 1), got {value}"
    elif not 0.0 <= value <= 1.0:
        return False, f"{name} must lie in [0, 1], got {value}"
    return True, ""


def validate_count(value: int, name: str, minimum: int = 0) -> Tuple[bool, str]:
    """
    Validate a non-negative integer count with a lower bound
    Returns: (is_valid, error_message)
    """
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        return False, f"{name} must be an integer, got {value!r}"
    if value < minimum:
        return False, f"{name} must be >= {minimum}, got {value}"
    return True, ""


def require(check: Tuple[bool, str], error_cls=None):
    """Raise the (is_valid, message) result of a validator as an exception"""
    is_valid, message = check
    if not is_valid:
        raise (error_cls or ArgumentError)(message)


def keyed_rng(seed: int, *key: int) -> np.random.Generator:
    """
    Independent generator for (seed, key...)

    Streams are derived with SeedSequence spawn keys, so the draws for one
    key never depend on how many other keys were used or in which order
    threads ran.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key)))


def entropy_seed() -> int:
    """Fresh 64-bit seed from OS entropy"""
    return int(np.random.SeedSequence().entropy) & ((1 << 64) - 1)


def parse_int_list(text: str) -> List[int]:
    """
    Parse "1..7", "1,2,4" or "1 2 4" (mixed forms allowed) into integers.
    '#' starts a comment.
    """
    values: List[int] = []
    for line in text.split('\n'):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        for token in re.split(r'[,\s]+', line):
            if not token:
                continue
            if '..' in token:
                start, end = token.split('..', 1)
                lo, hi = int(start), int(end)
                if hi < lo:
                    raise ValueError(f"empty range {token!r}")
                values.extend(range(lo, hi + 1))
            else:
                values.append(int(token))
    return values


def format_float(value: float, digits: int = 6) -> str:
    """Locale-independent fixed formatting; inf/nan spelled out"""
    if value is None:
        return ""
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if math.isnan(value):
        return "nan"
    return f"{value:.{digits}f}"


def dataset_slug(path: str) -> str:
    """Short name for a dataset file, safe to use in output file names"""
    name = os.path.splitext(os.path.basename(path))[0]
    name = re.sub(r'[^\w\s-]', '', name)
    name = re.sub(r'[-\s]+', '-', name)
    return name.strip('-') or "dataset"


def chunk_sizes(total: int, chunk: int) -> List[int]:
    """Split total into chunks of at most chunk items"""
    sizes = [chunk] * (total // chunk)
    if total % chunk:
        sizes.append(total % chunk)
    return sizes


def mean_and_std(values: Sequence[float]) -> Tuple[float, float]:
    """Sample mean and (ddof=1) standard deviation; std is 0 for one value"""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return float('nan'), float('nan')
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


class ProgressTracker:
    """Track progress for long-running operations"""

    def __init__(self, total_items: int, label: str = "", logger: Optional[logging.Logger] = None):
        self.total_items = total_items
        self.completed_items = 0
        self.current_item = ""
        self.label = label
        self.errors: List[str] = []
        self.logger = logger or get_logger(__name__)

    def update(self, item: str, increment: int = 1):
        """Update progress"""
        self.current_item = item
        self.completed_items += increment
        self.logger.info(f"{self.label} {self.completed_items}/{self.total_items} {item}".strip())

    def add_error(self, error: str):
        """Add error to tracking"""
        self.errors.append(error)
        self.logger.error(f"❌ {error}")

    def get_progress(self) -> float:
        """Get progress as percentage"""
        if self.total_items == 0:
            return 100.0
        return (self.completed_items / self.total_items) * 100

    def is_complete(self) -> bool:
        """Check if operation is complete"""
        return self.completed_items >= self.total_items
