"""Differential-privacy parameters of FMD for FMD-analysis

delta is kept as log10(delta) throughout: settings like M = 10^6 give
delta around 10^-28027, far below the smallest double.
"""
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from components.fmd_model import DetectionRate, dyadic_rate
from utils.errors import ArgumentError, DegenerateRateError
from utils.helpers import get_logger, require, validate_count, validate_probability

logger = get_logger(__name__)

# (M, in(u), exponent l with p = 2^-l) of the exemplary trade-off table.
EXEMPLARY_SETTINGS: List[Tuple[int, int, int]] = [
    (100, 10, 4),
    (100, 10, 2),
    (100, 20, 4),
    (200, 10, 4),
    (1_000_000, 100, 8),
    (1_000_000, 100, 4),
    (1_000_000, 1000, 8),
    (2_000_000, 100, 8),
]


@dataclass(frozen=True)
class DpParams:
    """(epsilon, delta) with epsilon in nats and delta as a base-10 exponent"""

    epsilon: float
    log10_delta: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise ArgumentError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.log10_delta > 0:
            raise ArgumentError(f"log10_delta must be <= 0, got {self.log10_delta}")

    @property
    def epsilon_log2(self) -> float:
        return self.epsilon / math.log(2.0)

    @property
    def delta(self) -> float:
        """delta as a float; 0.0 once it underflows"""
        return 10.0 ** self.log10_delta

    @property
    def delta_text(self) -> str:
        return format_delta(self.log10_delta)


def format_delta(log10_delta: float, digits: int = 0) -> str:
    """Render 10^x as "Ne-k" without ever forming the float"""
    if math.isinf(log10_delta):
        return "0"
    exponent = math.floor(log10_delta)
    mantissa = 10.0 ** (log10_delta - exponent)
    if round(mantissa, digits) >= 10.0:
        mantissa, exponent = mantissa / 10.0, exponent + 1
    return f"{mantissa:.{digits}f}e{exponent:+d}".replace("e+", "e")


def peedp_epsilon(p) -> float:
    """ln(1/p(u)); infinite at p = 0, where no protection is bounded"""
    value = float(p)
    require(validate_probability(value, "p"))
    if value == 0.0:
        logger.warning("⚠️ p=0 gives no edge privacy: epsilon is unbounded")
        return math.inf
    return -math.log(value)


def _check_interior(p) -> float:
    value = float(p)
    require(validate_probability(value, "p"))
    if value in (0.0, 1.0):
        raise DegenerateRateError(f"incoming-message DP needs 0 < p < 1, got {value}")
    return value


def incoming_dp(M: int, in_count: int, p) -> DpParams:
    """
    (epsilon, delta) protecting in(u) when the server sees
    tag(u) = in(u) + Binom(M - in(u), p(u)).
    """
    require(validate_count(M, "M", minimum=1))
    require(validate_count(in_count, "in_count"))
    value = _check_interior(p)
    if in_count >= M:
        raise ArgumentError(f"in_count ({in_count}) must be < M ({M})")
    # First term turns negative once in(u) > M/2 and then never wins the max.
    first = value * (M - 2 * in_count) / ((1.0 - value) * (in_count + 1))
    second = (1.0 - value) * (M - in_count) / value
    epsilon = math.log(max(first, second))
    log10_delta = (M - in_count) * math.log10(max(value, 1.0 - value))
    return DpParams(max(epsilon, 0.0), log10_delta)


def incoming_dp_group(M: int, in_counts: Sequence[int], rates: Sequence) -> DpParams:
    """Worst case over users: max epsilon and max (least negative) log10 delta"""
    if len(in_counts) != len(rates):
        raise ArgumentError(f"{len(in_counts)} in-counts but {len(rates)} rates")
    if not in_counts:
        raise ArgumentError("no users")
    per_user = [incoming_dp(M, int(i), r) for i, r in zip(in_counts, rates)]
    return DpParams(max(d.epsilon for d in per_user), max(d.log10_delta for d in per_user))


def exemplary_table() -> pd.DataFrame:
    """The exemplary settings as rows "M,in,p,epsilon,log10_delta" """
    rows = []
    for M, in_count, l in EXEMPLARY_SETTINGS:
        rate = dyadic_rate(l)
        params = incoming_dp(M, in_count, rate)
        rows.append({"M": M, "in": in_count, "p": rate.value,
                     "epsilon": params.epsilon, "log10_delta": params.log10_delta})
    return pd.DataFrame(rows, columns=["M", "in", "p", "epsilon", "log10_delta"])


@dataclass(frozen=True)
class DpReplay:
    """Exhaustive check of the guarantee for neighbours in and in + 1"""

    params: DpParams
    max_log_ratio: float
    violating_mass: float
    violating_mass_reverse: float

    @property
    def holds(self) -> bool:
        delta = self.params.delta
        return self.violating_mass <= delta * (1 + 1e-9) and self.violating_mass_reverse <= delta * (1 + 1e-9)


def replay_incoming_dp(M: int, in_count: int, p) -> DpReplay:
    """
    Enumerate every attainable tag count s under in and in + 1 and measure
    how much probability mass sits where |ln Pr[s|in] - ln Pr[s|in+1]|
    exceeds epsilon, in each direction.
    """
    params = incoming_dp(M, in_count, p)
    value = float(p)
    s = np.arange(0, M + 1)
    log_a = stats.binom.logpmf(s - in_count, M - in_count, value)
    log_b = stats.binom.logpmf(s - in_count - 1, M - in_count - 1, value)
    both = np.isfinite(log_a) & np.isfinite(log_b)
    ratio = log_a - log_b
    max_log_ratio = float(np.max(np.abs(ratio[both]))) if np.any(both) else 0.0
    bad = ~both | (np.abs(np.where(both, ratio, 0.0)) > params.epsilon)
    mass_a = float(np.exp(log_a[bad & np.isfinite(log_a)]).sum())
    mass_b = float(np.exp(log_b[bad & np.isfinite(log_b)]).sum())
    return DpReplay(params, max_log_ratio, mass_a, mass_b)
