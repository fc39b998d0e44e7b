"""Ideal fuzzy message detection for FMD-analysis

The server only sees whether a flag ciphertext matched a detection key. A
genuine message always matches its recipient's key; any other message
matches with the key's false-positive rate. That observable is all the
analyses in this package need, so no cryptography is modelled.
"""
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from utils.errors import ArgumentError, RangeError
from utils.helpers import require, validate_count, validate_probability

if TYPE_CHECKING:
    from components.network_data import MessageEvent

MAX_DYADIC_EXPONENT = 64


@dataclass(frozen=True)
class DetectionRate:
    """False-positive detection rate p(u), optionally of the form 2^-l"""

    value: float
    dyadic_exponent: Optional[int] = None

    def __post_init__(self):
        require(validate_probability(self.value, "rate"))
        if self.dyadic_exponent is not None:
            if self.dyadic_exponent < 0 or self.value != math.ldexp(1.0, -self.dyadic_exponent):
                raise ArgumentError(f"rate {self.value} is not 2^-{self.dyadic_exponent}")

    @classmethod
    def of(cls, value: float) -> "DetectionRate":
        """Wrap a float, recognising exact powers of two"""
        value = float(value)
        if value > 0.0:
            mantissa, exponent = math.frexp(value)
            if mantissa == 0.5 and exponent <= 1 and -(exponent - 1) <= MAX_DYADIC_EXPONENT:
                return cls(value, -(exponent - 1))
        return cls(value)

    @property
    def is_degenerate(self) -> bool:
        return self.value in (0.0, 1.0)

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class IdealDetector:
    """A user's detection key as seen through the ideal oracle"""

    owner: int
    rate: DetectionRate


def dyadic_rate(l: int) -> DetectionRate:
    """Rate 2^-l, the only rates the efficient FMD construction supports"""
    require(validate_count(l, "l"))
    if l > MAX_DYADIC_EXPONENT:
        raise RangeError(f"l must be <= {MAX_DYADIC_EXPONENT}, got {l}")
    return DetectionRate(math.ldexp(1.0, -l), int(l))


def ideal_test(detector: IdealDetector, message: "MessageEvent", rng: np.random.Generator) -> bool:
    """
    Test one flag ciphertext against a detection key.

    A non-matching message consumes exactly one uniform draw even when the
    rate is 0 or 1, so stream alignment does not depend on the rates.
    """
    if message.recipient == detector.owner:
        return True
    return bool(rng.random() < detector.rate.value)


def expected_tags(in_count: int, total_messages: int, rate) -> float:
    """Expected downloads tag(u) = in(u) + p(u)(M - in(u))"""
    require(validate_count(in_count, "in_count"))
    require(validate_count(total_messages, "total_messages"))
    if in_count > total_messages:
        raise ArgumentError(f"in_count ({in_count}) exceeds total_messages ({total_messages})")
    p = float(rate)
    require(validate_probability(p, "rate"))
    return in_count + p * (total_messages - in_count)


def parse_rate(text: str) -> DetectionRate:
    """Read "0.25", "2^-7" or "2**-7" as a detection rate"""
    cleaned = str(text).strip().replace(" ", "")
    for prefix in ("2^-", "2**-"):
        if cleaned.startswith(prefix):
            try:
                return dyadic_rate(int(cleaned[len(prefix):]))
            except ValueError:
                raise ArgumentError(f"bad dyadic rate {text!r}")
    try:
        return DetectionRate.of(float(cleaned))
    except ValueError:
        raise ArgumentError(f"bad rate {text!r}: expected a number in [0, 1] or 2^-l")
