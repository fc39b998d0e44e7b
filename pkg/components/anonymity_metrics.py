"""Recipient unlinkability, intersection and Sybil metrics for FMD-analysis"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import special, stats

from utils.errors import ArgumentError, CapacityError
from utils.helpers import chunk_sizes, get_logger, require, validate_count, validate_probability

logger = get_logger(__name__)

MAX_EXACT_USERS = 22
# Bernoulli cells per Monte-Carlo chunk (trials x users).
CHUNK_CELLS = 2_000_000


class EstimateKind(str, Enum):
    EXACT = "exact"
    APPROX_LOWER_BOUND = "approx_lower_bound"
    MONTE_CARLO = "monte_carlo"


@dataclass(frozen=True)
class RuEstimate:
    """Probability that the intersection adversary wins, with provenance"""

    value: float
    kind: EstimateKind
    trials: Optional[int] = None
    std_error: Optional[float] = None

    def __post_init__(self):
        if not -1e-12 <= self.value <= 1.0 + 1e-12:
            raise ArgumentError(f"estimate {self.value} outside [0, 1]")


@dataclass(frozen=True)
class FuzzySet:
    """Users who downloaded one message; the genuine recipient is always in it"""

    message_id: int
    recipient: int
    members: FrozenSet[int]

    def __post_init__(self):
        if self.recipient not in self.members:
            raise ArgumentError(f"recipient {self.recipient} missing from fuzzy set of message {self.message_id}")


@dataclass(frozen=True)
class BinomialSpec:
    n: int
    p: float

    @property
    def mean(self) -> float:
        return self.n * self.p

    def frozen(self):
        return stats.binom(self.n, self.p)


def _rate_values(rates: Sequence) -> np.ndarray:
    values = np.asarray([float(r) for r in rates], dtype=float)
    if np.any((values < 0.0) | (values > 1.0)):
        raise ArgumentError("rates must lie in [0, 1]")
    return values


def ru_advantage_approx(U: int, p: float) -> RuEstimate:
    """Birthday-style lower bound exp(-(3k^2 + k) / 2U), k = floor(pU)"""
    require(validate_count(U, "U", minimum=1))
    require(validate_probability(p, "p"))
    k = math.floor(p * U)
    return RuEstimate(math.exp(-(3 * k * k + k) / (2.0 * U)), EstimateKind.APPROX_LOWER_BOUND)


def _disjoint_probability_exact(values: np.ndarray, first: int, second: int) -> float:
    """
    Sum over every candidate fuzzy(m_alpha) = V containing the first
    recipient of Pr[fuzzy(m_alpha) = V] * Pr[V and fuzzy(m_beta) disjoint].

    V may not contain the second recipient (it is always in fuzzy(m_beta)),
    so only subsets of the remaining users are enumerated.
    """
    others = np.delete(values, [first, second])
    k = others.shape[0]
    base = (1.0 - values[first]) * (1.0 - values[second])
    in_v = others * (1.0 - others)   # joins V, stays out of fuzzy(m_beta)
    out_v = 1.0 - others             # stays out of V
    total = 0.0
    bits = np.arange(k, dtype=np.int64)
    step = max(1, CHUNK_CELLS // max(k, 1))
    for start in range(0, 1 << k, step):
        masks = np.arange(start, min(start + step, 1 << k), dtype=np.int64)
        members = ((masks[:, None] >> bits) & 1).astype(bool)
        total += float(np.prod(np.where(members, in_v, out_v), axis=1).sum())
    return base * total


def ru_advantage_exact(rates: Sequence) -> RuEstimate:
    """
    Exact Pr[adversary wins | b = 1] for the two target recipients u0 = 0
    and u1 = 1, averaged over which of them receives m_alpha.
    """
    values = _rate_values(rates)
    U = values.shape[0]
    if U < 2:
        raise ArgumentError("need at least two users")
    if U > MAX_EXACT_USERS:
        raise CapacityError(f"exact sum needs 2^{U - 2} terms; use ru_game_montecarlo for U > {MAX_EXACT_USERS}")
    value = 0.5 * (_disjoint_probability_exact(values, 0, 1) + _disjoint_probability_exact(values, 1, 0))
    return RuEstimate(min(1.0, max(0.0, value)), EstimateKind.EXACT)


def ru_advantage_product(rates: Sequence) -> RuEstimate:
    """Factorised form of the exact sum: (1-p0)(1-p1) prod_{l>=2} (1 - p_l^2)"""
    values = _rate_values(rates)
    if values.shape[0] < 2:
        raise ArgumentError("need at least two users")
    value = (1.0 - values[0]) * (1.0 - values[1]) * float(np.prod(1.0 - values[2:] ** 2))
    return RuEstimate(value, EstimateKind.EXACT)


def _game_chunk(values: np.ndarray, trials: int, seed: int) -> Tuple[int, int, int]:
    """Play trials rounds; returns (wins, rounds with b = 1, wins with b = 1)"""
    rng = np.random.default_rng(seed)
    U = values.shape[0]
    rows = np.arange(trials)
    c = rng.integers(0, 2, size=trials)
    b = rng.integers(0, 2, size=trials)
    alpha_sets = rng.random((trials, U)) < values
    alpha_sets[rows, c] = True
    beta_sets = rng.random((trials, U)) < values
    beta_sets[rows, np.where(b == 0, c, 1 - c)] = True
    guess = ~np.any(alpha_sets & beta_sets, axis=1)
    win = guess == (b == 1)
    b1 = b == 1
    return int(win.sum()), int(b1.sum()), int(win[b1].sum())


def ru_game_montecarlo(rates: Sequence, trials: int, rng: np.random.Generator,
                       threads: int = 1) -> Tuple[RuEstimate, RuEstimate]:
    """
    Play the recipient-unlinkability game against the intersection adversary.
    Returns: (overall win rate, win rate given b = 1)
    """
    values = _rate_values(rates)
    U = values.shape[0]
    if U < 2:
        raise ArgumentError("need at least two users")
    require(validate_count(trials, "trials", minimum=1))
    sizes = chunk_sizes(trials, max(1, CHUNK_CELLS // U))
    seeds = rng.integers(0, 2 ** 63 - 1, size=len(sizes))
    jobs = list(zip(sizes, seeds.tolist()))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda job: _game_chunk(values, job[0], job[1]), jobs))
    else:
        results = [_game_chunk(values, n, s) for n, s in jobs]
    wins = sum(r[0] for r in results)
    rounds_b1 = sum(r[1] for r in results)
    wins_b1 = sum(r[2] for r in results)

    overall_rate = wins / trials
    overall = RuEstimate(overall_rate, EstimateKind.MONTE_CARLO, trials,
                         math.sqrt(overall_rate * (1.0 - overall_rate) / trials))
    if rounds_b1:
        cond_rate = wins_b1 / rounds_b1
        conditional = RuEstimate(cond_rate, EstimateKind.MONTE_CARLO, rounds_b1,
                                 math.sqrt(cond_rate * (1.0 - cond_rate) / rounds_b1))
    else:
        conditional = RuEstimate(0.0, EstimateKind.MONTE_CARLO, 0, None)
    return overall, conditional


def ru_heatmap(U_grid: Sequence[int], p_grid: Sequence[float]) -> pd.DataFrame:
    """Rows "U,p,advantage" of the approximate advantage over a grid"""
    rows = [{"U": int(U), "p": float(p), "advantage": ru_advantage_approx(int(U), float(p)).value}
            for U in U_grid for p in p_grid]
    return pd.DataFrame(rows, columns=["U", "p", "advantage"])


def log_grid(low: float, high: float, points: int, integer: bool = False) -> List:
    """Log-spaced grid, deduplicated after rounding for integer grids"""
    grid = np.geomspace(low, high, points)
    if integer:
        return sorted(set(int(round(x)) for x in grid))
    return [float(x) for x in grid]


def intersection_attack(U: int, p: float, l: int) -> Tuple[float, BinomialSpec]:
    """
    Expected anonymity set left after intersecting l independent fuzzy sets:
    p^l * U, with residual size ~ Binom(U, p^l).
    """
    require(validate_count(U, "U", minimum=1))
    require(validate_probability(p, "p"))
    require(validate_count(l, "l", minimum=1))
    residual = BinomialSpec(int(U), float(p) ** l)
    return residual.mean, residual


def simulate_intersection(U: int, p: float, l: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Residual set sizes from intersecting l simulated fuzzy sets, one per trial"""
    require(validate_count(U, "U", minimum=1))
    require(validate_probability(p, "p"))
    require(validate_count(l, "l", minimum=1))
    require(validate_count(trials, "trials", minimum=1))
    sizes = []
    for n in chunk_sizes(trials, max(1, CHUNK_CELLS // (U * l))):
        sets = rng.random((n, l, U)) < p
        sizes.append(np.all(sets, axis=1).sum(axis=1))
    return np.concatenate(sizes)


def sybil_pinpoint_prob(U: int, K: int, N: int) -> float:
    """
    Probability that N colluding users pin a message to a single recipient
    when its fuzzy set has K members: C(N+1, K) / C(U, K).
    """
    require(validate_count(U, "U", minimum=1))
    require(validate_count(K, "K", minimum=1))
    require(validate_count(N, "N"))
    if N >= U:
        raise ArgumentError(f"N ({N}) must be < U ({U})")
    if K > U:
        raise ArgumentError(f"K ({K}) must be <= U ({U})")
    if K > N + 1:
        return 0.0
    log_num = special.gammaln(N + 2) - special.gammaln(K + 1) - special.gammaln(N + 2 - K)
    log_den = special.gammaln(U + 1) - special.gammaln(K + 1) - special.gammaln(U + 1 - K)
    return float(min(1.0, math.exp(log_num - log_den)))
