"""The rate-selection game of FMD for FMD-analysis

Each user u picks a false-positive rate p(u). Their relationships stay
hidden only if somebody else downloads their messages too, so the privacy
term depends on everyone's rates but their own, while the bandwidth term
depends only on their own rate:

    phi_u = -L * (1 - (1 - alpha_u)^in(u)) - f * (in(u) + p(u) (M - in(u)))
    alpha_u = prod_{v != u} (1 - p(v))

The game is an exact potential game with
Psi = -f * sum_u p(u) (M - in(u)).
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from components.network_data import degree_stats, load_edge_list
from utils.config import load_flat_json
from utils.errors import ArgumentError, ConfigError
from utils.helpers import get_logger, require, validate_count, validate_probability

logger = get_logger(__name__)

DEFAULT_GRID = 1001


@dataclass(frozen=True, eq=False)
class GameConfig:
    download_cost: float
    privacy_loss: float
    in_counts: np.ndarray
    total_messages: int

    def __post_init__(self):
        object.__setattr__(self, "in_counts", np.asarray(self.in_counts, dtype=np.int64))
        is_valid, message = validate_game_config(self)
        if not is_valid:
            raise ConfigError(message)

    @property
    def user_count(self) -> int:
        return int(self.in_counts.shape[0])

    @property
    def f(self) -> float:
        return self.download_cost

    @property
    def L(self) -> float:
        return self.privacy_loss

    @property
    def M(self) -> int:
        return self.total_messages

    @classmethod
    def from_degrees(cls, in_degree: Sequence[int], download_cost: float = 1.0,
                     privacy_loss: Optional[float] = None) -> "GameConfig":
        """Game on a dataset's degree sequence; L defaults to 10 f M"""
        in_degree = np.asarray(in_degree, dtype=np.int64)
        M = int(in_degree.sum())
        if privacy_loss is None:
            privacy_loss = 10.0 * download_cost * M
        return cls(download_cost, privacy_loss, in_degree, M)

    def to_dict(self) -> Dict[str, object]:
        return {"U": self.user_count, "f": self.f, "L": self.L, "M": self.M,
                "in_counts": self.in_counts.tolist()}


def validate_game_config(config: GameConfig) -> Tuple[bool, str]:
    """
    Validate a game configuration
    Returns: (is_valid, error_message)
    """
    if not (isinstance(config.download_cost, (int, float)) and config.download_cost > 0):
        return False, f"download cost f must be > 0, got {config.download_cost}"
    if not (isinstance(config.privacy_loss, (int, float)) and config.privacy_loss > 0):
        return False, f"privacy loss L must be > 0, got {config.privacy_loss}"
    if config.in_counts.ndim != 1 or config.in_counts.shape[0] < 1:
        return False, "in_counts must be a non-empty list"
    if np.any(config.in_counts < 0):
        return False, "in_counts must be non-negative"
    if not isinstance(config.total_messages, (int, np.integer)) or config.total_messages < 0:
        return False, f"M must be a non-negative integer, got {config.total_messages}"
    if np.any(config.in_counts > config.total_messages):
        return False, "every in(u) must be <= M"
    return True, ""


@dataclass(frozen=True, eq=False)
class StrategyProfile:
    rates: np.ndarray

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        if rates.ndim != 1:
            raise ArgumentError("profile must be a vector of rates")
        if np.any((rates < 0.0) | (rates > 1.0)) or np.any(np.isnan(rates)):
            raise ArgumentError("every rate must lie in [0, 1]")
        object.__setattr__(self, "rates", rates)

    def __len__(self) -> int:
        return int(self.rates.shape[0])

    def deviate(self, user: int, rate: float) -> "StrategyProfile":
        rates = self.rates.copy()
        rates[user] = rate
        return StrategyProfile(rates)

    @classmethod
    def constant(cls, user_count: int, rate: float) -> "StrategyProfile":
        return cls(np.full(user_count, float(rate)))

    @classmethod
    def random(cls, user_count: int, rng: np.random.Generator) -> "StrategyProfile":
        return cls(rng.random(user_count))


@dataclass(frozen=True)
class UtilityBreakdown:
    privacy_term: float
    bandwidth_term: float

    @property
    def total(self) -> float:
        return self.privacy_term + self.bandwidth_term


def _check(user: int, profile: StrategyProfile, config: GameConfig):
    if len(profile) != config.user_count:
        raise ArgumentError(f"profile has {len(profile)} rates, game has {config.user_count} users")
    if not 0 <= user < config.user_count:
        raise ArgumentError(f"user {user} out of range")


def linkage_alpha(user: int, profile: StrategyProfile) -> float:
    """prod over v != u of (1 - p(v))"""
    if not 0 <= user < len(profile):
        raise ArgumentError(f"user {user} out of range")
    others = np.delete(profile.rates, user)
    return float(np.prod(1.0 - others))


def _privacy_term(alpha: float, in_count: int, loss: float) -> float:
    if in_count == 0:
        return 0.0
    return -loss * (1.0 - (1.0 - alpha) ** in_count)


def _bandwidth_term(rate: float, in_count: int, config: GameConfig) -> float:
    return -config.f * (in_count + rate * (config.M - in_count))


def utility(user: int, profile: StrategyProfile, config: GameConfig) -> UtilityBreakdown:
    """phi_u split into its privacy and bandwidth terms"""
    _check(user, profile, config)
    in_count = int(config.in_counts[user])
    return UtilityBreakdown(
        _privacy_term(linkage_alpha(user, profile), in_count, config.L),
        _bandwidth_term(float(profile.rates[user]), in_count, config),
    )


def own_rate_derivative(user: int, config: GameConfig) -> float:
    """d phi_u / d p(u) = -f (M - in(u)), whatever the others play"""
    return -config.f * (config.M - int(config.in_counts[user]))


def _grid(grid: int) -> np.ndarray:
    require(validate_count(grid, "grid", minimum=2))
    return np.linspace(0.0, 1.0, grid)


def best_response(user: int, profile: StrategyProfile, config: GameConfig, grid: int = DEFAULT_GRID) -> float:
    """Argmax of phi_u over the rate grid, others fixed; ties go to the smaller rate"""
    _check(user, profile, config)
    candidates = _grid(grid)
    in_count = int(config.in_counts[user])
    # Own rate does not enter alpha_u, so the privacy term is a constant here.
    privacy = _privacy_term(linkage_alpha(user, profile), in_count, config.L)
    values = privacy - config.f * (in_count + candidates * (config.M - in_count))
    return float(candidates[int(np.argmax(values))])


@dataclass
class DynamicsResult:
    final: StrategyProfile
    iterations: int
    converged: bool
    changes: int = 0
    potential_trace: List[float] = field(default_factory=list)
    trajectory: List[List[float]] = field(default_factory=list)
    moves: List[Tuple[int, float]] = field(default_factory=list)


def br_dynamics(initial: StrategyProfile, config: GameConfig, max_iters: int = 100,
                grid: int = DEFAULT_GRID, record_trajectory: bool = False) -> DynamicsResult:
    """
    Round-robin best responses in user-index order until a full round
    changes nothing. Each accepted change is logged as a (user, rate) move
    and in the potential trace; record_trajectory also keeps every profile.
    """
    require(validate_count(max_iters, "max_iters", minimum=1))
    if len(initial) != config.user_count:
        raise ArgumentError(f"profile has {len(initial)} rates, game has {config.user_count} users")
    profile = initial
    trace = [potential(profile, config)]
    trajectory = [profile.rates.tolist()] if record_trajectory else []
    moves: List[Tuple[int, float]] = []
    changes = 0
    for iteration in range(1, max_iters + 1):
        changed = False
        for user in range(config.user_count):
            response = best_response(user, profile, config, grid)
            current = float(profile.rates[user])
            gain = utility(user, profile.deviate(user, response), config).total - utility(user, profile, config).total
            if response != current and gain > 0:
                profile = profile.deviate(user, response)
                trace.append(potential(profile, config))
                moves.append((user, response))
                changes += 1
                changed = True
                if record_trajectory:
                    trajectory.append(profile.rates.tolist())
        if not changed:
            logger.debug(f"best-response dynamics converged after {iteration} round(s), {changes} change(s)")
            return DynamicsResult(profile, iteration, True, changes, trace, trajectory, moves)
    logger.warning(f"⚠️ best-response dynamics did not converge in {max_iters} rounds")
    return DynamicsResult(profile, max_iters, False, changes, trace, trajectory, moves)


def is_nash(profile: StrategyProfile, config: GameConfig, grid: int = DEFAULT_GRID,
            tolerance: float = 1e-9) -> bool:
    """No user gains more than tolerance by any grid deviation"""
    candidates = _grid(grid)
    for user in range(config.user_count):
        _check(user, profile, config)
        current = utility(user, profile, config).total
        in_count = int(config.in_counts[user])
        privacy = _privacy_term(linkage_alpha(user, profile), in_count, config.L)
        best = float(np.max(privacy - config.f * (in_count + candidates * (config.M - in_count))))
        if best - current > tolerance:
            return False
    return True


def potential(profile: StrategyProfile, config: GameConfig) -> float:
    """Psi = -f * sum_u p(u) (M - in(u))"""
    if len(profile) != config.user_count:
        raise ArgumentError(f"profile has {len(profile)} rates, game has {config.user_count} users")
    return float(-config.f * np.sum(profile.rates * (config.M - config.in_counts)))


def potential_check(config: GameConfig, samples: int, rng: np.random.Generator) -> float:
    """
    Largest relative violation of
    phi_u(p, p_-u) - phi_u(p', p_-u) = Psi(p, p_-u) - Psi(p', p_-u)
    over random profiles and unilateral deviations.
    """
    require(validate_count(samples, "samples", minimum=1))
    worst = 0.0
    for _ in range(samples):
        profile = StrategyProfile.random(config.user_count, rng)
        user = int(rng.integers(0, config.user_count))
        deviated = profile.deviate(user, float(rng.random()))
        lhs = utility(user, profile, config).total - utility(user, deviated, config).total
        rhs = potential(profile, config) - potential(deviated, config)
        scale = max(abs(lhs), abs(rhs), abs(utility(user, profile, config).total), 1e-300)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


def uniform_utility(p: float, user: int, config: GameConfig) -> float:
    """phi_u when every user plays the same rate p"""
    require(validate_probability(p, "p"))
    if not 0 <= user < config.user_count:
        raise ArgumentError(f"user {user} out of range")
    in_count = int(config.in_counts[user])
    alpha = (1.0 - p) ** (config.user_count - 1)
    return _privacy_term(alpha, in_count, config.L) + _bandwidth_term(p, in_count, config)


def welfare(p: float, config: GameConfig) -> float:
    """Sum of uniform utilities"""
    return float(sum(uniform_utility(p, u, config) for u in range(config.user_count)))


def profile_welfare(profile: StrategyProfile, config: GameConfig) -> float:
    """Sum of utilities under an arbitrary profile"""
    return float(sum(utility(u, profile, config).total for u in range(config.user_count)))


def so_condition(config: GameConfig) -> bool:
    """f (M - max in(u)) < L: the social optimum is not the all-zero profile"""
    return config.f * (config.M - int(config.in_counts.max())) < config.L


def optimal_uniform_p(config: GameConfig, grid: int = DEFAULT_GRID) -> Tuple[float, float]:
    """
    Uniform rate maximising welfare on the grid (ties to the smaller rate).
    Returns: (p_star, welfare(p_star))
    """
    candidates = _grid(grid)
    values = _welfare_curve(candidates, config)
    best = int(np.argmax(values))
    return float(candidates[best]), float(values[best])


def _welfare_curve(candidates: np.ndarray, config: GameConfig) -> np.ndarray:
    """Vectorised welfare over a rate grid"""
    in_counts = config.in_counts.astype(float)
    alpha = (1.0 - candidates) ** (config.user_count - 1)
    privacy = -config.L * (1.0 - (1.0 - alpha[:, None]) ** in_counts[None, :])
    privacy = np.where(in_counts[None, :] == 0, 0.0, privacy)
    bandwidth = -config.f * (in_counts[None, :] + candidates[:, None] * (config.M - in_counts[None, :]))
    return (privacy + bandwidth).sum(axis=1)


def price_of_stability(config: GameConfig, grid: int = DEFAULT_GRID) -> Dict[str, float]:
    """
    Experimental: welfare of the best equilibrium over welfare of the
    uniform-rate social optimum. The only equilibrium (M > in(u)) is all-zero.
    """
    ne_welfare = welfare(0.0, config)
    p_star, so_welfare = optimal_uniform_p(config, grid)
    ratio = ne_welfare / so_welfare if so_welfare != 0 else math.nan
    return {"ne_welfare": ne_welfare, "so_welfare": so_welfare, "p_star": p_star,
            "price_of_stability": ratio, "experimental": True}


def game_config_from_file(path: str) -> GameConfig:
    """
    Build a game from a flat JSON file with keys f, L, M and in_counts, or
    f, L and dataset (an edge list whose in-degrees become in_counts and
    whose message count becomes M; L then defaults to 10 f M).
    """
    data = load_flat_json(path)
    unknown = sorted(set(data) - {"f", "L", "M", "in_counts", "dataset"})
    if unknown:
        raise ConfigError(f"{path}: unknown game keys {', '.join(unknown)}")
    try:
        f = float(data.get("f", 1.0))
        loss = data.get("L")
        loss = None if loss is None else float(loss)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: f and L must be numbers ({e})")
    if "dataset" in data:
        stats = degree_stats(load_edge_list(str(data["dataset"])))
        return GameConfig.from_degrees(stats.in_degree, f, loss)
    if "in_counts" not in data or "M" not in data:
        raise ConfigError(f"{path}: need either 'dataset' or both 'in_counts' and 'M'")
    if loss is None:
        raise ConfigError(f"{path}: 'L' is required with explicit in_counts")
    in_counts = data["in_counts"]
    if not isinstance(in_counts, list) or not all(isinstance(i, int) for i in in_counts):
        raise ConfigError(f"{path}: in_counts must be a list of integers")
    if not isinstance(data["M"], int):
        raise ConfigError(f"{path}: M must be an integer")
    return GameConfig(f, loss, np.asarray(in_counts, dtype=np.int64), int(data["M"]))
