"""Statistical attacks of the detection server for FMD-analysis

Relationship anonymity: for sender v and recipient u the fuzz in tag_v(u)
is Binom(out(v), p(u)) when the two never talk; a two-tailed Z (or t, for
small out(v)) test against that null exposes pairs.

Temporal detection ambiguity: per epoch of M_e messages, tag(u) is tested
against Binom(M_e, p(u)).
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from components.fmd_model import DetectionRate, dyadic_rate
from components.network_data import CommGraph, DegreeStats, RateAssignment
from components.simulator import EpochPartition, TagTable
from utils.errors import ArgumentError, DegenerateRateError
from utils.helpers import get_logger, require, validate_count, validate_probability

logger = get_logger(__name__)

DEFAULT_ALPHA = 0.01
# Z-test from this many sender messages (or epoch messages) upward, t below.
Z_TEST_MIN_N = 100
GUARD_MIN_EXPECTED = 5


class Tails(str, Enum):
    ONE = "one"
    TWO = "two"


class Verdict(str, Enum):
    FLAGGED = "flagged"
    NOT_FLAGGED = "not_flagged"
    INAPPLICABLE = "inapplicable"


@dataclass(frozen=True)
class SignificanceLevel:
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        require(validate_probability(self.alpha, "alpha", open_interval=True))


def _alpha(alpha) -> float:
    if isinstance(alpha, SignificanceLevel):
        return alpha.alpha
    return SignificanceLevel(float(alpha)).alpha


@dataclass(frozen=True)
class PairTestResult:
    sender: Optional[int]
    recipient: Optional[int]
    observed: int
    mean: float
    std: float
    statistic: float
    quantile: float
    verdict: Verdict
    guard_ok: bool = True
    degenerate: bool = False

    @property
    def flagged(self) -> bool:
        return self.verdict is Verdict.FLAGGED


@dataclass
class ConfusionStats:
    true_positive: int = 0
    false_positive: int = 0
    false_negative: int = 0
    true_negative: int = 0

    @property
    def precision(self) -> float:
        denominator = self.true_positive + self.false_positive
        return self.true_positive / denominator if denominator else 0.0

    @property
    def recall(self) -> float:
        denominator = self.true_positive + self.false_negative
        return self.true_positive / denominator if denominator else 0.0

    @property
    def total(self) -> int:
        return self.true_positive + self.false_positive + self.false_negative + self.true_negative

    def merge(self, other: "ConfusionStats") -> "ConfusionStats":
        return ConfusionStats(
            self.true_positive + other.true_positive,
            self.false_positive + other.false_positive,
            self.false_negative + other.false_negative,
            self.true_negative + other.true_negative,
        )

    @classmethod
    def from_masks(cls, predicted: np.ndarray, truth: np.ndarray) -> "ConfusionStats":
        predicted = np.asarray(predicted, dtype=bool)
        truth = np.asarray(truth, dtype=bool)
        return cls(
            int(np.count_nonzero(predicted & truth)),
            int(np.count_nonzero(predicted & ~truth)),
            int(np.count_nonzero(~predicted & truth)),
            int(np.count_nonzero(~predicted & ~truth)),
        )

    def to_dict(self) -> Dict[str, float]:
        return {
            "true_positive": self.true_positive,
            "false_positive": self.false_positive,
            "false_negative": self.false_negative,
            "true_negative": self.true_negative,
            "precision": self.precision,
            "recall": self.recall,
        }


def normal_quantile(alpha, tails: Tails = Tails.TWO) -> float:
    """q with P(|Z| > q) = alpha (two-tailed) or P(Z > q) = alpha (one-tailed)"""
    a = _alpha(alpha)
    tail = a / 2.0 if Tails(tails) is Tails.TWO else a
    return float(stats.norm.isf(tail))


def student_t_quantile(alpha, dof: int, tails: Tails = Tails.TWO) -> float:
    """Student-t counterpart of normal_quantile"""
    a = _alpha(alpha)
    require(validate_count(dof, "dof", minimum=1))
    tail = a / 2.0 if Tails(tails) is Tails.TWO else a
    return float(stats.t.isf(tail, dof))


def select_quantile(n: int, alpha, tails: Tails = Tails.TWO) -> float:
    """Z quantile for n >= 100, t with n-1 (at least 1) degrees of freedom below"""
    if n >= Z_TEST_MIN_N:
        return normal_quantile(alpha, tails)
    return student_t_quantile(alpha, max(int(n) - 1, 1), tails)


def approx_guard(n: int, p) -> bool:
    """Normal approximation of Binom(n, p) considered tight: np >= 5 and n(1-p) >= 5"""
    p = float(p)
    return n * p >= GUARD_MIN_EXPECTED and n * (1.0 - p) >= GUARD_MIN_EXPECTED


def _binomial_test(observed: int, n: int, p: DetectionRate, alpha, sender=None, recipient=None,
                   tails: Tails = Tails.TWO) -> PairTestResult:
    require(validate_count(n, "n"))
    require(validate_count(observed, "observed"))
    if n == 0:
        # Nothing sent or nothing in the epoch: no null to test against.
        return PairTestResult(sender, recipient, observed, 0.0, 0.0, 0.0, 0.0, Verdict.INAPPLICABLE,
                              guard_ok=False)
    value = float(p)
    require(validate_probability(value, "p"))
    mean = n * value
    if value == 0.0:
        # No fuzz possible: every tag is genuine.
        verdict = Verdict.FLAGGED if observed > 0 else Verdict.NOT_FLAGGED
        statistic = math.inf if observed > 0 else 0.0
        return PairTestResult(sender, recipient, observed, 0.0, 0.0, statistic, 0.0, verdict,
                              guard_ok=False, degenerate=True)
    if value == 1.0:
        # Everything is downloaded: perfect cover.
        return PairTestResult(sender, recipient, observed, mean, 0.0, 0.0, 0.0, Verdict.NOT_FLAGGED,
                              guard_ok=False, degenerate=True)
    std = math.sqrt(n * value * (1.0 - value))
    statistic = (observed - mean) / std
    quantile = select_quantile(n, alpha, tails)
    exceeds = abs(statistic) > quantile if Tails(tails) is Tails.TWO else statistic > quantile
    return PairTestResult(sender, recipient, observed, mean, std, statistic, quantile,
                          Verdict.FLAGGED if exceeds else Verdict.NOT_FLAGGED,
                          guard_ok=approx_guard(n, value))


def z_statistic(observed: float, n: int, p) -> float:
    """(observed - np) / sqrt(np(1-p)); undefined for p in {0, 1}"""
    value = float(p)
    if value in (0.0, 1.0):
        raise DegenerateRateError(f"null distribution is deterministic for p={value}")
    return (observed - n * value) / math.sqrt(n * value * (1.0 - value))


def rel_anon_test(observed: int, out: int, p: DetectionRate, alpha=DEFAULT_ALPHA,
                  sender: Optional[int] = None, recipient: Optional[int] = None) -> PairTestResult:
    """
    Two-tailed test of H: tag_v(u) ~ N(out(v)p(u), out(v)p(u)(1-p(u))).

    p = 0 and p = 1 use the exact rule (any tag at p = 0 is genuine; p = 1
    is never flagged) and are marked degenerate.
    """
    return _binomial_test(observed, out, p, alpha, sender, recipient, Tails.TWO)


def tda_test(observed_tags: int, epoch_messages: int, p: DetectionRate, alpha=DEFAULT_ALPHA,
             user: Optional[int] = None) -> PairTestResult:
    """Two-tailed test of H: tag(u) ~ N(p M_e, p(1-p) M_e) over one epoch"""
    return _binomial_test(observed_tags, epoch_messages, p, alpha, None, user, Tails.TWO)


def _check_open_rate(p) -> float:
    value = float(p)
    if value in (0.0, 1.0):
        raise DegenerateRateError(f"rate must lie strictly between 0 and 1, got {value}")
    require(validate_probability(value, "p", open_interval=True))
    return value


def _exposes(in_count: int, out: int, p: float, quantile: float) -> bool:
    """Is the expected tag count with in_count genuine messages flagged?"""
    expected = in_count + p * (out - in_count)
    return abs(expected - out * p) / math.sqrt(out * p * (1.0 - p)) > quantile


def min_exposing_messages(out: int, p: DetectionRate, alpha=DEFAULT_ALPHA) -> Optional[int]:
    """
    Smallest in in [1, out] whose expected tag count in + p(out - in) the
    relationship test flags; None when even in = out stays hidden.
    """
    require(validate_count(out, "out", minimum=1))
    value = _check_open_rate(p)
    quantile = select_quantile(out, alpha)
    # in(1-p) > q sqrt(out p (1-p))
    threshold = quantile * math.sqrt(out * value * (1.0 - value)) / (1.0 - value)
    candidate = max(1, int(math.floor(threshold)) + 1)
    # Settle float rounding at the boundary against the test itself.
    while candidate > 1 and _exposes(candidate - 1, out, value, quantile):
        candidate -= 1
    while candidate <= out and not _exposes(candidate, out, value, quantile):
        candidate += 1
    return candidate if candidate <= out else None


def min_exposing_messages_scan(out: int, p: DetectionRate, alpha=DEFAULT_ALPHA) -> Optional[int]:
    """Linear-scan oracle for min_exposing_messages"""
    require(validate_count(out, "out", minimum=1))
    value = _check_open_rate(p)
    quantile = select_quantile(out, alpha)
    for in_count in range(1, out + 1):
        expected = in_count + value * (out - in_count)
        if abs(z_statistic(expected, out, value)) > quantile:
            return in_count
    return None


def min_rate_for_tda(epoch_messages: int, in_epoch: int, alpha=DEFAULT_ALPHA) -> float:
    """
    Smallest p for which in genuine messages among M_e stay undetected:
    in(1-p) <= q sqrt(p(1-p)M_e)  <=>  p >= in^2 / (q^2 M_e + in^2).
    """
    require(validate_count(epoch_messages, "epoch_messages", minimum=1))
    require(validate_count(in_epoch, "in_epoch"))
    if in_epoch > epoch_messages:
        raise ArgumentError(f"in_epoch ({in_epoch}) exceeds epoch_messages ({epoch_messages})")
    if in_epoch == 0:
        return 0.0
    quantile = select_quantile(epoch_messages, alpha)
    return in_epoch ** 2 / (quantile ** 2 * epoch_messages + in_epoch ** 2)


def min_rate_for_tda_scan(epoch_messages: int, in_epoch: int, alpha=DEFAULT_ALPHA,
                          resolution: float = 1e-5) -> float:
    """Grid-scan oracle: first grid p whose expected observation is not flagged"""
    require(validate_count(epoch_messages, "epoch_messages", minimum=1))
    if in_epoch > epoch_messages:
        raise ArgumentError(f"in_epoch ({in_epoch}) exceeds epoch_messages ({epoch_messages})")
    if in_epoch == 0:
        return 0.0
    quantile = select_quantile(epoch_messages, alpha)
    grid = np.arange(1, int(round(1.0 / resolution))) * resolution
    expected = in_epoch + grid * (epoch_messages - in_epoch)
    statistic = (expected - grid * epoch_messages) / np.sqrt(grid * (1.0 - grid) * epoch_messages)
    hidden = np.flatnonzero(np.abs(statistic) <= quantile)
    return float(grid[hidden[0]]) if hidden.size else 1.0


def min_exposing_curve(outs: Sequence[int], exponents: Sequence[int], alpha=DEFAULT_ALPHA) -> pd.DataFrame:
    """Rows "out,exponent,p,min_messages" (min_messages empty when never exposed)"""
    rows = []
    for l in exponents:
        rate = dyadic_rate(l)
        for out in outs:
            rows.append({"out": int(out), "exponent": int(l), "p": rate.value,
                         "min_messages": min_exposing_messages(int(out), rate, alpha)})
    frame = pd.DataFrame(rows, columns=["out", "exponent", "p", "min_messages"])
    frame["min_messages"] = frame["min_messages"].astype("Int64")
    return frame


def min_rate_curve(epoch_messages: Sequence[int], in_values: Sequence[int], alpha=DEFAULT_ALPHA) -> pd.DataFrame:
    """Rows "epoch_messages,in_epoch,min_rate" """
    rows = []
    for m_e in epoch_messages:
        for in_epoch in in_values:
            if in_epoch > m_e:
                continue
            rows.append({"epoch_messages": int(m_e), "in_epoch": int(in_epoch),
                         "min_rate": min_rate_for_tda(int(m_e), int(in_epoch), alpha)})
    return pd.DataFrame(rows, columns=["epoch_messages", "in_epoch", "min_rate"])


@dataclass
class RelationshipScan:
    """Outcome of testing every ordered (sender, recipient) pair"""

    confusion: ConfusionStats
    flagged_senders: np.ndarray
    flagged_recipients: np.ndarray
    guard_violations: int
    tested_pairs: int
    pair_frame: Optional[pd.DataFrame] = None
    breakdown: Optional[pd.DataFrame] = None
    unordered: Optional[ConfusionStats] = None

    @property
    def flagged_pairs(self) -> List[Tuple[int, int]]:
        return list(zip(self.flagged_senders.tolist(), self.flagged_recipients.tolist()))

    def metadata(self) -> Dict[str, object]:
        return {"tested_pairs": self.tested_pairs, "guard_violations": self.guard_violations,
                "flagged_pairs": int(self.flagged_senders.shape[0])}


def _sender_quantiles(out_degree: np.ndarray, alpha: float) -> np.ndarray:
    """Per-sender test quantile, computed once per distinct out(v)"""
    quantiles = np.zeros(out_degree.shape[0], dtype=float)
    for out in np.unique(out_degree[out_degree > 0]):
        quantiles[out_degree == out] = select_quantile(int(out), alpha)
    return quantiles


def relationship_scan(table: TagTable, stats: DegreeStats, rates: RateAssignment, alpha=DEFAULT_ALPHA,
                      graph: Optional[CommGraph] = None, unordered: bool = False,
                      keep_rows: bool = False) -> RelationshipScan:
    """
    Test every ordered pair (v, u), v != u, out(v) >= 1. A pair is a true
    relationship iff in_v(u) >= 1. No multiple-testing correction.
    """
    a = _alpha(alpha)
    n = stats.in_degree.shape[0]
    senders = np.flatnonzero(stats.out_degree > 0)
    out = stats.out_degree[senders].astype(float)
    quantiles = _sender_quantiles(stats.out_degree, a)[senders]
    genuine_by_recipient = stats.pair_counts.tocsc()

    confusion = ConfusionStats()
    flagged_s: List[np.ndarray] = []
    flagged_r: List[np.ndarray] = []
    guard_violations = 0
    tested = 0
    rows: List[pd.DataFrame] = []
    breakdown_parts: List[pd.DataFrame] = []

    for u in range(n):
        p = float(rates.values[u])
        observed = table.recipient_column(u)[senders].astype(float)
        genuine = np.asarray(genuine_by_recipient[:, u].toarray()).ravel()[senders]
        valid = senders != u
        mean = out * p
        std = np.sqrt(out * p * (1.0 - p))
        if p == 0.0:
            statistic = np.where(observed > 0, np.inf, 0.0)
            flagged = observed > 0
        elif p == 1.0:
            statistic = np.zeros_like(observed)
            flagged = np.zeros(observed.shape, dtype=bool)
        else:
            statistic = (observed - mean) / std
            flagged = np.abs(statistic) > quantiles
            guard = (mean >= GUARD_MIN_EXPECTED) & (out * (1.0 - p) >= GUARD_MIN_EXPECTED)
            guard_violations += int(np.count_nonzero(~guard & valid))
        flagged &= valid
        truth = (genuine > 0) & valid
        tested += int(np.count_nonzero(valid))
        confusion = confusion.merge(ConfusionStats.from_masks(flagged[valid], truth[valid]))
        if np.any(flagged):
            flagged_s.append(senders[flagged])
            flagged_r.append(np.full(int(np.count_nonzero(flagged)), u, dtype=np.int64))
        breakdown_parts.append(pd.DataFrame({
            "rate": p, "exchanged": genuine[valid], "flagged": flagged[valid],
        }))
        if keep_rows:
            keep = valid & (flagged | truth)
            rows.append(pd.DataFrame({
                "sender": senders[keep], "recipient": u, "observed": observed[keep].astype(np.int64),
                "mean": mean[keep], "std": std[keep], "statistic": statistic[keep],
                "quantile": quantiles[keep] if 0.0 < p < 1.0 else 0.0,
                "flagged": flagged[keep].astype(np.int64), "truth": truth[keep].astype(np.int64),
            }))

    scan = RelationshipScan(
        confusion=confusion,
        flagged_senders=np.concatenate(flagged_s) if flagged_s else np.zeros(0, dtype=np.int64),
        flagged_recipients=np.concatenate(flagged_r) if flagged_r else np.zeros(0, dtype=np.int64),
        guard_violations=guard_violations,
        tested_pairs=tested,
    )
    scan.breakdown = _breakdown(pd.concat(breakdown_parts, ignore_index=True)) if breakdown_parts else None
    if keep_rows:
        frame = pd.concat(rows, ignore_index=True) if rows else pd.DataFrame(
            columns=["sender", "recipient", "observed", "mean", "std", "statistic", "quantile", "flagged", "truth"])
        if graph is not None and not frame.empty:
            frame["sender"] = graph.original_ids[frame["sender"].to_numpy()]
            frame["recipient"] = graph.original_ids[frame["recipient"].to_numpy()]
        scan.pair_frame = frame
    if unordered:
        scan.unordered = unordered_confusion(scan, stats)
    if guard_violations:
        logger.info(f"⚠️ Normal approximation guard failed for {guard_violations} of {tested} pairs")
    logger.info(f"relationship scan: precision={confusion.precision:.3f} recall={confusion.recall:.3f}")
    return scan


def _breakdown(pairs: pd.DataFrame) -> pd.DataFrame:
    """Pair counts and flags per (rate, exchanged messages)"""
    grouped = pairs.groupby(["rate", "exchanged"], sort=True)["flagged"].agg(["size", "sum"]).reset_index()
    grouped.columns = ["rate", "exchanged", "pairs", "flagged"]
    return grouped


def recall_breakdown(breakdown: pd.DataFrame) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Returns: (per (rate, exchanged >= 1) recall rows, per-rate precision rows)
    """
    positives = breakdown[breakdown["exchanged"] >= 1].copy()
    positives["recall"] = positives["flagged"] / positives["pairs"]
    per_rate = breakdown.assign(tp=np.where(breakdown["exchanged"] >= 1, breakdown["flagged"], 0)) \
        .groupby("rate", sort=True)[["flagged", "tp"]].sum().reset_index()
    per_rate["precision"] = np.where(per_rate["flagged"] > 0, per_rate["tp"] / per_rate["flagged"].clip(lower=1), 0.0)
    per_rate.columns = ["rate", "flagged", "true_positive", "precision"]
    return positives.reset_index(drop=True), per_rate


def unordered_confusion(scan: RelationshipScan, stats: DegreeStats) -> ConfusionStats:
    """Confusion over unordered pairs {a, b}: related if either direction is"""
    n = stats.in_degree.shape[0]
    lo = np.minimum(scan.flagged_senders, scan.flagged_recipients)
    hi = np.maximum(scan.flagged_senders, scan.flagged_recipients)
    predicted = set(zip(lo.tolist(), hi.tolist()))
    coo = stats.pair_counts.tocoo()
    t_lo, t_hi = np.minimum(coo.row, coo.col), np.maximum(coo.row, coo.col)
    truth = set(zip(t_lo.tolist(), t_hi.tolist()))
    silent = int(np.count_nonzero(stats.out_degree == 0))
    tested = n * (n - 1) // 2 - silent * (silent - 1) // 2
    tp = len(predicted & truth)
    fp = len(predicted - truth)
    fn = len(truth - predicted)
    return ConfusionStats(tp, fp, fn, tested - tp - fp - fn)


@dataclass
class TdaScan:
    confusion: ConfusionStats
    frame: Optional[pd.DataFrame] = None


def tda_scan(epochs: EpochPartition, rates: RateAssignment, alpha=DEFAULT_ALPHA,
             graph: Optional[CommGraph] = None, keep_rows: bool = False) -> TdaScan:
    """
    Per (epoch, user): predict a genuine reception iff tda_test flags on the
    excess side (statistic > 0). Truth: at least one genuine message.
    """
    a = _alpha(alpha)
    sizes = epochs.epoch_sizes.astype(float)[:, None]
    p = rates.values[None, :]
    observed = epochs.per_epoch_tags.astype(float)
    mean = sizes * p
    with np.errstate(divide="ignore", invalid="ignore"):
        std = np.sqrt(sizes * p * (1.0 - p))
        statistic = np.where(std > 0, (observed - mean) / np.where(std > 0, std, 1.0), 0.0)
    quantiles = np.asarray([select_quantile(int(s), a) for s in epochs.epoch_sizes])[:, None]
    interior = (p > 0.0) & (p < 1.0)
    predicted = np.where(interior, (statistic > 0) & (np.abs(statistic) > quantiles), False)
    zero_rate = np.broadcast_to(p == 0.0, observed.shape)
    predicted = np.where(zero_rate, observed > 0, predicted)
    statistic = np.where(zero_rate, np.where(observed > 0, np.inf, 0.0), statistic)
    truth = epochs.per_epoch_genuine >= 1
    confusion = ConfusionStats.from_masks(predicted, truth)
    frame = None
    if keep_rows:
        e_idx, u_idx = np.nonzero(predicted | truth)
        users = u_idx if graph is None else graph.original_ids[u_idx]
        frame = pd.DataFrame({
            "epoch": e_idx, "user": users,
            "observed": epochs.per_epoch_tags[e_idx, u_idx],
            "expected": np.broadcast_to(mean, observed.shape)[e_idx, u_idx],
            "statistic": statistic[e_idx, u_idx],
            "flagged": predicted[e_idx, u_idx].astype(np.int64),
            "truth": truth[e_idx, u_idx].astype(np.int64),
        })
    logger.info(f"TDA scan: precision={confusion.precision:.3f} recall={confusion.recall:.3f}")
    return TdaScan(confusion, frame)
