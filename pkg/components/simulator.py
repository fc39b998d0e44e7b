"""Fuzzy-download simulation for FMD-analysis

Two backends produce the server's observable tag_v(u):

* per_message: one Bernoulli draw per (message, user), exactly what the
  ideal detector does. Needed for epochs, O(M*U) draws.
* aggregated: tag_v(u) = in_v(u) + Binom(out(v) - in_v(u), p(u)), the same
  marginal law with O(senders*U) draws.

Every user's draws come from a stream keyed by (seed, fold, user), so a
fold is reproducible and independent of thread scheduling. Per-message
downloads and aggregated counts use separate stream purposes: the
per_message table and the epoch partition of a run share one world, the
aggregated table is an independent draw.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import sparse

from components.fmd_model import DetectionRate
from components.network_data import CommGraph, DegreeStats, RateAssignment, degree_stats
from utils.errors import ArgumentError
from utils.helpers import STREAM_DOWNLOADS, STREAM_EPOCHS, STREAM_TAG_COUNTS, get_logger, keyed_rng

logger = get_logger(__name__)

DEFAULT_EPOCH_SIZE = 25000


class Backend(str, Enum):
    PER_MESSAGE = "per_message"
    AGGREGATED = "aggregated"


class EpochMode(str, Enum):
    CONTIGUOUS = "contiguous"
    RANDOM = "random"


@dataclass(frozen=True)
class SimulationRun:
    """(seed, fold) fully determine a run for a fixed backend"""

    seed: int
    fold_index: int = 0
    backend: Backend = Backend.AGGREGATED

    def user_stream(self, user: int) -> np.random.Generator:
        return keyed_rng(self.seed, STREAM_DOWNLOADS, self.fold_index, user)

    def count_stream(self, user: int) -> np.random.Generator:
        return keyed_rng(self.seed, STREAM_TAG_COUNTS, self.fold_index, user)


@dataclass(frozen=True, eq=False)
class TagTable:
    """Downloads per (sender, recipient) pair and per recipient"""

    pair_tags: sparse.csr_matrix
    totals: np.ndarray
    fuzzy_edge_count: int
    backend: Backend

    def tag(self, sender: int, recipient: int) -> int:
        return int(self.pair_tags[sender, recipient])

    def recipient_column(self, recipient: int) -> np.ndarray:
        """Dense tag_v(u) over all senders v for one recipient u"""
        return np.asarray(self._by_recipient[:, recipient].toarray()).ravel()

    @property
    def _by_recipient(self) -> sparse.csc_matrix:
        cached = self.__dict__.get("_csc")
        if cached is None:
            cached = self.pair_tags.tocsc()
            object.__setattr__(self, "_csc", cached)
        return cached


def _map_users(fn: Callable[[int], object], users: Iterable[int], threads: int = 1) -> List[object]:
    """Apply fn to each user, results in user order regardless of threads"""
    users = list(users)
    if threads <= 1 or len(users) < 2:
        return [fn(u) for u in users]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, users))


def _assemble(columns: List[Tuple[np.ndarray, np.ndarray]], user_count: int, message_count: int,
              backend: Backend) -> TagTable:
    """Merge per-recipient (senders, counts) columns into a TagTable"""
    rows, cols, data = [], [], []
    totals = np.zeros(user_count, dtype=np.int64)
    for recipient, (senders, counts) in enumerate(columns):
        rows.append(senders)
        cols.append(np.full(senders.shape[0], recipient, dtype=np.int64))
        data.append(counts)
        totals[recipient] = int(counts.sum())
    pair_tags = sparse.coo_matrix(
        (np.concatenate(data) if data else np.zeros(0, dtype=np.int64),
         (np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64),
          np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64))),
        shape=(user_count, user_count),
    ).tocsr()
    return TagTable(pair_tags, totals, int(totals.sum()) - message_count, backend)


class FuzzyDownloads:
    """Per-message download decisions of every user for one run"""

    def __init__(self, graph: CommGraph, rates: RateAssignment, run: SimulationRun):
        if len(rates) != graph.user_count:
            raise ArgumentError(f"rate assignment covers {len(rates)} users, graph has {graph.user_count}")
        self.graph = graph
        self.rates = rates
        self.run = run

    def user_mask(self, user: int, rate: Optional[float] = None) -> np.ndarray:
        """
        Boolean mask over messages downloaded by user.

        One uniform per message, drawn in message order, including the
        user's own genuine messages (which are then forced to match).
        """
        p = float(self.rates.values[user]) if rate is None else float(rate)
        draws = self.run.user_stream(user).random(self.graph.message_count)
        mask = draws < p
        mask |= self.graph.recipients == user
        return mask


def simulate_per_message(graph: CommGraph, rates: RateAssignment, run: SimulationRun,
                         threads: int = 1) -> TagTable:
    """Fuzzy downloads by one Bernoulli draw per (message, user)"""
    source = FuzzyDownloads(graph, rates, run)
    n = graph.user_count

    def column(user: int) -> Tuple[np.ndarray, np.ndarray]:
        counts = np.bincount(graph.senders[source.user_mask(user)], minlength=n)
        senders = np.flatnonzero(counts)
        return senders.astype(np.int64), counts[senders].astype(np.int64)

    table = _assemble(_map_users(column, range(n), threads), n, graph.message_count, Backend.PER_MESSAGE)
    logger.debug(f"per-message fold {run.fold_index}: {table.fuzzy_edge_count} fuzzy edges")
    return table


def simulate_aggregated(graph: CommGraph, rates: RateAssignment, run: SimulationRun,
                        stats: Optional[DegreeStats] = None, threads: int = 1) -> TagTable:
    """
    Fuzzy downloads by one binomial draw per (active sender, recipient).

    Only senders with out(v) > 0 are drawn; every such sender is drawn for
    every recipient, so the totals need no pooled remainder.
    """
    if len(rates) != graph.user_count:
        raise ArgumentError(f"rate assignment covers {len(rates)} users, graph has {graph.user_count}")
    stats = stats or degree_stats(graph)
    n = graph.user_count
    active = np.flatnonzero(stats.out_degree > 0)
    out_active = stats.out_degree[active]
    pairs_by_recipient = stats.pair_counts.tocsc()

    def column(user: int) -> Tuple[np.ndarray, np.ndarray]:
        genuine = np.asarray(pairs_by_recipient[:, user].toarray()).ravel()[active]
        fuzz = user_binomial(run, user, out_active - genuine, float(rates.values[user]))
        counts = genuine + fuzz
        keep = counts > 0
        return active[keep].astype(np.int64), counts[keep].astype(np.int64)

    table = _assemble(_map_users(column, range(n), threads), n, graph.message_count, Backend.AGGREGATED)
    logger.debug(f"aggregated fold {run.fold_index}: {table.fuzzy_edge_count} fuzzy edges")
    return table


def user_binomial(run: SimulationRun, user: int, trials: np.ndarray, p: float) -> np.ndarray:
    """Binomial fuzz counts from the user's keyed stream"""
    return run.count_stream(user).binomial(trials, p).astype(np.int64)


def simulate(graph: CommGraph, rates: RateAssignment, run: SimulationRun,
             stats: Optional[DegreeStats] = None, threads: int = 1) -> TagTable:
    """Dispatch on run.backend"""
    if Backend(run.backend) is Backend.PER_MESSAGE:
        return simulate_per_message(graph, rates, run, threads=threads)
    return simulate_aggregated(graph, rates, run, stats=stats, threads=threads)


def tag_frame(graph: CommGraph, table: TagTable, stats: DegreeStats) -> pd.DataFrame:
    """Rows of "sender,recipient,genuine,tags" for every pair with tags > 0"""
    coo = table.pair_tags.tocoo()
    order = np.lexsort((coo.col, coo.row))
    senders, recipients, tags = coo.row[order], coo.col[order], coo.data[order]
    genuine = np.asarray(stats.pair_counts[senders, recipients]).ravel()
    return pd.DataFrame({
        "sender": graph.original_ids[senders],
        "recipient": graph.original_ids[recipients],
        "genuine": genuine.astype(np.int64),
        "tags": tags.astype(np.int64),
    })


@dataclass(frozen=True, eq=False)
class EpochPartition:
    """Messages split into epochs, with per-(epoch, user) tag and genuine counts"""

    epoch_size: int
    boundaries: List[Tuple[int, int]]
    per_epoch_tags: np.ndarray
    per_epoch_genuine: np.ndarray
    message_order: np.ndarray
    mode: EpochMode = EpochMode.CONTIGUOUS

    @property
    def epoch_count(self) -> int:
        return len(self.boundaries)

    @property
    def epoch_sizes(self) -> np.ndarray:
        return np.asarray([end - start for start, end in self.boundaries], dtype=np.int64)


def _epoch_of_message(graph: CommGraph, epoch_size: int, mode: EpochMode,
                      run: SimulationRun) -> Tuple[np.ndarray, np.ndarray]:
    m = graph.message_count
    if mode is EpochMode.RANDOM:
        order = keyed_rng(run.seed, STREAM_EPOCHS, run.fold_index).permutation(m)
    else:
        order = np.arange(m)
    epoch_of = np.empty(m, dtype=np.int64)
    epoch_of[order] = np.arange(m) // epoch_size
    return order, epoch_of


def partition_epochs(graph: CommGraph, source: FuzzyDownloads, epoch_size: int = DEFAULT_EPOCH_SIZE,
                     mode: EpochMode = EpochMode.CONTIGUOUS, threads: int = 1) -> EpochPartition:
    """
    Split messages into epochs of epoch_size (last one may be smaller) and
    count per-epoch downloads and genuine receptions of every user.

    Contiguous epochs follow timestamp order; random epochs are blocks of a
    keyed permutation of the messages.
    """
    if epoch_size < 1:
        raise ArgumentError(f"epoch_size must be >= 1, got {epoch_size}")
    mode = EpochMode(mode)
    m, n = graph.message_count, graph.user_count
    order, epoch_of = _epoch_of_message(graph, epoch_size, mode, source.run)
    epochs = max(1, -(-m // epoch_size))
    boundaries = [(e * epoch_size, min(m, (e + 1) * epoch_size)) for e in range(epochs)]

    genuine = np.bincount(epoch_of * n + graph.recipients, minlength=epochs * n).reshape(epochs, n)

    def column(user: int) -> np.ndarray:
        return np.bincount(epoch_of[source.user_mask(user)], minlength=epochs)

    tags = np.stack(_map_users(column, range(n), threads), axis=1).astype(np.int64)
    logger.debug(f"{epochs} {mode.value} epoch(s) of size {epoch_size}")
    return EpochPartition(epoch_size, boundaries, tags, genuine.astype(np.int64), order, mode)


def tag_probability_series(partition: EpochPartition, user: int) -> np.ndarray:
    """Fraction of each epoch's messages the user downloaded"""
    return partition.per_epoch_tags[:, user] / partition.epoch_sizes


def user_epoch_profile(graph: CommGraph, user: int, rates: Iterable[DetectionRate], run: SimulationRun,
                       epoch_size: int = DEFAULT_EPOCH_SIZE,
                       mode: EpochMode = EpochMode.CONTIGUOUS) -> pd.DataFrame:
    """
    Per-epoch tag probability of one user under several candidate rates,
    everything else fixed. Rows: "epoch,rate,tag_probability,genuine".
    """
    if not 0 <= user < graph.user_count:
        raise ArgumentError(f"user {user} not in graph")
    if epoch_size < 1:
        raise ArgumentError(f"epoch_size must be >= 1, got {epoch_size}")
    mode = EpochMode(mode)
    _, epoch_of = _epoch_of_message(graph, epoch_size, mode, run)
    epochs = max(1, -(-graph.message_count // epoch_size))
    sizes = np.bincount(epoch_of, minlength=epochs)
    genuine = np.bincount(epoch_of[graph.recipients == user], minlength=epochs)
    placeholder = RateAssignment(np.zeros(graph.user_count))
    source = FuzzyDownloads(graph, placeholder, run)
    frames = []
    for rate in rates:
        tags = np.bincount(epoch_of[source.user_mask(user, rate=rate.value)], minlength=epochs)
        frames.append(pd.DataFrame({
            "epoch": np.arange(epochs),
            "rate": rate.value,
            "tag_probability": tags / sizes,
            "genuine": genuine,
        }))
    return pd.concat(frames, ignore_index=True)


def epoch_frame(graph: CommGraph, partition: EpochPartition) -> pd.DataFrame:
    """Rows of "epoch,user,genuine,tags" for every (epoch, user) with tags > 0"""
    epochs, users = np.nonzero(partition.per_epoch_tags)
    return pd.DataFrame({
        "epoch": epochs.astype(np.int64),
        "user": graph.original_ids[users],
        "genuine": partition.per_epoch_genuine[epochs, users],
        "tags": partition.per_epoch_tags[epochs, users],
    })
