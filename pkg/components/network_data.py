"""Communication-graph ingestion and degree statistics for FMD-analysis"""
import os
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse

from components.fmd_model import DetectionRate
from utils.errors import ArgumentError, EmptyInputError, ParseError
from utils.helpers import get_logger, require, validate_count

logger = get_logger(__name__)

COMMENT_PREFIXES = ("#", "%")
EDGE_COLUMNS = ["source", "target", "timestamp"]


@dataclass(frozen=True)
class MessageEvent:
    """One directed, timestamped message"""

    sender: int
    recipient: int
    timestamp: int


@dataclass(frozen=True, eq=False)
class CommGraph:
    """
    Temporal message graph with dense user ids 0..U-1.

    Arrays are parallel and sorted by timestamp; original_ids maps each
    dense id back to the id used in the source file.
    """

    senders: np.ndarray
    recipients: np.ndarray
    timestamps: np.ndarray
    original_ids: np.ndarray
    self_loops_dropped: int = 0
    source: Optional[str] = None

    @property
    def user_count(self) -> int:
        return int(self.original_ids.shape[0])

    @property
    def message_count(self) -> int:
        return int(self.senders.shape[0])

    @property
    def events(self) -> List[MessageEvent]:
        """All messages as MessageEvent objects (materialised on each call)"""
        return list(self.iter_events())

    def iter_events(self) -> Iterator[MessageEvent]:
        for s, r, t in zip(self.senders.tolist(), self.recipients.tolist(), self.timestamps.tolist()):
            yield MessageEvent(s, r, t)

    def __len__(self) -> int:
        return self.message_count


@dataclass(frozen=True, eq=False)
class DegreeStats:
    """in(u), out(u) and the sparse pair counts in_v(u) indexed [sender, recipient]"""

    in_degree: np.ndarray
    out_degree: np.ndarray
    pair_counts: sparse.csr_matrix

    def pair(self, sender: int, recipient: int) -> int:
        return int(self.pair_counts[sender, recipient])


@dataclass(frozen=True, eq=False)
class RateAssignment:
    """One detection rate per user"""

    values: np.ndarray
    exponents: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.any((self.values < 0.0) | (self.values > 1.0)):
            raise ArgumentError("rates must lie in [0, 1]")

    def __getitem__(self, user: int) -> DetectionRate:
        exponent = None if self.exponents is None else int(self.exponents[user])
        return DetectionRate(float(self.values[user]), exponent)

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def rates(self) -> Dict[int, DetectionRate]:
        return {u: self[u] for u in range(len(self))}

    @classmethod
    def uniform(cls, user_count: int, rate: DetectionRate) -> "RateAssignment":
        exponents = None
        if rate.dyadic_exponent is not None:
            exponents = np.full(user_count, rate.dyadic_exponent, dtype=np.int64)
        return cls(np.full(user_count, rate.value, dtype=float), exponents)

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "RateAssignment":
        return cls(np.asarray(values, dtype=float))


def _build_graph(senders: np.ndarray, recipients: np.ndarray, timestamps: np.ndarray,
                 source: Optional[str] = None) -> CommGraph:
    """Drop self-loops, sort by time (stable) and re-index users densely"""
    loops = senders == recipients
    dropped = int(loops.sum())
    if dropped:
        logger.warning(f"⚠️ Dropped {dropped} self-loop message(s){' from ' + source if source else ''}")
        keep = ~loops
        senders, recipients, timestamps = senders[keep], recipients[keep], timestamps[keep]
    if senders.shape[0] == 0:
        raise EmptyInputError(f"no messages left{' in ' + source if source else ''} after dropping self-loops")

    order = np.argsort(timestamps, kind="stable")
    senders, recipients, timestamps = senders[order], recipients[order], timestamps[order]

    original_ids, dense = np.unique(np.concatenate([senders, recipients]), return_inverse=True)
    m = senders.shape[0]
    return CommGraph(
        senders=dense[:m].astype(np.int64),
        recipients=dense[m:].astype(np.int64),
        timestamps=timestamps.astype(np.int64),
        original_ids=original_ids.astype(np.int64),
        self_loops_dropped=dropped,
        source=source,
    )


def _data_lines(path: str) -> Iterator[Tuple[int, List[str]]]:
    """(line number, fields) of every non-blank line once '#' comments are cut"""
    with open(path, 'r', encoding='ascii', errors='replace') as f:
        for line_number, line in enumerate(f, start=1):
            fields = line.split('#', 1)[0].split()
            if fields:
                yield line_number, fields


def _is_long_comment(fields: List[str]) -> bool:
    return len(fields) > len(EDGE_COLUMNS) and str(fields[0]).startswith('%')


def _skip_long_comment(fields: List[str]) -> Optional[List[str]]:
    """read_csv bad-line hook: drop over-long '%' comments, reject other long rows"""
    if _is_long_comment(fields):
        return None
    raise ParseError(f"expected 'source target timestamp', got {len(fields)} field(s)")


def _read_edge_frame(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path, sep=r"\s+", comment="#", header=None, names=EDGE_COLUMNS, dtype=str,
                           skip_blank_lines=True, engine="python", on_bad_lines=_skip_long_comment,
                           encoding="ascii", encoding_errors="replace")
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=EDGE_COLUMNS, dtype=str)
    except ParseError as e:
        line_number = next((n for n, fields in _data_lines(path)
                            if len(fields) > len(EDGE_COLUMNS) and not _is_long_comment(fields)), None)
        raise ParseError(str(e), line_number=line_number, path=path)


def load_edge_list(path: str) -> CommGraph:
    """
    Load a whitespace-separated "source target timestamp" edge list.
    Blank lines and lines starting with '#' or '%' are skipped.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"edge list not found: {path}")

    frame = _read_edge_frame(path)
    frame = frame[~frame["source"].fillna("").str.startswith(COMMENT_PREFIXES)]
    if frame.empty:
        raise EmptyInputError(f"no messages in {path}")

    def fail(row: int, message: str):
        # frame rows are numbered in read order, one per kept data line
        kept = [n for n, fields in _data_lines(path) if not _is_long_comment(fields)]
        raise ParseError(message, line_number=kept[row] if row < len(kept) else None, path=path)

    missing = frame[EDGE_COLUMNS].isna().any(axis=1)
    if missing.any():
        row = int(missing.idxmax())
        fail(row, f"expected 'source target timestamp', got {int(frame.loc[row].notna().sum())} field(s)")
    integral = frame[EDGE_COLUMNS].apply(lambda column: column.str.fullmatch(r"[+-]?\d+")).all(axis=1)
    if not integral.all():
        row = int((~integral).idxmax())
        fail(row, f"non-integer field in {' '.join(frame.loc[row].tolist())!r}")
    edges = frame[EDGE_COLUMNS].astype(np.int64)
    negative = (edges["source"] < 0) | (edges["target"] < 0)
    if negative.any():
        row = int(negative.idxmax())
        fail(row, f"negative user id in {' '.join(frame.loc[row].tolist())!r}")

    graph = _build_graph(edges["source"].to_numpy(), edges["target"].to_numpy(),
                         edges["timestamp"].to_numpy(), source=path)
    logger.info(f"✅ Loaded {os.path.basename(path)}: U={graph.user_count}, M={graph.message_count}")
    return graph


def graph_from_events(events: Sequence[MessageEvent]) -> CommGraph:
    """Build a graph from in-memory events (ids are re-indexed densely)"""
    if not events:
        raise EmptyInputError("no messages")
    arr = np.asarray([(e.sender, e.recipient, e.timestamp) for e in events], dtype=np.int64)
    return _build_graph(arr[:, 0], arr[:, 1], arr[:, 2])


def save_edge_list(graph: CommGraph, path: str):
    """Write the graph back in the ingestion format, with original ids"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    frame = pd.DataFrame({
        "source": graph.original_ids[graph.senders],
        "target": graph.original_ids[graph.recipients],
        "timestamp": graph.timestamps,
    })
    frame.to_csv(path, sep=" ", header=False, index=False, lineterminator="\n")


def synthetic_graph(users: int, messages: int, rng: np.random.Generator, span: int = 10 ** 6) -> CommGraph:
    """Random temporal graph: uniform distinct (sender, recipient) pairs, uniform times"""
    require(validate_count(users, "users", minimum=2))
    require(validate_count(messages, "messages", minimum=1))
    senders = rng.integers(0, users, size=messages)
    offsets = rng.integers(1, users, size=messages)
    recipients = (senders + offsets) % users
    timestamps = rng.integers(0, span, size=messages)
    return _build_graph(senders.astype(np.int64), recipients.astype(np.int64), timestamps.astype(np.int64))


def assign_rates(graph: CommGraph, rate_set: Sequence[DetectionRate], rng: np.random.Generator) -> RateAssignment:
    """Give every user a rate drawn uniformly and independently from rate_set"""
    if not rate_set:
        raise ArgumentError("rate_set must not be empty")
    values = np.asarray([r.value for r in rate_set], dtype=float)
    choice = rng.integers(0, len(rate_set), size=graph.user_count)
    exponents = None
    if all(r.dyadic_exponent is not None for r in rate_set):
        exponents = np.asarray([r.dyadic_exponent for r in rate_set], dtype=np.int64)[choice]
    return RateAssignment(values[choice], exponents)


def degree_stats(graph: CommGraph) -> DegreeStats:
    """Exact in(u), out(u) and in_v(u) counts"""
    n = graph.user_count
    in_degree = np.bincount(graph.recipients, minlength=n).astype(np.int64)
    out_degree = np.bincount(graph.senders, minlength=n).astype(np.int64)
    pair_counts = sparse.coo_matrix(
        (np.ones(graph.message_count, dtype=np.int64), (graph.senders, graph.recipients)),
        shape=(n, n),
    ).tocsr()
    pair_counts.sum_duplicates()
    return DegreeStats(in_degree, out_degree, pair_counts)


def degree_frame(graph: CommGraph, stats: DegreeStats, rates: Optional[RateAssignment] = None) -> pd.DataFrame:
    """Rows of "user_id,in_degree,out_degree,rate" keyed by original user id"""
    frame = pd.DataFrame({
        "user_id": graph.original_ids,
        "in_degree": stats.in_degree,
        "out_degree": stats.out_degree,
    })
    frame["rate"] = rates.values if rates is not None else np.nan
    return frame
