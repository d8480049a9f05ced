"""PopTrack: a time-decayed global counter of destination-node popularity.

The counter vector is updated once per batch: every destination occurrence in
the batch adds 1, then the whole vector is multiplied by the decay factor.
Predictions for a batch use the vector as it stood after the previous batch,
so scores never see the edges they are asked to rank.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Optional, Sequence

import numpy as np

from .graphstore import EdgeBatch, Splits

if TYPE_CHECKING:
    from .evaluation import EvalReport
    from .negatives import NegativeSampleSet

__all__ = [
    "DEFAULT_BATCH_SIZE",
    "DEFAULT_LAMBDA_GRID",
    "PopularityState",
    "init_state",
    "consume_batch",
    "topk_indices",
    "predict_topk",
    "score",
    "save_snapshot",
    "load_snapshot",
    "replay",
    "PopTrackScorer",
    "run_and_score",
    "GridSearchResult",
    "grid_search_lambda",
]

DEFAULT_BATCH_SIZE = 200
DEFAULT_LAMBDA_GRID = (0.1, 0.2, 0.3, 0.38, 0.5, 0.6, 0.7, 0.8, 0.9, 0.92, 0.94, 0.96, 0.98, 0.99, 0.995, 0.999)


@dataclass
class PopularityState:
    counts: np.ndarray
    lam: float
    batch_size: int = DEFAULT_BATCH_SIZE
    batches_consumed: int = 0
    edges_consumed: int = 0

    @property
    def num_nodes(self) -> int:
        return len(self.counts)

    def copy(self) -> "PopularityState":
        return PopularityState(self.counts.copy(), self.lam, self.batch_size,
                               self.batches_consumed, self.edges_consumed)


def _check_lambda(lam: float) -> None:
    if not (0.0 < lam <= 1.0) or not np.isfinite(lam):
        raise ValueError(f"decay factor must lie in (0, 1], got {lam}")


def init_state(num_nodes: int, lam: float, batch_size: int = DEFAULT_BATCH_SIZE) -> PopularityState:
    _check_lambda(lam)
    if num_nodes < 1:
        raise ValueError("num_nodes must be >= 1")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return PopularityState(np.zeros(num_nodes, dtype=np.float64), float(lam), int(batch_size))


def consume_batch(state: PopularityState, batch: EdgeBatch | Sequence[int] | np.ndarray) -> PopularityState:
    """Add one per destination occurrence, then decay every entry (in place)."""
    dst = batch.dst if isinstance(batch, EdgeBatch) else np.asarray(batch, dtype=np.int64)
    if len(dst):
        if dst.min() < 0 or dst.max() >= state.num_nodes:
            raise IndexError("destination id out of range")
        ids, cnt = np.unique(dst, return_counts=True)
        state.counts[ids] += cnt
    if state.lam != 1.0:
        state.counts *= state.lam
    state.batches_consumed += 1
    state.edges_consumed += len(dst)
    return state


def topk_indices(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest values, descending, ties by ascending index.

    Runs in O(n + k log k) by partitioning around the k-th largest value.
    """
    n = len(values)
    k = min(int(k), n)
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    if k == n:
        return np.lexsort((np.arange(n), -values)).astype(np.int64)
    kth = np.partition(values, n - k)[n - k]
    above = np.flatnonzero(values > kth)
    tied = np.flatnonzero(values == kth)[: k - len(above)]
    sel = np.concatenate([above, tied])
    return sel[np.lexsort((sel, -values[sel]))].astype(np.int64)


def predict_topk(state: PopularityState, k: int) -> np.ndarray:
    """The same ranked prediction for every source node."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return topk_indices(state.counts, k)


def score(state: PopularityState, dst) -> float | np.ndarray:
    d = np.asarray(dst)
    if d.size and (d.min() < 0 or d.max() >= state.num_nodes):
        raise IndexError("destination id out of range")
    out = state.counts[d]
    return float(out) if out.ndim == 0 else out


# --- persistence ----------------------------------------------------------

def save_snapshot(state: PopularityState, path: str | os.PathLike) -> None:
    """Text vector with a one-line header; values use repr so reloads are exact."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# num_nodes={state.num_nodes} lambda={state.lam!r} batch_size={state.batch_size} "
                 f"batch_index={state.batches_consumed} edges_consumed={state.edges_consumed}\n")
        fh.writelines(f"{v!r}\n" for v in state.counts.tolist())


def load_snapshot(path: str | os.PathLike) -> PopularityState:
    with open(path, "r", encoding="utf-8") as fh:
        head = fh.readline()
        if not head.startswith("#"):
            raise ValueError(f"{path}: missing snapshot header")
        meta = dict(kv.split("=", 1) for kv in head[1:].split())
        counts = np.array([float(x) for x in fh.read().split()], dtype=np.float64)
    if len(counts) != int(meta["num_nodes"]):
        raise ValueError(f"{path}: header says {meta['num_nodes']} nodes, found {len(counts)} values")
    return PopularityState(counts, float(meta["lambda"]), int(meta["batch_size"]),
                           int(meta["batch_index"]), int(meta.get("edges_consumed", 0)))


# --- streaming --------------------------------------------------------------

def replay(splits: Splits, upto: str, lam: float, batch_size: int = DEFAULT_BATCH_SIZE):
    """Walk the stream, yielding ``(split_name, batch, state)`` before each batch is consumed.

    The yielded state is live: callers must copy it if they keep it past the
    next iteration.
    """
    state = init_state(splits.full.num_nodes, lam, batch_size)
    for name, batch in splits.stream(upto, batch_size):
        yield name, batch, state
        consume_batch(state, batch)


class PopTrackScorer:
    """Streaming scorer: every candidate is scored by its decayed popularity."""

    name = "poptrack"

    def __init__(self, num_nodes: int, lam: float, batch_size: int = DEFAULT_BATCH_SIZE):
        self.state = init_state(num_nodes, lam, batch_size)

    @property
    def num_observed(self) -> int:
        return self.state.edges_consumed

    def score(self, src: np.ndarray, dst: np.ndarray, t: np.ndarray) -> np.ndarray:
        return self.state.counts[dst]

    def score_all(self, src: np.ndarray, t: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.state.counts, (len(src), self.state.num_nodes))

    def observe(self, batch: EdgeBatch) -> None:
        consume_batch(self.state, batch)


def run_and_score(splits: Splits, lam: float, batch_size: int = DEFAULT_BATCH_SIZE,
                  neg: Optional["NegativeSampleSet"] = None, split: str = "test",
                  keep_per_edge: bool = False) -> "EvalReport":
    """Stream train, val and (for ``split="test"``) test through PopTrack and report MRR.

    With ``neg=None`` the positive is ranked against every other node.
    """
    from .evaluation import evaluate, evaluate_all

    scorer = PopTrackScorer(splits.full.num_nodes, lam, batch_size)
    if neg is None:
        return evaluate_all(scorer, splits, split, batch_size=batch_size, keep_per_edge=keep_per_edge)
    return evaluate(scorer, splits, split, neg, batch_size=batch_size, keep_per_edge=keep_per_edge)


@dataclass
class GridSearchResult:
    best_lambda: float
    table: dict[float, float] = field(default_factory=dict)


def grid_search_lambda(splits: Splits, grid: Iterable[float], batch_size: int = DEFAULT_BATCH_SIZE,
                       neg: Optional["NegativeSampleSet"] = None) -> GridSearchResult:
    """Pick the decay factor with the best validation MRR; ties go to the smaller value."""
    grid = sorted(set(float(g) for g in grid))
    if not grid:
        raise ValueError("lambda grid is empty")
    for g in grid:
        _check_lambda(g)
    table = {g: run_and_score(splits, g, batch_size, neg, split="val").value for g in grid}
    best = max(grid, key=lambda g: (table[g], -g))
    return GridSearchResult(best, table)
