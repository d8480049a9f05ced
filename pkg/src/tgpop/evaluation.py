"""Rank-based evaluation of streaming link predictors.

Any object with ``score(src, dst, t)``, ``observe(batch)`` and
``num_observed`` can be evaluated.  The harness walks the stream batch by
batch; for batches of the evaluated split it scores each positive edge and
its negatives with the scorer's current state, then lets the scorer observe
the batch.  Ties between the positive and a negative count as half a rank
position by default.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from .graphstore import EdgeBatch, Splits, TemporalDataset, split_fingerprint
from .negatives import NegativeSampleSet, SplitMismatch

__all__ = [
    "TIE_MODES",
    "Scorer",
    "ScorerDesync",
    "EvalReport",
    "reciprocal_rank",
    "rank_segments",
    "evaluate",
    "evaluate_all",
    "EdgeBankScorer",
    "edgebank_scorer",
    "ScoreDump",
    "load_score_dump",
    "save_score_dump",
    "evaluate_dump",
    "SaturationConfig",
    "saturation_report",
]

TIE_MODES = ("mid", "optimistic", "pessimistic")


class Scorer(Protocol):
    num_observed: int

    def score(self, src: np.ndarray, dst: np.ndarray, t: np.ndarray) -> np.ndarray: ...

    def observe(self, batch: EdgeBatch) -> None: ...


class ScorerDesync(RuntimeError):
    pass


@dataclass
class EvalReport:
    metric_name: str
    value: float
    split: str = ""
    scorer: str = ""
    per_edge_rr: Optional[np.ndarray] = None
    counters: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"metric": self.metric_name, "value": self.value, "split": self.split,
                "scorer": self.scorer, "counters": self.counters}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def table(self) -> str:
        rows = [("metric", self.metric_name), ("split", self.split), ("scorer", self.scorer),
                ("value", f"{self.value:.6f}")] + [(k, str(v)) for k, v in sorted(self.counters.items())]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def _rank(greater: np.ndarray, equal: np.ndarray, ties: str) -> np.ndarray:
    if ties == "mid":
        return 1.0 + greater + equal / 2.0
    if ties == "optimistic":
        return 1.0 + greater
    if ties == "pessimistic":
        return 1.0 + greater + equal
    raise ValueError(f"ties must be one of {TIE_MODES}")


def reciprocal_rank(pos_score: float, neg_scores: Sequence[float], ties: str = "mid") -> float:
    """``1 / rank`` of the positive, rank = 1 + #higher + #equal / 2 under mid-rank ties."""
    neg = np.asarray(neg_scores, dtype=np.float64)
    if neg.size == 0:
        raise ValueError("at least one negative score is required")
    if not (np.isfinite(pos_score) and np.isfinite(neg).all()):
        raise ValueError("scores must be finite")
    greater = np.count_nonzero(neg > pos_score)
    equal = np.count_nonzero(neg == pos_score)
    return float(1.0 / _rank(np.float64(greater), np.float64(equal), ties))


def rank_segments(pos: np.ndarray, neg: np.ndarray, lengths: np.ndarray, ties: str = "mid"
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised reciprocal ranks for many positives with ragged negative lists.

    ``neg`` is the concatenation of each positive's negative scores, ``lengths``
    the size of each list.  Returns ``(rr, n_tied)`` per positive.
    """
    if np.any(lengths == 0):
        raise ValueError("every positive needs at least one negative")
    if not (np.isfinite(pos).all() and np.isfinite(neg).all()):
        raise ValueError("scores must be finite")
    seg = np.repeat(np.arange(len(pos)), lengths)
    rep = pos[seg]
    greater = np.bincount(seg, weights=neg > rep, minlength=len(pos))
    equal = np.bincount(seg, weights=neg == rep, minlength=len(pos))
    return 1.0 / _rank(greater, equal, ties), equal


def _check_sync(scorer, batch: EdgeBatch) -> None:
    seen = getattr(scorer, "num_observed", None)
    if seen is not None and seen != batch.offset:
        raise ScorerDesync(f"scorer has observed {seen} edges, batch starts at {batch.offset}")


def _report(name: str, split: str, scorer_name: str, rr: list[np.ndarray], ties: list[np.ndarray],
            n_cand: int, keep: bool) -> EvalReport:
    rr_all = np.concatenate(rr) if rr else np.empty(0)
    tie_all = np.concatenate(ties) if ties else np.empty(0)
    value = math.fsum(rr_all.tolist()) / len(rr_all) if len(rr_all) else float("nan")
    counters = {"num_edges": int(len(rr_all)), "num_candidates_total": int(n_cand),
                "tie_events": int(np.count_nonzero(tie_all))}
    return EvalReport(name, value, split, scorer_name, rr_all if keep else None, counters)


def _name_of(scorer) -> str:
    return getattr(scorer, "name", type(scorer).__name__)


def evaluate(scorer, splits: Splits, split: str, neg: NegativeSampleSet, batch_size: int = 200,
             ties: str = "mid", keep_per_edge: bool = False) -> EvalReport:
    """MRR of ``scorer`` on ``split`` against a fixed negative set."""
    split_ds = splits[split]
    neg.check_split(split_ds, split)
    rr, tie, n_cand = [], [], 0
    for name, batch in splits.stream(split, batch_size):
        _check_sync(scorer, batch)
        if name == split:
            a = batch.offset - split_ds.offset
            b = a + len(batch)
            lo, hi = int(neg.indptr[a]), int(neg.indptr[b])
            lengths = np.diff(neg.indptr[a:b + 1])
            cand = neg.ids[lo:hi]
            seg = np.repeat(np.arange(len(batch)), lengths)
            pos = np.asarray(scorer.score(batch.src, batch.dst, batch.t), dtype=np.float64)
            ns = np.asarray(scorer.score(batch.src[seg], cand, batch.t[seg]), dtype=np.float64)
            r, e = rank_segments(pos, ns, lengths, ties)
            rr.append(r)
            tie.append(e)
            n_cand += len(batch) + len(cand)
        scorer.observe(batch)
    return _report(neg.metric_name, split, _name_of(scorer), rr, tie, n_cand, keep_per_edge)


def _score_all(scorer, src: np.ndarray, t: np.ndarray, num_nodes: int) -> np.ndarray:
    if hasattr(scorer, "score_all"):
        return np.asarray(scorer.score_all(src, t), dtype=np.float64)
    m = len(src)
    ids = np.tile(np.arange(num_nodes), m)
    return np.asarray(scorer.score(np.repeat(src, num_nodes), ids, np.repeat(t, num_nodes)),
                      dtype=np.float64).reshape(m, num_nodes)


def evaluate_all(scorer, splits: Splits, split: str, batch_size: int = 200, ties: str = "mid",
                 keep_per_edge: bool = False, max_cells: int = 1 << 22) -> EvalReport:
    """MRR against every other node; rows are scored in chunks of at most ``max_cells`` scores."""
    n = splits.full.num_nodes
    if n < 2:
        raise ValueError("MRR_all needs at least two nodes")
    rows_per_chunk = max(1, max_cells // n)
    rr, tie, n_cand = [], [], 0
    for name, batch in splits.stream(split, batch_size):
        _check_sync(scorer, batch)
        if name == split:
            for a in range(0, len(batch), rows_per_chunk):
                b = min(a + rows_per_chunk, len(batch))
                scores = _score_all(scorer, batch.src[a:b], batch.t[a:b], n)
                if not np.isfinite(scores).all():
                    raise ValueError("scores must be finite")
                pos = scores[np.arange(b - a), batch.dst[a:b]]
                greater = np.count_nonzero(scores > pos[:, None], axis=1).astype(np.float64)
                # the positive itself is counted as equal once
                equal = np.count_nonzero(scores == pos[:, None], axis=1).astype(np.float64) - 1.0
                rr.append(1.0 / _rank(greater, equal, ties))
                tie.append(equal)
            n_cand += len(batch) * n
        scorer.observe(batch)
    return _report("MRR_all", split, _name_of(scorer), rr, tie, n_cand, keep_per_edge)


# --- EdgeBank -----------------------------------------------------------------

class EdgeBankScorer:
    """Memorisation baseline: 1 for (src, dst) pairs seen in earlier batches, else 0.

    In ``window`` mode a pair counts only if it was last seen no earlier than
    ``t - window_duration``.
    """

    def __init__(self, mode: str = "infinite", window_duration: Optional[int] = None, num_nodes: int = 0):
        if mode not in ("infinite", "window"):
            raise ValueError("mode must be 'infinite' or 'window'")
        if mode == "window" and (window_duration is None or window_duration <= 0):
            raise ValueError("window mode needs window_duration > 0")
        self.mode = mode
        self.window = window_duration
        self.name = "edgebank-inf" if mode == "infinite" else "edgebank-tw"
        self.last_seen: dict[int, dict[int, int]] = {}
        self.num_observed = 0
        self.num_nodes = num_nodes

    def score(self, src, dst, t) -> np.ndarray:
        out = np.zeros(len(src))
        w = self.window
        for i, (s, d, tt) in enumerate(zip(np.asarray(src).tolist(), np.asarray(dst).tolist(),
                                           np.asarray(t).tolist())):
            lt = self.last_seen.get(s, {}).get(d)
            if lt is not None and (w is None or lt >= tt - w):
                out[i] = 1.0
        return out

    def score_all(self, src, t) -> np.ndarray:
        out = np.zeros((len(src), self.num_nodes))
        for i, (s, tt) in enumerate(zip(np.asarray(src).tolist(), np.asarray(t).tolist())):
            for d, lt in self.last_seen.get(s, {}).items():
                if self.window is None or lt >= tt - self.window:
                    out[i, d] = 1.0
        return out

    def observe(self, batch: EdgeBatch) -> None:
        for s, d, tt in zip(batch.src.tolist(), batch.dst.tolist(), batch.t.tolist()):
            self.last_seen.setdefault(s, {})[d] = tt
        self.num_observed += len(batch)


def edgebank_scorer(mode: str = "infinite", window_duration: Optional[int] = None,
                    num_nodes: int = 0) -> EdgeBankScorer:
    return EdgeBankScorer(mode, window_duration, num_nodes)


# --- external score dumps ---------------------------------------------------------

@dataclass(eq=False)
class ScoreDump:
    """Scores an external model assigned to each positive edge and its candidates.

    ``neg_ids`` is present only for dumps written in candidate-map form; for
    positive/negative-score dumps the ids come from the matching negative set.
    """

    header: dict
    pos_scores: np.ndarray
    neg_indptr: np.ndarray
    neg_scores: np.ndarray
    neg_ids: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.pos_scores)

    def check_split(self, split_ds: TemporalDataset) -> None:
        want = split_fingerprint(split_ds, self.header.get("split", ""))
        for key in ("num_edges", "checksum"):
            if self.header.get(key) != want[key]:
                raise SplitMismatch(f"score dump {key}={self.header.get(key)!r}, split has {want[key]!r}")
        if len(self) != want["num_edges"]:
            raise SplitMismatch(f"score dump has {len(self)} records, split has {want['num_edges']}")


def load_score_dump(path: str | os.PathLike, split_ds: Optional[TemporalDataset] = None) -> ScoreDump:
    """Read a JSON-lines dump.

    Line 1 is a header with at least ``split``, ``num_edges`` and ``checksum``
    (the split fingerprint).  Each further line is either
    ``{"edge_index", "pos_score", "neg_scores": [...]}`` or
    ``{"edge_index", "candidates": {"<id>": score, ...}}``; the candidate form
    needs ``split_ds`` to know which candidate is the positive.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty score dump")
    header = json.loads(lines[0])
    if split_ds is not None:
        want = split_fingerprint(split_ds, header.get("split", ""))
        for key in ("num_edges", "checksum"):
            if header.get(key) != want[key]:
                raise SplitMismatch(f"score dump {key}={header.get(key)!r}, split has {want[key]!r}")
    pos, negs, ids = [], [], []
    has_ids = None
    for k, line in enumerate(lines[1:]):
        rec = json.loads(line)
        if rec.get("edge_index") != k:
            raise ValueError(f"{path}: record {k} has edge_index {rec.get('edge_index')}")
        if "candidates" in rec:
            if split_ds is None:
                raise ValueError("candidate-map dumps need the split to identify positives")
            if has_ids is False:
                raise ValueError(f"{path}: mixed record forms")
            has_ids = True
            d = int(split_ds.dst[k])
            cmap = {int(c): float(s) for c, s in rec["candidates"].items()}
            if d not in cmap:
                raise ValueError(f"{path}: record {k} lacks a score for positive {d}")
            pos.append(cmap.pop(d))
            keys = sorted(cmap)
            ids.append(np.array(keys, dtype=np.int64))
            negs.append(np.array([cmap[c] for c in keys], dtype=np.float64))
        else:
            if has_ids is True:
                raise ValueError(f"{path}: mixed record forms")
            has_ids = False
            pos.append(float(rec["pos_score"]))
            negs.append(np.asarray(rec["neg_scores"], dtype=np.float64))
    indptr = np.zeros(len(negs) + 1, dtype=np.int64)
    np.cumsum([len(x) for x in negs], out=indptr[1:])
    flat = np.concatenate(negs) if negs else np.empty(0)
    dump = ScoreDump(header, np.array(pos, dtype=np.float64), indptr, flat,
                     np.concatenate(ids) if has_ids else None)
    if split_ds is not None:
        dump.check_split(split_ds)
    return dump


def save_score_dump(path: str | os.PathLike, split_ds: TemporalDataset, split: str,
                    pos_scores: Sequence[float], neg_scores: Sequence[Sequence[float]],
                    extra_header: Optional[dict] = None) -> None:
    """Write a positive/negative-score dump aligned with ``split_ds``."""
    if len(pos_scores) != len(split_ds) or len(neg_scores) != len(split_ds):
        raise ValueError("scores must be aligned with the split")
    header = dict(split_fingerprint(split_ds, split), **(extra_header or {}))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i, (p, ns) in enumerate(zip(pos_scores, neg_scores)):
            fh.write(json.dumps({"edge_index": i, "pos_score": float(p),
                                 "neg_scores": [float(x) for x in ns]}) + "\n")


def evaluate_dump(dump: ScoreDump, split_ds: TemporalDataset, neg: Optional[NegativeSampleSet] = None,
                  ties: str = "mid", keep_per_edge: bool = False) -> EvalReport:
    dump.check_split(split_ds)
    lengths = np.diff(dump.neg_indptr)
    if neg is not None:
        neg.check_split(split_ds)
        if not np.array_equal(neg.lengths, lengths):
            raise SplitMismatch("score dump negative counts differ from the negative set")
    rr, equal = rank_segments(dump.pos_scores, dump.neg_scores, lengths, ties)
    name = neg.metric_name if neg is not None else dump.header.get("metric", "MRR")
    return _report(name, dump.header.get("split", ""), dump.header.get("model", "scores-file"),
                   [rr], [equal], len(dump) + len(dump.neg_scores), keep_per_edge)


# --- score saturation -------------------------------------------------------------

@dataclass(frozen=True)
class SaturationConfig:
    k_list: tuple[int, ...] = (50, 100, 1000)
    n_list: tuple[int, ...] = (5000, 20000, 100000)
    threshold: float = 1.0
    epsilon: float = 0.0

    def pairs(self) -> list[tuple[int, int]]:
        return [(k, n) for n in self.n_list for k in self.k_list if k <= n]


class _WindowTopK:
    """Destination counts over a sliding window of stream positions, with top-K membership.

    ``ge[c]`` holds how many nodes have count >= c, so the number of nodes
    strictly ahead of a node with count c is ``ge[c + 1]``; each slide step
    changes exactly one entry.
    """

    def __init__(self, dst: np.ndarray, num_nodes: int, width: int, start: int):
        self.dst = dst
        self.width = width
        self.pos = start
        lo = max(0, start - width)
        self.counts = np.bincount(dst[lo:start], minlength=num_nodes).astype(np.int64)
        hist = np.bincount(self.counts, minlength=width + 2)
        ge = np.cumsum(hist[::-1])[::-1]
        self.ge = np.zeros(width + 2, dtype=np.int64)
        self.ge[: len(ge)] = ge[: width + 2]
        self.ge[0] = 0

    def advance(self) -> None:
        p = self.pos
        x = int(self.dst[p])
        c = self.counts[x]
        self.counts[x] = c + 1
        self.ge[c + 1] += 1
        old = p - self.width
        if old >= 0:
            y = int(self.dst[old])
            c = self.counts[y]
            self.counts[y] = c - 1
            self.ge[c] -= 1
        self.pos = p + 1

    def members(self, cands: np.ndarray, k: int) -> np.ndarray:
        """Whether each candidate ranks in the top ``k`` (count desc, id asc), count > 0."""
        c = self.counts[cands]
        greater = self.ge[c + 1]
        equal = self.ge[c] - greater
        out = (c > 0) & (greater + equal <= k)
        unsure = np.flatnonzero((c > 0) & (greater < k) & (greater + equal > k))
        for j in unsure:
            d, cj = int(cands[j]), c[j]
            before = np.count_nonzero(self.counts[:d] == cj)
            out[j] = greater[j] + before < k
        return out


def _dump_candidate_ids(dump: ScoreDump, split_ds: TemporalDataset,
                        neg: Optional[NegativeSampleSet]) -> np.ndarray:
    if dump.neg_ids is not None:
        return dump.neg_ids
    if neg is None:
        raise ValueError("positive/negative-score dumps need the matching negative set for candidate ids")
    neg.check_split(split_ds)
    if not np.array_equal(neg.indptr, dump.neg_indptr):
        raise SplitMismatch("score dump negative counts differ from the negative set")
    return neg.ids


def saturation_report(dump: ScoreDump, splits: Splits, cfg: SaturationConfig = SaturationConfig(),
                      neg: Optional[NegativeSampleSet] = None) -> dict[tuple[int, int], Optional[float]]:
    """Percentage of saturated scores among candidates that are recently popular.

    For every scored edge at stream position ``p`` and each ``(K, N)``, a
    candidate is in the popular class when it is among the ``K`` destinations
    with the most interactions in positions ``[p - N, p)``.  The value is the
    percentage of such candidates whose score equals ``threshold`` (or is at
    least ``threshold - epsilon``); ``None`` when the class is empty.
    """
    split = dump.header.get("split")
    split_ds = splits[split]
    dump.check_split(split_ds)
    neg_ids = _dump_candidate_ids(dump, split_ds, neg)
    if cfg.epsilon > 0:
        sat_pos = dump.pos_scores >= cfg.threshold - cfg.epsilon
        sat_neg = dump.neg_scores >= cfg.threshold - cfg.epsilon
    else:
        sat_pos = dump.pos_scores == cfg.threshold
        sat_neg = dump.neg_scores == cfg.threshold
    full = splits.full
    out: dict[tuple[int, int], Optional[float]] = {}
    for n_win in cfg.n_list:
        ks = [k for k in cfg.k_list if k <= n_win]
        hits = {k: 0 for k in ks}
        total = {k: 0 for k in ks}
        win = _WindowTopK(full.dst, full.num_nodes, n_win, split_ds.offset)
        for i in range(len(split_ds)):
            lo, hi = dump.neg_indptr[i], dump.neg_indptr[i + 1]
            cands = np.concatenate([[split_ds.dst[i]], neg_ids[lo:hi]])
            sat = np.concatenate([[sat_pos[i]], sat_neg[lo:hi]])
            for k in ks:
                m = win.members(cands, k)
                total[k] += int(m.sum())
                hits[k] += int((m & sat).sum())
            win.advance()
        for k in ks:
            out[(k, n_win)] = 100.0 * hits[k] / total[k] if total[k] else None
    return out
