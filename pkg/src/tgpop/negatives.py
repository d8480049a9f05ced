"""Negative destination candidates for training and evaluation.

Training uses the recently-popular sampler: most negatives are drawn from the
PopTrack popularity raised to a power, the rest uniformly.

Evaluation uses fixed, persisted per-edge lists so that every model is
compared on identical candidates:

``naive``
    half historical (past destinations of the same source in the train split),
    half uniformly random;
``topn``
    every one of the top-``n`` PopTrack nodes at prediction time;
``blend``
    a uniform sample from a large top pool plus historical and random picks.

Randomness is drawn from per-chunk generators keyed by ``(seed, chunk_index)``
with a fixed chunk length, which keeps threaded and serial runs identical.
"""

from __future__ import annotations

import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .graphstore import Splits, TemporalDataset, split_fingerprint
from .poptrack import DEFAULT_BATCH_SIZE, PopularityState, init_state, consume_batch, topk_indices

__all__ = [
    "FORMAT_VERSION",
    "CHUNK_SIZE",
    "SplitMismatch",
    "RpnsConfig",
    "RpnsSampler",
    "rpns_sampler",
    "rpns_distribution",
    "NegativeSampleSet",
    "HistoryIndex",
    "gen_eval_negatives_naive",
    "gen_eval_negatives_topn",
    "gen_eval_negatives_blend",
    "save_negatives",
    "load_negatives",
]

FORMAT_VERSION = 1
CHUNK_SIZE = 1024
_BINARY_MAGIC = b"TGPNEG1\n"


class SplitMismatch(ValueError):
    """A persisted artifact was produced for a different split."""


# --- training-time sampler --------------------------------------------------

@dataclass(frozen=True)
class RpnsConfig:
    popularity_exponent: float = 0.75
    popular_fraction: float = 0.9
    negatives_per_positive: int = 1
    seed: int = 0
    max_retries: int = 8

    def __post_init__(self):
        if not self.popularity_exponent > 0:
            raise ValueError("popularity_exponent must be > 0")
        if not 0.0 <= self.popular_fraction <= 1.0:
            raise ValueError("popular_fraction must lie in [0, 1]")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")


def _counts_of(state) -> np.ndarray:
    return state.counts if isinstance(state, PopularityState) else np.asarray(state, dtype=np.float64)


def rpns_distribution(state, cfg: RpnsConfig = RpnsConfig(), positive_dst: Optional[int] = None) -> np.ndarray:
    """Exact per-node probability of one sampler draw.

    Without ``positive_dst`` this is the raw mixture of the popular and uniform
    branches.  With it, the rejection-and-retry rule is folded in: a node other
    than the positive is returned on the first accepted mixture draw, and after
    ``max_retries`` rejections the draw is uniform over the other nodes.
    """
    counts = _counts_of(state)
    n = len(counts)
    w = np.where(counts > 0, counts, 0.0) ** cfg.popularity_exponent
    frac = cfg.popular_fraction if w.sum() > 0 else 0.0
    mix = np.full(n, (1.0 - frac) / n)
    if frac > 0:
        mix += frac * w / w.sum()
    if positive_dst is None:
        return mix
    r = mix[positive_dst]
    out = mix * sum(r ** i for i in range(cfg.max_retries + 1)) + r ** (cfg.max_retries + 1) / (n - 1)
    out[positive_dst] = 0.0
    return out


class RpnsSampler:
    """Recently-popular negative sampler over a PopTrack state.

    Each draw takes the popular branch with probability ``popular_fraction``
    (categorical over ``counts ** exponent``), otherwise a uniform node.  A draw
    equal to the positive is redrawn up to ``max_retries`` times, then replaced
    by a uniform pick among the remaining nodes.  Output depends only on the
    seed and the sequence of calls.
    """

    def __init__(self, num_nodes: int, cfg: RpnsConfig = RpnsConfig(),
                 rng: Optional[np.random.Generator] = None):
        if num_nodes < 2:
            raise ValueError("num_nodes must be >= 2")
        self.num_nodes = num_nodes
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)

    def _draw(self, n: int, support: Optional[np.ndarray], cdf: Optional[np.ndarray]) -> np.ndarray:
        out = self.rng.integers(0, self.num_nodes, size=n)
        if support is None or self.cfg.popular_fraction == 0.0:
            return out
        popular = self.rng.random(n) < self.cfg.popular_fraction
        k = int(popular.sum())
        u = self.rng.random(k) * cdf[-1]
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)
        out[popular] = support[idx]
        return out

    def sample(self, state, positive_dst) -> np.ndarray:
        """Negatives for each positive; shape ``(len(positive_dst), negatives_per_positive)``.

        A scalar ``positive_dst`` returns a flat array of length
        ``negatives_per_positive``.
        """
        counts = _counts_of(state)
        if len(counts) != self.num_nodes:
            raise ValueError("state size does not match num_nodes")
        scalar = np.ndim(positive_dst) == 0
        pos = np.atleast_1d(np.asarray(positive_dst, dtype=np.int64))
        k = self.cfg.negatives_per_positive
        pos_rep = np.repeat(pos, k)

        support = np.flatnonzero(counts > 0)
        cdf = None
        if len(support):
            cdf = np.cumsum(counts[support] ** self.cfg.popularity_exponent)
        else:
            support = None

        out = self._draw(len(pos_rep), support, cdf)
        bad = np.flatnonzero(out == pos_rep)
        for _ in range(self.cfg.max_retries):
            if not len(bad):
                break
            out[bad] = self._draw(len(bad), support, cdf)
            bad = bad[out[bad] == pos_rep[bad]]
        if len(bad):
            v = self.rng.integers(0, self.num_nodes - 1, size=len(bad))
            out[bad] = v + (v >= pos_rep[bad])
        out = out.reshape(len(pos), k)
        return out[0] if scalar else out


def rpns_sampler(state, num_nodes: int, cfg: RpnsConfig = RpnsConfig(), positive_dst: int = 0,
                 rng: Optional[np.random.Generator] = None) -> list[int]:
    """One-shot convenience wrapper around :class:`RpnsSampler`."""
    return RpnsSampler(num_nodes, cfg, rng).sample(state, int(positive_dst)).tolist()


# --- persisted negative sets ------------------------------------------------

@dataclass(eq=False)
class NegativeSampleSet:
    """Per-edge negative lists stored in CSR form (``indptr`` into ``ids``)."""

    scheme: str
    params: dict
    seed: Optional[int]
    identity: dict
    indptr: np.ndarray
    ids: np.ndarray

    def __len__(self) -> int:
        return len(self.indptr) - 1

    def __getitem__(self, i: int) -> np.ndarray:
        return self.ids[self.indptr[i]:self.indptr[i + 1]]

    @property
    def per_edge(self) -> list[list[int]]:
        ids = self.ids.tolist()
        ptr = self.indptr.tolist()
        return [ids[ptr[i]:ptr[i + 1]] for i in range(len(self))]

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def metric_name(self) -> str:
        if self.scheme == "topn":
            return f"MRR_top{self.params['n']}"
        return f"MRR_{self.scheme}"

    def header(self) -> dict:
        return {"format_version": FORMAT_VERSION, "scheme": self.scheme, "params": self.params,
                "seed": self.seed, **self.identity}

    def check_split(self, split_ds: TemporalDataset, split: Optional[str] = None) -> None:
        """Raise :class:`SplitMismatch` unless this set was generated for ``split_ds``."""
        want = split_fingerprint(split_ds, split or self.identity.get("split", ""))
        if len(self) != want["num_edges"]:
            raise SplitMismatch(f"negative set has {len(self)} edges, split has {want['num_edges']}")
        for key in ("dataset_name", "split", "num_edges", "first_t", "last_t", "checksum"):
            if self.identity.get(key) != want[key]:
                raise SplitMismatch(f"negative set {key}={self.identity.get(key)!r}, split has {want[key]!r}")


def _pack(rows: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.fromiter((len(r) for r in rows), dtype=np.int64, count=len(rows))
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum(lengths, out=indptr[1:])
    ids = np.concatenate(rows).astype(np.int64) if rows else np.empty(0, dtype=np.int64)
    return indptr, ids


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_negatives(neg: NegativeSampleSet, path: str | os.PathLike, binary: Optional[bool] = None) -> None:
    """Write a negative set; output bytes depend only on the set's content.

    Text mode (default) is JSON lines: a header record, then one
    ``{"edge_index", "negatives"}`` record per positive edge.  Binary mode
    (default for ``.bin`` paths) stores the same header followed by the raw CSR
    arrays.
    """
    if binary is None:
        binary = os.fspath(path).endswith(".bin")
    tmp = f"{os.fspath(path)}.tmp"
    if binary:
        dtype = "<i4" if neg.ids.size == 0 or int(neg.ids.max()) < 2 ** 31 else "<i8"
        head = dict(neg.header(), id_dtype=dtype)
        with open(tmp, "wb") as fh:
            fh.write(_BINARY_MAGIC)
            fh.write((_dumps(head) + "\n").encode())
            fh.write(neg.indptr.astype("<i8").tobytes())
            fh.write(neg.ids.astype(dtype).tobytes())
    else:
        buf = io.StringIO()
        buf.write(_dumps(neg.header()) + "\n")
        ids = neg.ids.tolist()
        ptr = neg.indptr.tolist()
        for i in range(len(neg)):
            row = ",".join(map(str, ids[ptr[i]:ptr[i + 1]]))
            buf.write(f'{{"edge_index":{i},"negatives":[{row}]}}\n')
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(buf.getvalue())
    os.replace(tmp, path)


_IDENTITY_KEYS = ("dataset_name", "split", "num_edges", "first_t", "last_t", "checksum")


def _from_header(head: dict, indptr: np.ndarray, ids: np.ndarray) -> NegativeSampleSet:
    if head.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported negative-set format version {head.get('format_version')!r}")
    identity = {k: head.get(k) for k in _IDENTITY_KEYS}
    return NegativeSampleSet(head["scheme"], head["params"], head.get("seed"), identity, indptr, ids)


def load_negatives(path: str | os.PathLike, split_ds: Optional[TemporalDataset] = None,
                   split: Optional[str] = None) -> NegativeSampleSet:
    """Read a negative set; with ``split_ds`` its header must match that split."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_BINARY_MAGIC))
        if magic == _BINARY_MAGIC:
            head = json.loads(fh.readline())
            n = int(head["num_edges"])
            indptr = np.frombuffer(fh.read(8 * (n + 1)), dtype="<i8").astype(np.int64)
            ids = np.frombuffer(fh.read(), dtype=head.pop("id_dtype")).astype(np.int64)
            neg = _from_header(head, indptr, ids)
        else:
            fh.seek(0)
            lines = fh.read().decode("utf-8").splitlines()
            if not lines:
                raise ValueError(f"{path}: empty negative-set file")
            head = json.loads(lines[0])
            rows = []
            for k, line in enumerate(lines[1:]):
                rec = json.loads(line)
                if rec["edge_index"] != k:
                    raise ValueError(f"{path}: record {k} has edge_index {rec['edge_index']}")
                rows.append(np.asarray(rec["negatives"], dtype=np.int64))
            neg = _from_header(head, *_pack(rows))
    if len(neg) != neg.identity["num_edges"]:
        raise ValueError(f"{path}: header promises {neg.identity['num_edges']} records, found {len(neg)}")
    if split_ds is not None:
        neg.check_split(split_ds, split)
    return neg


# --- shared machinery for evaluation sets ---------------------------------------

class HistoryIndex:
    """Distinct past destinations of every source, in CSR form."""

    def __init__(self, ds: TemporalDataset):
        n = ds.num_nodes
        keys = np.unique(ds.src.astype(np.int64) * n + ds.dst)
        self.dst = keys % n
        src = keys // n
        self.indptr = np.searchsorted(src, np.arange(n + 1))

    def of(self, s: int) -> np.ndarray:
        return self.dst[self.indptr[s]:self.indptr[s + 1]]


def _same_time_positives(splits: Splits, split_ds: TemporalDataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """For every edge of ``split_ds``, the destinations of all positives sharing its (src, t).

    Returns ``(start, stop, dst_sorted)``: edge ``i``'s set is
    ``dst_sorted[start[i]:stop[i]]`` and always contains its own destination.
    """
    full = splits.full
    lo = int(np.searchsorted(full.t, split_ds.t[0], side="left"))
    hi = int(np.searchsorted(full.t, split_ds.t[-1], side="right"))
    src, dst, t = full.src[lo:hi], full.dst[lo:hi], full.t[lo:hi]
    order = np.lexsort((dst, t, src))
    s_o, t_o, d_o = src[order], t[order], dst[order]
    new = np.ones(len(order), dtype=bool)
    new[1:] = (s_o[1:] != s_o[:-1]) | (t_o[1:] != t_o[:-1])
    gid = np.cumsum(new) - 1
    starts = np.flatnonzero(new)
    stops = np.append(starts[1:], len(order))
    group_of = np.empty(len(order), dtype=np.int64)
    group_of[order] = gid
    rel = np.arange(split_ds.offset - lo, split_ds.offset - lo + len(split_ds))
    g = group_of[rel]
    return starts[g], stops[g], d_o


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2 ** 64 - 1), chunk]))


def _run_chunks(fn, n_edges: int, threads: int) -> list[np.ndarray]:
    chunks = range((n_edges + CHUNK_SIZE - 1) // CHUNK_SIZE)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(fn, chunks))
    else:
        parts = [fn(c) for c in chunks]
    return [row for part in parts for row in part]


def _random_fill(rng: np.random.Generator, num_nodes: int, need: int, taken: set, pre: Optional[list] = None) -> list[int]:
    """``need`` distinct uniform nodes outside ``taken`` (which is updated)."""
    out: list[int] = []
    if need <= 0:
        return out
    candidates = pre if pre is not None else []
    for _ in range(16):
        for c in candidates:
            if c not in taken:
                taken.add(c)
                out.append(c)
                if len(out) == need:
                    return out
        candidates = rng.integers(0, num_nodes, size=2 * (need - len(out)) + 8).tolist()
    allowed = np.setdiff1d(np.arange(num_nodes), np.fromiter(taken, dtype=np.int64))
    extra = rng.choice(allowed, size=min(need - len(out), len(allowed)), replace=False).tolist()
    taken.update(extra)
    return out + extra


def _pick(rng: np.random.Generator, pool: np.ndarray, k: int, taken: set) -> list[int]:
    """Up to ``k`` distinct members of ``pool`` outside ``taken``, uniformly without replacement."""
    if k <= 0 or not len(pool):
        return []
    if taken:
        pool = pool[~np.isin(pool, np.fromiter(taken, dtype=np.int64))]
    if len(pool) > k:
        pool = pool[np.argsort(rng.random(len(pool)), kind="stable")[:k]]
    else:
        pool = pool[np.argsort(rng.random(len(pool)), kind="stable")]
    out = pool.tolist()
    taken.update(out)
    return out


def _identity(splits: Splits, split: str) -> dict:
    if split not in ("val", "test"):
        raise ValueError("negatives are generated for the 'val' or 'test' split")
    return split_fingerprint(splits[split], split)


def gen_eval_negatives_naive(splits: Splits, split: str = "test", q: int = 20, hist_fraction: float = 0.5,
                             seed: int = 0, threads: int = 1) -> NegativeSampleSet:
    """Historical plus random negatives, ``q`` per positive edge.

    ``round(q * hist_fraction)`` negatives come from the destinations the source
    reached in the train split, the rest are uniform; neither branch may pick a
    destination that is itself a positive for the same source and timestamp.
    A short historical pool is topped up from the random branch.
    """
    split_ds = splits[split]
    n_nodes = splits.full.num_nodes
    if q >= n_nodes - 1:
        raise ValueError(f"q={q} needs more than num_nodes - 1 = {n_nodes - 1} candidates")
    if not 0.0 <= hist_fraction <= 1.0:
        raise ValueError("hist_fraction must lie in [0, 1]")
    identity = _identity(splits, split)
    n_hist = int(math.floor(q * hist_fraction + 0.5))
    history = HistoryIndex(splits.train)
    ex_start, ex_stop, ex_dst = _same_time_positives(splits, split_ds)
    src_all = split_ds.src

    def work(chunk: int) -> list[np.ndarray]:
        rng = _chunk_rng(seed, chunk)
        a, b = chunk * CHUNK_SIZE, min((chunk + 1) * CHUNK_SIZE, len(split_ds))
        pre = rng.integers(0, n_nodes, size=(b - a, q + 8)).tolist()
        rows = []
        for i in range(a, b):
            taken = set(ex_dst[ex_start[i]:ex_stop[i]].tolist())
            hist = _pick(rng, history.of(int(src_all[i])), n_hist, taken)
            rand = _random_fill(rng, n_nodes, q - len(hist), taken, pre[i - a])
            rows.append(np.array(hist + rand, dtype=np.int64))
        return rows

    rows = _run_chunks(work, len(split_ds), threads)
    params = {"q": q, "hist_fraction": hist_fraction}
    return NegativeSampleSet("naive", params, int(seed), identity, *_pack(rows))


def _top_per_batch(splits: Splits, split: str, k: int, lam: float, batch_size: int) -> list[np.ndarray]:
    """Top-``k`` PopTrack nodes before each batch of ``split``, replaying the stream from the start."""
    state = init_state(splits.full.num_nodes, lam, batch_size)
    tops = []
    for name, batch in splits.stream(split, batch_size):
        if name == split:
            tops.append(topk_indices(state.counts, k))
        consume_batch(state, batch)
    return tops


def gen_eval_negatives_topn(splits: Splits, split: str = "test", n: int = 20, lam: float = 0.96,
                            batch_size: int = DEFAULT_BATCH_SIZE, backfill: bool = False,
                            threads: int = 1) -> NegativeSampleSet:
    """Every top-``n`` PopTrack node at prediction time, minus the positive.

    Lists hold ``n`` ids, or ``n - 1`` when the positive is itself in the top
    ``n``.  With ``backfill=True`` the next node in popularity order takes the
    positive's place, so every list holds exactly ``n`` ids; with
    ``n = num_nodes - 1`` that is the complete set of other nodes.
    """
    n_nodes = splits.full.num_nodes
    if n >= n_nodes:
        raise ValueError(f"n={n} must be < num_nodes={n_nodes}")
    identity = _identity(splits, split)
    split_ds = splits[split]
    k = n + 1 if backfill else n
    tops = _top_per_batch(splits, split, k, lam, batch_size)
    rows = []
    for b, top in enumerate(tops):
        d = split_ds.dst[b * batch_size:(b + 1) * batch_size]
        keep = top[None, :] != d[:, None]
        if backfill:
            keep &= np.cumsum(keep, axis=1) <= n
        rows.extend(top[m] for m in keep)
    params = {"n": n, "lambda": lam, "batch_size": batch_size, "backfill": backfill}
    return NegativeSampleSet("topn", params, None, identity, *_pack(rows))


def gen_eval_negatives_blend(splits: Splits, split: str = "test", pool: int = 1000, n_top: int = 20,
                             n_hist: int = 5, n_rand: int = 5, lam: float = 0.96,
                             batch_size: int = DEFAULT_BATCH_SIZE, seed: int = 0,
                             threads: int = 1) -> NegativeSampleSet:
    """Sampled hard negatives from a top pool, blended with historical and random ones.

    Per positive: ``n_top`` drawn uniformly without replacement from the top
    ``pool`` PopTrack nodes, then ``n_hist`` historical and ``n_rand`` random
    negatives, each branch skipping ids already taken.  Shortfalls in the top
    or historical branch are filled by the random branch.
    """
    n_nodes = splits.full.num_nodes
    if pool >= n_nodes:
        raise ValueError(f"pool={pool} must be < num_nodes={n_nodes}")
    if n_top > pool:
        raise ValueError(f"n_top={n_top} exceeds pool={pool}")
    total = n_top + n_hist + n_rand
    if total >= n_nodes - 1:
        raise ValueError(f"{total} negatives per edge need more than num_nodes - 1 candidates")
    identity = _identity(splits, split)
    split_ds = splits[split]
    tops = _top_per_batch(splits, split, pool, lam, batch_size)
    history = HistoryIndex(splits.train)
    ex_start, ex_stop, ex_dst = _same_time_positives(splits, split_ds)

    def work(chunk: int) -> list[np.ndarray]:
        rng = _chunk_rng(seed, chunk)
        a, b = chunk * CHUNK_SIZE, min((chunk + 1) * CHUNK_SIZE, len(split_ds))
        rows = []
        for i in range(a, b):
            taken = set(ex_dst[ex_start[i]:ex_stop[i]].tolist())
            top = _pick(rng, tops[i // batch_size], n_top, taken)
            hist = _pick(rng, history.of(int(split_ds.src[i])), n_hist, taken)
            need = total - len(top) - len(hist)
            rand = _random_fill(rng, n_nodes, need, taken)
            rows.append(np.array(top + hist + rand, dtype=np.int64))
        return rows

    rows = _run_chunks(work, len(split_ds), threads)
    params = {"pool": pool, "n_top": n_top, "n_hist": n_hist, "n_rand": n_rand,
              "lambda": lam, "batch_size": batch_size}
    return NegativeSampleSet("blend", params, int(seed), identity, *_pack(rows))
