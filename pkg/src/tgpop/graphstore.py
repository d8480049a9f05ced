"""Temporal edge streams: loading, validation, chronological splits and batching.

A dataset is held as three parallel numpy arrays (``src``, ``dst``, ``t``)
sorted by timestamp.  Splits are zero-copy views that remember their
position (``offset``) in the full stream, so every consumer can reason in
global stream positions.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "GraphStoreError",
    "EmptyDataset",
    "MalformedRecord",
    "EmptySplit",
    "EdgeEvent",
    "FormatConfig",
    "TemporalDataset",
    "SplitSpec",
    "Splits",
    "EdgeBatch",
    "Stats",
    "load_edge_list",
    "write_edge_list",
    "remap_ids",
    "write_id_map",
    "read_id_map",
    "chronological_split",
    "batch_iter",
    "dataset_stats",
    "split_fingerprint",
]

COLUMNS = ("src", "dst", "t")


class GraphStoreError(ValueError):
    """Base class for dataset validation errors."""


class EmptyDataset(GraphStoreError):
    pass


class MalformedRecord(GraphStoreError):
    def __init__(self, row: int, reason: str = ""):
        self.row = row
        self.reason = reason
        msg = f"malformed record at row {row}"
        super().__init__(f"{msg}: {reason}" if reason else msg)


class EmptySplit(GraphStoreError):
    pass


@dataclass(frozen=True)
class EdgeEvent:
    src: int
    dst: int
    t: int


@dataclass(frozen=True)
class FormatConfig:
    """How an edge-list file is laid out.

    ``header`` may be True, False or ``"auto"``; auto treats the first line
    as a header only when its fields are exactly the configured column names.
    ``time_decimals > 0`` enables fixed-point timestamps: ``"12.5"`` with one
    decimal is stored as the integer 125.
    """

    delimiter: str = ","
    header: bool | str = "auto"
    columns: tuple[str, str, str] = COLUMNS
    time_decimals: int = 0
    num_nodes: Optional[int] = None

    def __post_init__(self):
        if sorted(self.columns) != sorted(COLUMNS):
            raise ValueError(f"columns must be a permutation of {COLUMNS}, got {self.columns}")
        if self.time_decimals < 0:
            raise ValueError("time_decimals must be >= 0")
        if self.header not in (True, False, "auto"):
            raise ValueError("header must be True, False or 'auto'")


@dataclass(frozen=True, eq=False)
class TemporalDataset:
    """Immutable, chronologically ordered interaction stream.

    ``offset`` is the global stream position of the first edge; it is 0 for
    a full dataset and non-zero for split views.
    """

    src: np.ndarray
    dst: np.ndarray
    t: np.ndarray
    num_nodes: int
    name: str = "dataset"
    offset: int = 0
    time_decimals: int = 0

    def __post_init__(self):
        if not (len(self.src) == len(self.dst) == len(self.t)):
            raise GraphStoreError("src, dst and t must have equal length")
        for a in (self.src, self.dst, self.t):
            a.flags.writeable = False
        if len(self.src):
            hi = max(int(self.src.max()), int(self.dst.max()))
            lo = min(int(self.src.min()), int(self.dst.min()))
            if lo < 0:
                raise GraphStoreError("node ids must be non-negative")
            if hi >= self.num_nodes:
                raise GraphStoreError(f"num_nodes={self.num_nodes} but max node id is {hi}")

    @classmethod
    def from_arrays(cls, src, dst, t, num_nodes: Optional[int] = None, name: str = "dataset",
                    time_decimals: int = 0, presorted: bool = False) -> "TemporalDataset":
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        t = np.asarray(t, dtype=np.int64)
        if not presorted:
            order = np.argsort(t, kind="stable")
            src, dst, t = src[order], dst[order], t[order]
        if num_nodes is None:
            num_nodes = int(max(src.max(), dst.max())) + 1 if len(src) else 0
        return cls(src, dst, t, int(num_nodes), name, 0, time_decimals)

    @classmethod
    def from_events(cls, events: Sequence[tuple[int, int, int] | EdgeEvent], **kw) -> "TemporalDataset":
        rows = [(e.src, e.dst, e.t) if isinstance(e, EdgeEvent) else tuple(e) for e in events]
        arr = np.array(rows, dtype=np.int64).reshape(-1, 3)
        return cls.from_arrays(arr[:, 0], arr[:, 1], arr[:, 2], **kw)

    def __len__(self) -> int:
        return len(self.src)

    def __getitem__(self, i: int) -> EdgeEvent:
        return EdgeEvent(int(self.src[i]), int(self.dst[i]), int(self.t[i]))

    def events(self) -> list[EdgeEvent]:
        return [EdgeEvent(int(s), int(d), int(t)) for s, d, t in zip(self.src, self.dst, self.t)]

    def slice(self, start: int, stop: int) -> "TemporalDataset":
        """Zero-copy view of positions ``[start, stop)`` relative to this dataset."""
        return TemporalDataset(self.src[start:stop], self.dst[start:stop], self.t[start:stop],
                               self.num_nodes, self.name, self.offset + start, self.time_decimals)


# --- loading ----------------------------------------------------------------

def _parse_time(text: str, decimals: int) -> int:
    if decimals == 0:
        return int(text)
    d = Decimal(text).scaleb(decimals)
    if d != d.to_integral_value():
        raise ValueError(f"timestamp {text!r} has more than {decimals} decimals")
    return int(d)


def _is_header(fields: list[str], columns: Sequence[str]) -> bool:
    return [f.strip() for f in fields] == list(columns)


def _slow_parse(lines: list[str], fmt: FormatConfig, first_row: int) -> np.ndarray:
    pos = {c: i for i, c in enumerate(fmt.columns)}
    out = np.empty((len(lines), 3), dtype=np.int64)
    for k, line in enumerate(lines):
        row = first_row + k
        fields = line.rstrip("\r\n").split(fmt.delimiter)
        if len(fields) != 3:
            raise MalformedRecord(row, f"expected 3 fields, got {len(fields)}")
        try:
            s = int(fields[pos["src"]])
            d = int(fields[pos["dst"]])
            t = _parse_time(fields[pos["t"]].strip(), fmt.time_decimals)
        except (ValueError, InvalidOperation) as exc:
            raise MalformedRecord(row, f"non-numeric field ({exc})") from None
        if s < 0 or d < 0 or t < 0:
            raise MalformedRecord(row, "negative value")
        out[k] = (s, d, t)
    return out


def load_edge_list(path: str | os.PathLike, fmt: FormatConfig = FormatConfig(),
                   name: Optional[str] = None) -> TemporalDataset:
    """Read a delimited edge list and return it stably sorted by timestamp.

    Raises ``EmptyDataset`` for files without records and ``MalformedRecord``
    (carrying the 1-based line number) for unparsable rows.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines()]
    first_row = 1
    if lines and fmt.header is not False:
        head = lines[0].split(fmt.delimiter)
        if fmt.header is True or _is_header(head, fmt.columns):
            lines = lines[1:]
            first_row = 2
    # trailing blank lines are tolerated, interior ones are not
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise EmptyDataset(f"{path}: no edge records")

    arr = None
    if fmt.time_decimals == 0:
        try:
            arr = np.loadtxt(lines, delimiter=fmt.delimiter, dtype=np.int64, ndmin=2)
            if arr.shape[1] != 3 or (arr < 0).any():
                arr = None
        except ValueError:
            arr = None
    if arr is None:
        arr = _slow_parse(lines, fmt, first_row)
    pos = {c: i for i, c in enumerate(fmt.columns)}
    src, dst, t = arr[:, pos["src"]], arr[:, pos["dst"]], arr[:, pos["t"]]
    if name is None:
        name = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    ds = TemporalDataset.from_arrays(src, dst, t, name=name, time_decimals=fmt.time_decimals)
    if fmt.num_nodes is not None:
        if fmt.num_nodes < ds.num_nodes:
            raise GraphStoreError(f"num_nodes override {fmt.num_nodes} < max id + 1 = {ds.num_nodes}")
        ds = TemporalDataset(ds.src, ds.dst, ds.t, fmt.num_nodes, ds.name, 0, ds.time_decimals)
    return ds


def _format_time(values: np.ndarray, decimals: int) -> list[str]:
    if decimals == 0:
        return [str(v) for v in values.tolist()]
    out = []
    for v in values.tolist():
        q, r = divmod(v, 10 ** decimals)
        out.append(f"{q}.{r:0{decimals}d}")
    return out


def write_edge_list(ds: TemporalDataset, path: str | os.PathLike, header: bool = True) -> None:
    """Write the canonical form: comma-delimited ``src,dst,t`` with a header line."""
    ts = _format_time(ds.t, ds.time_decimals)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            fh.write("src,dst,t\n")
        fh.writelines(f"{s},{d},{t}\n" for s, d, t in zip(ds.src.tolist(), ds.dst.tolist(), ts))


def remap_ids(ds: TemporalDataset) -> tuple[TemporalDataset, np.ndarray]:
    """Compact node ids to ``0..n-1`` in ascending order of original id.

    Returns the remapped dataset and ``id_map`` with ``id_map[dense] = original``.
    """
    id_map = np.unique(np.concatenate([ds.src, ds.dst]))
    src = np.searchsorted(id_map, ds.src)
    dst = np.searchsorted(id_map, ds.dst)
    out = TemporalDataset(src, dst, ds.t.copy(), len(id_map), ds.name, 0, ds.time_decimals)
    return out, id_map


def write_id_map(id_map: np.ndarray, path: str | os.PathLike, delimiter: str = ",") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"original_id{delimiter}dense_id\n")
        fh.writelines(f"{o}{delimiter}{i}\n" for i, o in enumerate(id_map.tolist()))


def read_id_map(path: str | os.PathLike, delimiter: str = ",") -> np.ndarray:
    arr = np.loadtxt(path, delimiter=delimiter, dtype=np.int64, skiprows=1, ndmin=2)
    id_map = np.empty(len(arr), dtype=np.int64)
    id_map[arr[:, 1]] = arr[:, 0]
    return id_map


# --- splitting and batching -------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    mode: str = "ratio"
    train_fraction: float = 0.70
    val_fraction: float = 0.15
    train_end_t: Optional[int] = None
    val_end_t: Optional[int] = None

    def __post_init__(self):
        if self.mode == "ratio":
            if not (0 < self.train_fraction < 1 and 0 < self.val_fraction < 1):
                raise ValueError("fractions must lie in (0, 1)")
            if self.train_fraction + self.val_fraction >= 1:
                raise ValueError("train_fraction + val_fraction must be < 1")
        elif self.mode == "boundary":
            if self.train_end_t is None or self.val_end_t is None:
                raise ValueError("boundary mode needs train_end_t and val_end_t")
            if self.train_end_t > self.val_end_t:
                raise ValueError("train_end_t must be <= val_end_t")
        else:
            raise ValueError(f"unknown split mode {self.mode!r}")

    @classmethod
    def ratio(cls, train: float = 0.70, val: float = 0.15) -> "SplitSpec":
        return cls("ratio", train, val)

    @classmethod
    def boundary(cls, train_end_t: int, val_end_t: int) -> "SplitSpec":
        return cls("boundary", train_end_t=train_end_t, val_end_t=val_end_t)


@dataclass(frozen=True)
class Splits:
    full: TemporalDataset
    train: TemporalDataset
    val: TemporalDataset
    test: TemporalDataset

    SPLIT_NAMES = ("train", "val", "test")

    def __getitem__(self, name: str) -> TemporalDataset:
        if name not in self.SPLIT_NAMES and name != "full":
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)

    def upto(self, name: str) -> list[tuple[str, TemporalDataset]]:
        """Splits in stream order, ending with ``name``."""
        names = self.SPLIT_NAMES[: self.SPLIT_NAMES.index(name) + 1]
        return [(n, self[n]) for n in names]

    def stream(self, upto: str, batch_size: int) -> Iterator[tuple[str, "EdgeBatch"]]:
        """Batches of every split up to and including ``upto``, in stream order.

        Each split is batched on its own, so batch boundaries restart at split
        boundaries.
        """
        for name, part in self.upto(upto):
            for batch in batch_iter(part, batch_size):
                yield name, batch


def chronological_split(ds: TemporalDataset, spec: SplitSpec = SplitSpec()) -> Splits:
    n = len(ds)
    if spec.mode == "ratio":
        a = int(np.floor(n * spec.train_fraction))
        b = a + int(np.floor(n * spec.val_fraction))
    else:
        a = int(np.searchsorted(ds.t, spec.train_end_t, side="right"))
        b = int(np.searchsorted(ds.t, spec.val_end_t, side="right"))
    parts = (ds.slice(0, a), ds.slice(a, b), ds.slice(b, n))
    for nm, p in zip(Splits.SPLIT_NAMES, parts):
        if len(p) == 0:
            raise EmptySplit(f"{nm} split is empty")
    return Splits(ds, *parts)


@dataclass(frozen=True, eq=False)
class EdgeBatch:
    """Contiguous run of edges; ``offset`` is the global stream position of the first."""

    offset: int
    src: np.ndarray
    dst: np.ndarray
    t: np.ndarray

    def __len__(self) -> int:
        return len(self.src)

    @property
    def events(self) -> list[EdgeEvent]:
        return [EdgeEvent(int(s), int(d), int(t)) for s, d, t in zip(self.src, self.dst, self.t)]


def batch_iter(ds: TemporalDataset, batch_size: int) -> Iterator[EdgeBatch]:
    """Positional batches of ``batch_size`` edges; the last one may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    for i in range(0, len(ds), batch_size):
        j = min(i + batch_size, len(ds))
        yield EdgeBatch(ds.offset + i, ds.src[i:j], ds.dst[i:j], ds.t[i:j])


@dataclass(frozen=True)
class Stats:
    num_edges: int
    num_nodes: int
    num_distinct_dst: int
    t_min: Optional[int] = None
    t_max: Optional[int] = None

    def as_dict(self) -> dict:
        return {"num_edges": self.num_edges, "num_nodes": self.num_nodes,
                "num_distinct_dst": self.num_distinct_dst, "t_min": self.t_min, "t_max": self.t_max}


def dataset_stats(ds: TemporalDataset) -> Stats:
    if len(ds) == 0:
        return Stats(0, ds.num_nodes, 0)
    return Stats(len(ds), ds.num_nodes, int(len(np.unique(ds.dst))), int(ds.t[0]), int(ds.t[-1]))


def split_fingerprint(ds: TemporalDataset, split: str = "") -> dict:
    """Identity record used to check that persisted artifacts match a split."""
    h = hashlib.sha256()
    for a in (ds.src, ds.dst, ds.t):
        h.update(np.ascontiguousarray(a, dtype="<i8").tobytes())
    return {
        "dataset_name": ds.name,
        "split": split,
        "num_edges": len(ds),
        "first_t": int(ds.t[0]) if len(ds) else None,
        "last_t": int(ds.t[-1]) if len(ds) else None,
        "checksum": h.hexdigest()[:16],
    }
