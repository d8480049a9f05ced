"""Global-dynamics measures built on windowed destination histograms.

The stream is cut by position into ``n_windows`` windows of equal size; each
window yields the empirical distribution of its destination nodes.  Two
summaries compare those distributions with the 1-Wasserstein distance:

* the short-horizon measure averages the distance between consecutive windows;
* the long-range measure averages it over every pair of windows.

Low values mean recent global popularity is a good guide to the near future.

Two ground metrics are supported.  ``index-line`` places node ``i`` at
position ``i`` on the real line (the usual 1-D earth mover's distance);
``discrete`` charges 1 for moving mass between any two distinct nodes, which
reduces W1 to total variation and does not depend on how ids are assigned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .graphstore import TemporalDataset

__all__ = [
    "GROUND_METRICS",
    "WindowPmf",
    "MeasureConfig",
    "window_pmfs",
    "wasserstein1",
    "pairwise_matrix",
    "w_short",
    "w_long",
]

GROUND_METRICS = ("index-line", "discrete")
NORM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class WindowPmf:
    window_index: int
    support: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        if len(self.support) != len(self.mass):
            raise ValueError("support and mass differ in length")
        if len(self.support) > 1 and np.any(np.diff(self.support) <= 0):
            raise ValueError("support must be strictly increasing")
        if np.any(self.mass <= 0):
            raise ValueError("masses must be positive")

    @classmethod
    def from_dict(cls, d: dict[int, float], window_index: int = 0) -> "WindowPmf":
        keys = sorted(d)
        return cls(window_index, np.array(keys, dtype=np.int64), np.array([d[k] for k in keys], dtype=np.float64))

    @classmethod
    def from_samples(cls, dst: np.ndarray, window_index: int = 0) -> "WindowPmf":
        support, counts = np.unique(dst, return_counts=True)
        return cls(window_index, support.astype(np.int64), counts / len(dst))

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.support.tolist(), self.mass.tolist()))


@dataclass(frozen=True)
class MeasureConfig:
    n_windows: int = 100
    ground_metric: str = "index-line"

    def __post_init__(self):
        if self.n_windows < 2:
            raise ValueError("n_windows must be >= 2")
        if self.ground_metric not in GROUND_METRICS:
            raise ValueError(f"ground_metric must be one of {GROUND_METRICS}")

    def samples_per_window(self, num_edges: int) -> int:
        return num_edges // self.n_windows


def window_pmfs(ds: TemporalDataset, cfg: MeasureConfig = MeasureConfig()) -> list[WindowPmf]:
    """Destination PMFs of ``cfg.n_windows`` equal windows; trailing remainder edges are dropped."""
    k = cfg.samples_per_window(len(ds))
    if k < 1:
        raise ValueError(f"{len(ds)} edges cannot fill {cfg.n_windows} windows")
    dst = ds.dst[: k * cfg.n_windows].reshape(cfg.n_windows, k)
    return [WindowPmf.from_samples(row, i) for i, row in enumerate(dst)]


def _check_normalized(p: WindowPmf) -> None:
    total = math.fsum(p.mass.tolist())
    if abs(total - 1.0) > NORM_TOL:
        raise ValueError(f"window {p.window_index} mass sums to {total!r}, not 1")


def _aligned(p: WindowPmf, q: WindowPmf) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    union = np.union1d(p.support, q.support)
    pa = np.zeros(len(union))
    qa = np.zeros(len(union))
    pa[np.searchsorted(union, p.support)] = p.mass
    qa[np.searchsorted(union, q.support)] = q.mass
    return union, pa, qa


def wasserstein1(p: WindowPmf, q: WindowPmf, ground: str = "index-line", check: bool = True) -> float:
    if ground not in GROUND_METRICS:
        raise ValueError(f"ground must be one of {GROUND_METRICS}")
    if check:
        _check_normalized(p)
        _check_normalized(q)
    union, pa, qa = _aligned(p, q)
    if ground == "discrete":
        return 0.5 * math.fsum(np.abs(pa - qa).tolist())
    if len(union) < 2:
        return 0.0
    cdf_gap = np.abs(np.cumsum(pa)[:-1] - np.cumsum(qa)[:-1])
    return float(math.fsum((cdf_gap * np.diff(union)).tolist()))


def pairwise_matrix(pmfs: list[WindowPmf], ground: str = "index-line") -> np.ndarray:
    """Symmetric matrix of W1 between every pair of windows, zero diagonal.

    Pairs are visited in a fixed (row-major, lower triangle) order so the
    result is bit-stable.
    """
    for p in pmfs:
        _check_normalized(p)
    n = len(pmfs)
    m = np.zeros((n, n))
    for i in range(1, n):
        for j in range(i):
            m[i, j] = m[j, i] = wasserstein1(pmfs[i], pmfs[j], ground, check=False)
    return m


def w_short(ds: TemporalDataset, cfg: MeasureConfig = MeasureConfig(),
            pmfs: Optional[list[WindowPmf]] = None) -> tuple[float, np.ndarray]:
    """Mean W1 over the ``N - 1`` consecutive window pairs, plus the per-step series."""
    pmfs = window_pmfs(ds, cfg) if pmfs is None else pmfs
    series = np.array([wasserstein1(pmfs[i], pmfs[i + 1], cfg.ground_metric) for i in range(len(pmfs) - 1)])
    return math.fsum(series.tolist()) / len(series), series


def w_long(ds: TemporalDataset, cfg: MeasureConfig = MeasureConfig(),
           pmfs: Optional[list[WindowPmf]] = None) -> tuple[float, np.ndarray]:
    """Mean W1 over all ``N (N - 1) / 2`` unordered window pairs, plus the full matrix."""
    pmfs = window_pmfs(ds, cfg) if pmfs is None else pmfs
    m = pairwise_matrix(pmfs, cfg.ground_metric)
    n = len(pmfs)
    lower = m[np.tril_indices(n, -1)]
    return math.fsum(lower.tolist()) / (n * (n - 1) / 2), m
