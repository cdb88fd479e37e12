"""PELT changepoint detection with a kernel (RBF) segment cost.

Breakpoints live on a grid of stride ``subsample``; the cost of a segment is
evaluated on every raw sample it covers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

MEDIAN_HEURISTIC = "median-heuristic"


@dataclass(frozen=True)
class CpdParams:
    subsample: int = 40
    penalty: float = 50.0
    kernel_bandwidth: Union[float, str] = MEDIAN_HEURISTIC
    min_segment_length: int = 2

    def __post_init__(self):
        if int(self.subsample) < 1:
            raise ValueError("subsample must be >= 1")
        if not self.penalty >= 0:
            raise ValueError("penalty must be >= 0")
        if int(self.min_segment_length) < 1:
            raise ValueError("min_segment_length must be >= 1")
        bw = self.kernel_bandwidth
        if isinstance(bw, str):
            if bw != MEDIAN_HEURISTIC:
                raise ValueError(f"kernel_bandwidth must be positive or {MEDIAN_HEURISTIC!r}")
        elif not float(bw) > 0:
            raise ValueError("kernel_bandwidth must be positive")

    @property
    def min_size(self) -> int:
        """Minimum segment length in raw samples."""
        return self.subsample * self.min_segment_length


def rbf_kernel(a: np.ndarray, b: np.ndarray, bandwidth: float) -> np.ndarray:
    d = np.subtract.outer(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    return np.exp(-(d * d) / (2.0 * bandwidth * bandwidth))


def rbf_segment_cost(x, a: int, b: int, bandwidth: float) -> float:
    """(b-a) - (1/(b-a)) * sum_{i,j in [a,b)} k(x_i, x_j)."""
    if not 0 <= a < b <= len(x):
        raise ValueError(f"invalid segment [{a}, {b}) for length {len(x)}")
    seg = np.asarray(x[a:b], dtype=np.float64)
    n = b - a
    if n == 1:
        return 0.0
    return float(n - rbf_kernel(seg, seg, bandwidth).sum() / n)


def median_heuristic(x, subsample: int = 1) -> float:
    """Median pairwise distance of the stride-subsampled points, 1.0 if degenerate."""
    pts = np.asarray(x, dtype=np.float64)[::subsample]
    if len(pts) < 2:
        return 1.0
    iu = np.triu_indices(len(pts), k=1)
    med = float(np.median(np.abs(np.subtract.outer(pts, pts))[iu]))
    return med if med > 0 else 1.0


def resolve_bandwidth(x, p: CpdParams) -> float:
    if isinstance(p.kernel_bandwidth, str):
        return median_heuristic(x, p.subsample)
    return float(p.kernel_bandwidth)


def grid_edges(n: int, subsample: int) -> np.ndarray:
    """Candidate breakpoints 0, s, 2s, ... plus the end sentinel ``n``."""
    return np.append(np.arange(0, n, subsample), n).astype(np.int64)


class _BlockCost:
    """O(1) kernel cost for segments aligned to the breakpoint grid.

    Kernel sums are accumulated per pair of grid blocks, then integrated into a
    2-D prefix table, so the full N x N Gram matrix is never materialized.
    """

    def __init__(self, x: np.ndarray, edges: np.ndarray, bandwidth: float, chunk: int = 2048):
        m = len(edges) - 1
        block_of = np.repeat(np.arange(m), np.diff(edges))
        sums = np.zeros((m, m))
        n = len(x)
        for lo in range(0, n, chunk):
            hi = min(n, lo + chunk)
            k = rbf_kernel(x[lo:hi], x, bandwidth)
            # reduce columns into blocks, then rows into blocks
            col = np.add.reduceat(k, edges[:-1], axis=1)
            np.add.at(sums, block_of[lo:hi], col)
        self.prefix = np.zeros((m + 1, m + 1))
        self.prefix[1:, 1:] = sums.cumsum(0).cumsum(1)
        self.edges = edges

    def __call__(self, i: int, j: int) -> float:
        """Cost of the segment spanning grid blocks [i, j)."""
        p = self.prefix
        n = self.edges[j] - self.edges[i]
        if n <= 1:
            return 0.0
        s = p[j, j] - p[i, j] - p[j, i] + p[i, i]
        return float(n - s / n)


def segment_cost_table(x, p: CpdParams, bandwidth: float | None = None):
    """Return (edges, cost) where cost(i, j) is the RBF cost of grid blocks [i, j)."""
    x = np.asarray(x, dtype=np.float64)
    bw = resolve_bandwidth(x, p) if bandwidth is None else bandwidth
    edges = grid_edges(len(x), p.subsample)
    return edges, _BlockCost(x, edges, bw)


def pelt(x, p: CpdParams = CpdParams()) -> np.ndarray:
    """Exact minimizer of sum(segment cost) + penalty * n_changepoints, with pruning.

    Returns strictly increasing original-resolution change point indices in (0, N).
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < 2 * p.subsample:
        return np.zeros(0, dtype=np.int64)
    edges, cost = segment_cost_table(x, p)
    m = len(edges) - 1
    min_size = p.min_size
    pen = float(p.penalty)

    f = np.full(m + 1, np.inf)
    f[0] = -pen
    last = np.full(m + 1, -1, dtype=np.int64)
    candidates: list[int] = [0]
    # (activation step, index) pairs; pruning only applies once the pruning
    # point itself becomes an admissible predecessor, which keeps it exact
    pending: list[tuple[int, list[int]]] = []

    for t in range(1, m + 1):
        best, arg = np.inf, -1
        vals = {}
        for s in candidates:
            if edges[t] - edges[s] < min_size or not np.isfinite(f[s]):
                continue
            v = f[s] + cost(s, t)
            vals[s] = v
            if v + pen < best:
                best, arg = v + pen, s
        f[t] = best
        last[t] = arg
        if np.isfinite(best):
            drop = [s for s, v in vals.items() if v > best]
            if drop:
                # t is admissible as predecessor from the first step j with
                # edges[j] - edges[t] >= min_size
                j = int(np.searchsorted(edges, edges[t] + min_size))
                pending.append((j, drop))
        if pending:
            keep_pending = []
            removed = set()
            for j, drop in pending:
                if j <= t + 1:
                    removed.update(drop)
                else:
                    keep_pending.append((j, drop))
            pending = keep_pending
            if removed:
                candidates = [s for s in candidates if s not in removed]
        candidates.append(t)

    if not np.isfinite(f[m]):
        return np.zeros(0, dtype=np.int64)
    bkps = []
    t = m
    while t > 0:
        s = int(last[t])
        if s > 0:
            bkps.append(int(edges[s]))
        t = s
    return np.asarray(sorted(bkps), dtype=np.int64)


def penalized_objective(x, cps, p: CpdParams = CpdParams(), bandwidth: float | None = None) -> float:
    """Sum of RBF segment costs plus penalty per change point, computed directly."""
    x = np.asarray(x, dtype=np.float64)
    bw = resolve_bandwidth(x, p) if bandwidth is None else bandwidth
    bounds = [0, *[int(c) for c in cps], len(x)]
    total = sum(rbf_segment_cost(x, a, b, bw) for a, b in zip(bounds[:-1], bounds[1:]))
    return total + p.penalty * (len(bounds) - 2)


def segments_from_changepoints(cps, n: int) -> list[tuple[int, int]]:
    bounds = [0, *[int(c) for c in cps], n]
    return list(zip(bounds[:-1], bounds[1:]))
