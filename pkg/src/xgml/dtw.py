"""Unconstrained dynamic time warping between density-curve ordinates."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numba
import numpy as np

from .exceptions import EmptySequence, NonFiniteValue, PairError

LOCAL_COSTS = ("absolute_difference", "squared_difference")

if "NUMBA_THREADING_LAYER" not in os.environ:
    # prefer OpenMP; some images ship a TBB too old for numba and warn on first use
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]


@dataclass(frozen=True)
class DtwConfig:
    local_cost: str = "absolute_difference"

    def __post_init__(self):
        if self.local_cost not in LOCAL_COSTS:
            raise ValueError(f"local_cost must be one of {LOCAL_COSTS}, got {self.local_cost!r}")

    @property
    def squared(self) -> bool:
        return self.local_cost == "squared_difference"


@numba.njit(cache=True, nogil=True)
def _dtw_rolling(a, b, squared):
    # b is the shorter sequence; two rows of len(b) + 1 cells.
    n, m = a.shape[0], b.shape[0]
    prev = np.full(m + 1, np.inf)
    curr = np.full(m + 1, np.inf)
    prev[0] = 0.0
    for i in range(1, n + 1):
        curr[0] = np.inf
        ai = a[i - 1]
        for j in range(1, m + 1):
            diff = ai - b[j - 1]
            cost = diff * diff if squared else abs(diff)
            best = prev[j]
            if curr[j - 1] < best:
                best = curr[j - 1]
            if prev[j - 1] < best:
                best = prev[j - 1]
            curr[j] = cost + best
        prev, curr = curr, prev
    return prev[m]


@numba.njit(cache=True, parallel=True)
def _pairwise(seqs, offsets, rows, cols, squared):
    out = np.empty(rows.shape[0])
    for p in numba.prange(rows.shape[0]):
        i, j = rows[p], cols[p]
        a = seqs[offsets[i] : offsets[i + 1]]
        b = seqs[offsets[j] : offsets[j + 1]]
        if b.shape[0] > a.shape[0]:
            a, b = b, a
        out[p] = _dtw_rolling(a, b, squared)
    return out


def _as_sequence(x, name="sequence"):
    arr = np.ascontiguousarray(x, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptySequence(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{name} contains non-finite values")
    return arr


def dtw_distance(a, b, cfg: DtwConfig | None = None) -> float:
    """DTW cost ``D(n, m)`` with border ``inf`` and ``D(0, 0) = 0``.

    Memory is O(min(n, m)).  The cost matrix is filled with the longer
    sequence on rows, so the result does not depend on argument order for
    either local cost.
    """
    cfg = cfg or DtwConfig()
    a = _as_sequence(a, "a")
    b = _as_sequence(b, "b")
    if b.size > a.size:
        a, b = b, a
    return float(_dtw_rolling(a, b, cfg.squared))


def _default_threads() -> int:
    env = os.environ.get("XGML_THREADS")
    return int(env) if env else numba.config.NUMBA_NUM_THREADS


def pairwise_distances(curves, cfg: DtwConfig | None = None, threads: int | None = None):
    """Symmetric DTW distance matrix between the pdf ordinates of ``curves``.

    Each of the ``k(k-1)/2`` upper-triangle pairs is computed exactly once.
    Returns a :class:`xgml.graph.DistanceGraph`.
    """
    from .graph import DistanceGraph

    cfg = cfg or DtwConfig()
    if len(curves) == 0:
        raise EmptySequence("no curves given")
    seqs = []
    for c in curves:
        try:
            seqs.append(_as_sequence(c.pdf, f"region {c.region_id}"))
        except (EmptySequence, NonFiniteValue) as exc:
            raise PairError((c.region_id, None), exc) from exc
    k = len(seqs)
    offsets = np.zeros(k + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([s.size for s in seqs])
    rows, cols = np.triu_indices(k, 1)
    threads = threads or _default_threads()
    prev = numba.get_num_threads()
    numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))
    try:
        upper = _pairwise(np.concatenate(seqs), offsets, rows.astype(np.int64), cols.astype(np.int64), cfg.squared)
    finally:
        numba.set_num_threads(prev)
    w = np.zeros((k, k))
    w[rows, cols] = upper
    w[cols, rows] = upper
    return DistanceGraph(w, [c.region_id for c in curves])
