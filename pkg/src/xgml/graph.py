"""Distance graphs: construction, flattening, serialization and group statistics."""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import EmptyGroup, InconsistentDimensions, InvalidGraph

MAGIC = b"XGMLG1"
DEFAULT_THRESHOLDS = (0.70, 0.75, 0.80)
DEFAULT_TRIM = 0.1


@dataclass(eq=False)
class DistanceGraph:
    """Symmetric non-negative k x k weight matrix with a zero diagonal."""

    weights: np.ndarray
    region_ids: list = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise InvalidGraph(f"weights must be square, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InvalidGraph("weights must be finite and non-negative")
        if np.any(np.diag(w) != 0) or not np.array_equal(w, w.T):
            raise InvalidGraph("weights must be symmetric with a zero diagonal")
        self.weights = w
        if self.region_ids is None:
            self.region_ids = list(range(1, w.shape[0] + 1))
        if len(self.region_ids) != w.shape[0]:
            raise InvalidGraph("region_ids length differs from matrix size")

    @property
    def k(self) -> int:
        return self.weights.shape[0]


@dataclass
class GroupGraph:
    group_label: str
    weights: np.ndarray
    n_subjects: int
    trim_fraction: float = DEFAULT_TRIM
    degenerate: bool = False
    region_ids: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.weights.shape[0]


def n_edges(k: int) -> int:
    return k * (k - 1) // 2


def edge_index(k: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-major strict-upper-triangle positions: feature p is edge (i[p], j[p])."""
    return np.triu_indices(k, 1)


def k_from_edges(p: int) -> int:
    k = int(round((1 + math.sqrt(1 + 8 * p)) / 2))
    if n_edges(k) != p:
        raise InconsistentDimensions(f"{p} is not a triangular number of edges")
    return k


def flatten(g) -> np.ndarray:
    w = g.weights if hasattr(g, "weights") else np.asarray(g)
    i, j = edge_index(w.shape[0])
    return w[i, j].copy()


def unflatten(values, region_ids=None) -> DistanceGraph:
    values = np.asarray(values, dtype=np.float64)
    k = k_from_edges(values.size)
    i, j = edge_index(k)
    w = np.zeros((k, k))
    w[i, j] = values
    w[j, i] = values
    return DistanceGraph(w, region_ids)


def _upper(w: np.ndarray) -> np.ndarray:
    i, j = edge_index(w.shape[0])
    return w[i, j]


def minmax_normalize(w: np.ndarray) -> tuple[np.ndarray, bool]:
    """Min-max scale off-diagonal entries to [0, 1]; the diagonal stays 0.

    Returns ``(matrix, degenerate)``; a zero-range input maps to all zeros.
    """
    w = np.array(w, dtype=np.float64)
    off = ~np.eye(w.shape[0], dtype=bool)
    lo, hi = w[off].min(), w[off].max()
    out = np.zeros_like(w)
    if hi == lo:
        return out, True
    out[off] = (w[off] - lo) / (hi - lo)
    return out, False


def trimmed_mean(stack: np.ndarray, trim_fraction: float, axis: int = 0) -> np.ndarray:
    """Mean after dropping ``floor(trim * n)`` lowest and highest values along ``axis``."""
    if not 0 <= trim_fraction < 0.5:
        raise ValueError("trim_fraction must be in [0, 0.5)")
    s = np.sort(stack, axis=axis)
    n = s.shape[axis]
    cut = int(math.floor(trim_fraction * n))
    kept = np.take(s, np.arange(cut, n - cut), axis=axis)
    return kept.mean(axis=axis)


def group_graph(graphs: Sequence, trim_fraction: float = DEFAULT_TRIM, group_label: str = "") -> GroupGraph:
    """Per-edge trimmed mean over subjects followed by off-diagonal min-max scaling."""
    if len(graphs) == 0:
        raise EmptyGroup(f"group {group_label!r} has no graphs")
    mats = [g.weights if hasattr(g, "weights") else np.asarray(g, dtype=np.float64) for g in graphs]
    if len({m.shape for m in mats}) != 1:
        raise InconsistentDimensions("graphs in a group must share the region count")
    avg = trimmed_mean(np.stack(mats), trim_fraction, axis=0)
    norm, degenerate = minmax_normalize(avg)
    region_ids = list(getattr(graphs[0], "region_ids", None) or range(1, avg.shape[0] + 1))
    return GroupGraph(group_label, norm, len(mats), trim_fraction, degenerate, region_ids)


def mean_distance(g) -> float:
    w = g.weights if hasattr(g, "weights") else np.asarray(g)
    return float(_upper(w).mean())


def count_edges_above(g, threshold: float) -> int:
    """Number of strict-upper-triangle entries strictly greater than ``threshold``."""
    w = g.weights if hasattr(g, "weights") else np.asarray(g)
    return int(np.count_nonzero(_upper(w) > threshold))


def exp_similarity(g) -> np.ndarray:
    """Entry-wise ``exp(-w)``; the diagonal becomes 1."""
    w = g.weights if hasattr(g, "weights") else np.asarray(g, dtype=np.float64)
    return np.exp(-w)


def group_report(g: GroupGraph, thresholds=DEFAULT_THRESHOLDS) -> dict:
    return {
        "group": g.group_label,
        "n_subjects": g.n_subjects,
        "trim_fraction": g.trim_fraction,
        "degenerate": g.degenerate,
        "mean_distance": mean_distance(g),
        "counts": {f"{t:.2f}": count_edges_above(g, t) for t in thresholds},
    }


# ---------------------------------------------------------------------------
# serialization


def write_graph(g: DistanceGraph, path) -> None:
    """Binary format: magic, k as uint32 LE, then the upper triangle as float64 LE."""
    values = flatten(g).astype("<f8")
    Path(path).write_bytes(MAGIC + struct.pack("<I", g.k) + values.tobytes())


def read_graph(path, region_ids=None) -> DistanceGraph:
    raw = Path(path).read_bytes()
    if raw[:6] != MAGIC:
        raise InvalidGraph(f"{path}: bad magic")
    (k,) = struct.unpack("<I", raw[6:10])
    payload = raw[10:]
    if len(payload) != 8 * n_edges(k):
        raise InvalidGraph(f"{path}: expected {n_edges(k)} values for k={k}")
    return unflatten(np.frombuffer(payload, dtype="<f8"), region_ids)


def write_edge_list(g, path, threshold: float | None = None, names=None) -> None:
    """CSV ``i, j, weight`` (1-based region ids) for edges above ``threshold``."""
    w = g.weights
    ids = list(getattr(g, "region_ids", None) or range(1, w.shape[0] + 1))
    rows, cols = edge_index(w.shape[0])
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        header = ["i", "j", "weight"] + (["region_i", "region_j"] if names else [])
        out.writerow(header)
        for a, b in zip(rows, cols):
            if threshold is not None and not w[a, b] > threshold:
                continue
            row = [ids[a], ids[b], repr(float(w[a, b]))]
            if names:
                row += [names[a], names[b]]
            out.writerow(row)


def write_group_report(g: GroupGraph, path, thresholds=DEFAULT_THRESHOLDS) -> dict:
    report = group_report(g, thresholds)
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True))
    return report


# ---------------------------------------------------------------------------
# estimators


def build_subject_graph(regions, cfg=None, threads=None):
    """ROI samples of one subject -> (DistanceGraph, density provenance)."""
    from .density import provenance, region_densities
    from .dtw import pairwise_distances

    curves = region_densities(regions)
    return pairwise_distances(curves, cfg, threads=threads), provenance(curves)


class MetabolicGraphBuilder(TransformerMixin, BaseEstimator):
    """Subjects' ROI samples -> flattened distance-graph features.

    ``transform`` takes a list of subjects (each a list of ``RoiSamples``)
    and returns an ``(n_subjects, k(k-1)/2)`` array.  ``graphs_`` and
    ``provenance_`` keep the last transform's intermediate results.
    """

    def __init__(self, local_cost="absolute_difference", threads=None):
        self.local_cost = local_cost
        self.threads = threads

    def fit(self, X=None, y=None):
        from .dtw import DtwConfig

        self.cfg_ = DtwConfig(self.local_cost)
        return self

    def transform(self, X):
        if not hasattr(self, "cfg_"):
            self.fit()
        self.graphs_, self.provenance_ = [], []
        for regions in X:
            g, prov = build_subject_graph(regions, self.cfg_, self.threads)
            self.graphs_.append(g)
            self.provenance_.append(prov)
        return np.vstack([flatten(g) for g in self.graphs_])


class GraphFlattener(TransformerMixin, BaseEstimator):
    """DistanceGraph list (or k x k array stack) -> upper-triangle feature rows."""

    def __init__(self, similarity=False):
        self.similarity = similarity

    def fit(self, X, y=None):
        self.n_regions_ = (X[0].weights if hasattr(X[0], "weights") else np.asarray(X[0])).shape[0]
        self.n_features_in_ = n_edges(self.n_regions_)
        return self

    def transform(self, X):
        rows = []
        for g in X:
            w = g.weights if hasattr(g, "weights") else np.asarray(g, dtype=np.float64)
            if w.shape[0] != getattr(self, "n_regions_", w.shape[0]):
                raise InconsistentDimensions("graph size differs from the fitted size")
            rows.append(flatten(exp_similarity(w) if self.similarity else w))
        return np.vstack(rows)

    def inverse_transform(self, X):
        return [unflatten(row) for row in np.atleast_2d(X)]
