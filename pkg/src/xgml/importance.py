"""Permutation edge importance and subgraph summaries."""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from ._validation import check_features
from .exceptions import EmptyGroup, TooFewEdges, UnknownRegion, WidthMismatch
from .graph import edge_index, k_from_edges
from .ingest import YEO_NETWORKS
from .model import Standardizer, canonical_order, solve_svr_dual

TOP_K = 10


@dataclass
class EdgeImportance:
    edge: tuple[int, int]
    index: int
    per_outcome_drop: np.ndarray
    std_drop: np.ndarray


@dataclass
class ImportanceResult:
    """Mean and std of the Pearson-r drop, shape ``(n_edges, n_outcomes)``."""

    mean_drop: np.ndarray
    std_drop: np.ndarray
    baseline_r: np.ndarray
    repeats: int
    seed: int
    mode: str = "in_sample"

    @property
    def n_edges(self) -> int:
        return self.mean_drop.shape[0]

    def edges(self) -> list[EdgeImportance]:
        k = k_from_edges(self.n_edges)
        rows, cols = edge_index(k)
        return [
            EdgeImportance((int(rows[p]), int(cols[p])), p, self.mean_drop[p], self.std_drop[p])
            for p in range(self.n_edges)
        ]


def edge_rng(seed: int, edge: int) -> np.random.Generator:
    """Independent stream per (seed, edge) so evaluation order never matters."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(edge)]))


def _permutations(seed, edge, n, repeats):
    rng = edge_rng(seed, edge)
    return np.stack([rng.permutation(n) for _ in range(repeats)])


def _rows_r(Y, P):
    # Pearson r of y against each row of P, 0 where a row is constant
    yc = Y - Y.mean()
    Pc = P - P.mean(axis=1, keepdims=True)
    # row-wise sums rather than a matmul: the result must not depend on the row count
    num = (Pc * yc).sum(axis=1)
    den = np.sqrt((Pc * Pc).sum(axis=1) * (yc * yc).sum())
    out = np.zeros(P.shape[0])
    ok = den > 0
    out[ok] = np.clip(num[ok] / den[ok], -1.0, 1.0)
    return out


def permutation_importance(model, X, Y, repeats=20, seed=42, edges=None) -> ImportanceResult:
    """In-sample permutation importance of every feature column for every outcome.

    Each column is shuffled ``repeats`` times (other columns untouched) and the
    drop ``baseline_r - permuted_r`` is averaged.  Squared distances to the
    support vectors are updated one coordinate at a time, so an unchanged
    column gives a drop of exactly 0.
    """
    X = check_features(X)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[1] != model.n_features_in_:
        raise WidthMismatch(f"model expects {model.n_features_in_} features, got {X.shape[1]}")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    n, p = X.shape
    Xs = model.standardizer_.transform(X)
    n_out = len(model.estimators_)
    parts = []
    for est in model.estimators_:
        sv = est.support_vectors_
        d2 = cdist(Xs, sv, "sqeuclidean") if sv.size else np.zeros((n, 0))
        parts.append((sv, d2, est.dual_coef_, est.intercept_, est.gamma_))
    base_pred = [np.exp(-g * d2) @ c + b for sv, d2, c, b, g in parts]
    # same formula as the permuted scores so an unchanged column drops by exactly 0
    baseline = np.array([_rows_r(Y[:, o], base_pred[o][None])[0] for o in range(n_out)])
    edges = range(p) if edges is None else edges
    mean = np.zeros((p, n_out))
    std = np.zeros((p, n_out))
    for f in edges:
        perms = _permutations(seed, f, n, repeats)
        col = Xs[:, f]
        xp = col[perms]  # (R, n)
        # shuffles that leave the column as it was reuse the baseline exactly
        unchanged = np.all(xp == col[None, :], axis=1)
        for o, (sv, d2, c, b, g) in enumerate(parts):
            if sv.size == 0:
                continue
            svf = sv[:, f]
            old = (col[:, None] - svf[None, :]) ** 2
            new = (xp[:, :, None] - svf[None, None, :]) ** 2
            pred = np.exp(-g * (d2[None] + (new - old[None]))) @ c + b
            pred[unchanged] = base_pred[o]
            drops = baseline[o] - _rows_r(Y[:, o], pred)
            mean[f, o] = drops.mean()
            std[f, o] = drops.std()
    return ImportanceResult(mean, std, baseline, repeats, seed, "in_sample")


def holdout_permutation_importance(X, Y, params, repeats=20, seed=42, tol=1e-3, max_iter=100_000, edges=None) -> ImportanceResult:
    """Permutation importance on leave-one-out predictions.

    Subject ``i`` is predicted by the model trained without it, using its
    (permuted) feature row; the baseline is the LOOCV Pearson r.
    """
    X = check_features(X)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, p = X.shape
    n_out = Y.shape[1]
    folds = []
    for i in range(n):
        train = np.delete(np.arange(n), i)
        std = Standardizer().fit(X[train])
        Xtr = std.transform(X[train])
        order = canonical_order(Xtr)
        Xtr, tr_idx = Xtr[order], train[order]
        xi = std.transform(X[i : i + 1])[0]
        d_tr = cdist(Xtr, Xtr, "sqeuclidean")
        models = []
        for o in range(n_out):
            hp = params[o]
            sol = solve_svr_dual(np.exp(-hp.gamma * d_tr), Y[tr_idx, o], hp.c, hp.epsilon, tol, max_iter)
            sv = sol.coef != 0
            models.append((Xtr[sv], sol.coef[sv], sol.bias, hp.gamma))
        d2 = [((xi[None, :] - m[0]) ** 2).sum(axis=1) for m in models]
        folds.append((std, xi, models, d2))
    base_pred = np.array(
        [[np.exp(-m[3] * d2[o]) @ m[1] + m[2] for o, m in enumerate(models)] for _, _, models, d2 in folds]
    )
    baseline = np.array([_rows_r(Y[:, o], base_pred[None, :, o])[0] for o in range(n_out)])
    edges = range(p) if edges is None else edges
    mean = np.zeros((p, n_out))
    std_out = np.zeros((p, n_out))
    for f in edges:
        perms = _permutations(seed, f, n, repeats)
        unchanged = np.all(X[perms, f] == X[None, :, f], axis=1)
        pred = np.empty((repeats, n, n_out))
        for i, (std, xi, models, d2) in enumerate(folds):
            new_x = (X[perms[:, i], f] - std.mean_[f]) / std.scale_[f]  # (R,)
            for o, (sv, c, b, g) in enumerate(models):
                if sv.size == 0:
                    pred[:, i, o] = b
                    continue
                old = (xi[f] - sv[:, f]) ** 2
                new = (new_x[:, None] - sv[None, :, f]) ** 2
                pred[:, i, o] = np.exp(-g * (d2[o][None] + (new - old[None]))) @ c + b
        pred[unchanged] = base_pred
        for o in range(n_out):
            drops = baseline[o] - _rows_r(Y[:, o], pred[:, :, o])
            mean[f, o] = drops.mean()
            std_out[f, o] = drops.std()
    return ImportanceResult(mean, std_out, baseline, repeats, seed, "holdout")


def top_k_edges(drops, k=TOP_K) -> list[int]:
    """Indices of the ``k`` largest drops, descending; ties go to the lower index."""
    drops = np.asarray(drops, dtype=np.float64)
    finite = np.flatnonzero(np.isfinite(drops))
    if finite.size < k:
        raise TooFewEdges(f"need {k} edges with finite drops, have {finite.size}")
    order = finite[np.lexsort((finite, -drops[finite]))]
    return [int(i) for i in order[:k]]


def region_contributions(top_edges: Sequence[tuple[int, int]], drops: Sequence[float]) -> dict:
    """Per-region sum of incident top-edge drops, normalized to sum to 1.

    Negative drops count as zero; regions with zero score are left out.
    """
    if len(top_edges) == 0:
        raise TooFewEdges("no edges given")
    score = Counter()
    for (a, b), d in zip(top_edges, drops):
        d = max(float(d), 0.0)
        score[a] += d
        score[b] += d
    total = sum(score.values())
    if total <= 0:
        return {}
    return {r: s / total for r, s in sorted(score.items()) if s > 0}


def yeo_distribution(top_edges: Sequence[tuple], table) -> dict:
    """Endpoint counts per Yeo-7 network (two per edge), in canonical network order.

    Edge endpoints are atlas label ids.
    """
    lookup = {e.label_id: e.yeo_network for e in table}
    counts = dict.fromkeys(YEO_NETWORKS, 0)
    for edge in top_edges:
        for r in edge:
            if r not in lookup:
                raise UnknownRegion(f"region {r} is not in the atlas table")
            counts[lookup[r]] += 1
    return counts


def group_edge_means(edge_indices: Sequence[int], features, groups: Sequence[str]) -> list[tuple[float, float]]:
    """Mean raw edge weight over CN and over AD subjects, per edge feature index."""
    F = np.asarray(features, dtype=np.float64)
    groups = np.asarray(groups)
    cn, ad = groups == "CN", groups == "AD"
    if not cn.any() or not ad.any():
        raise EmptyGroup("need at least one CN and one AD subject")
    return [(float(F[cn, e].mean()), float(F[ad, e].mean())) for e in edge_indices]


def cross_score_frequency(top_lists: dict) -> tuple[list[int], np.ndarray, np.ndarray]:
    """Edges in any top list, ranked by how many outcomes list them.

    Returns ``(edges, counts, incidence)`` with incidence of shape
    ``(n_edges, n_outcomes)`` in the order of ``top_lists``.
    """
    names = list(top_lists)
    seen = sorted({e for lst in top_lists.values() for e in lst})
    inc = np.array([[e in set(top_lists[nm]) for nm in names] for e in seen], dtype=bool).reshape(len(seen), len(names))
    counts = inc.sum(axis=1)
    order = np.lexsort((np.array(seen), -counts)) if seen else np.array([], dtype=int)
    return [seen[i] for i in order], counts[order], inc[order]


# ---------------------------------------------------------------------------
# report


def build_report(result: ImportanceResult, outcome_names, region_ids, features=None, groups=None, table=None, k=TOP_K) -> dict:
    """Assemble the per-outcome JSON report and the cross-score table."""
    n_regions = len(region_ids)
    rows, cols = edge_index(n_regions)
    names = {e.label_id: e.region_name for e in table} if table is not None else {}
    report = {"mode": result.mode, "repeats": result.repeats, "seed": result.seed, "outcomes": {}}
    top_lists = {}
    have_groups = (
        features is not None and groups is not None and "CN" in set(groups) and "AD" in set(groups)
    )
    for o, name in enumerate(outcome_names):
        top = top_k_edges(result.mean_drop[:, o], k)
        top_lists[name] = top
        edges = [(region_ids[rows[e]], region_ids[cols[e]]) for e in top]
        means = group_edge_means(top, features, groups) if have_groups else [(None, None)] * len(top)
        entry = {
            "baseline_r": float(result.baseline_r[o]),
            "top10": [
                {
                    "feature": int(e),
                    "i": int(a),
                    "j": int(b),
                    "region_names": [names.get(a, str(a)), names.get(b, str(b))],
                    "mean_drop": float(result.mean_drop[e, o]),
                    "std_drop": float(result.std_drop[e, o]),
                    "cn_mean": cm,
                    "ad_mean": am,
                }
                for e, (a, b), (cm, am) in zip(top, edges, means)
            ],
            "region_contrib": {
                str(r): v for r, v in region_contributions(edges, result.mean_drop[top, o]).items()
            },
        }
        if table is not None:
            entry["yeo_tally"] = yeo_distribution(edges, table)
        report["outcomes"][name] = entry
    ranked, counts, inc = cross_score_frequency(top_lists)
    report["cross_score"] = [
        {
            "feature": int(e),
            "i": int(region_ids[rows[e]]),
            "j": int(region_ids[cols[e]]),
            "count": int(c),
            "outcomes": [nm for nm, hit in zip(outcome_names, row) if hit],
        }
        for e, c, row in zip(ranked, counts, inc)
    ]
    return report


def write_report(report: dict, out_dir, outcome_names, table=None) -> None:
    """``importance_report.json`` plus cross-score, bar-chart and chord CSVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "importance_report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    with open(out_dir / "cross_score.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", *outcome_names])
        for row in report["cross_score"]:
            w.writerow([row["i"], row["j"], *(int(nm in row["outcomes"]) for nm in outcome_names)])
    with open(out_dir / "top_edges_bar.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["outcome", "rank", "i", "j", "mean_drop", "cn_mean", "ad_mean"])
        for name in outcome_names:
            for rank, e in enumerate(report["outcomes"][name]["top10"], start=1):
                w.writerow([name, rank, e["i"], e["j"], repr(e["mean_drop"]), e["cn_mean"], e["ad_mean"]])
    if table is not None:
        lookup = {e.label_id: e.yeo_network for e in table}
        with open(out_dir / "chord.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["outcome", "network_i", "network_j", "weight"])
            for name in outcome_names:
                pairs = Counter()
                for e in report["outcomes"][name]["top10"]:
                    a, b = sorted((lookup[e["i"]], lookup[e["j"]]), key=YEO_NETWORKS.index)
                    pairs[(a, b)] += max(e["mean_drop"], 0.0)
                for (a, b), wgt in sorted(pairs.items()):
                    w.writerow([name, a, b, repr(wgt)])
