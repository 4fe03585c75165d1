import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xgml.exceptions import EmptyGroup, TooFewEdges, UnknownRegion, WidthMismatch
from xgml.importance import (
    build_report,
    cross_score_frequency,
    edge_rng,
    group_edge_means,
    holdout_permutation_importance,
    permutation_importance,
    region_contributions,
    top_k_edges,
    write_report,
)
from xgml.ingest import YEO_NETWORKS, AtlasEntry, AtlasTable
from xgml.model import MultiOutputSVR, SvrHyperParams, pearson_r


def _data(n=40, p=10, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    Y = np.column_stack([2 * X[:, 2] + 0.2 * rng.normal(size=n), X[:, 3] - X[:, 5] + 0.2 * rng.normal(size=n)])
    return X, Y


PARAMS = [SvrHyperParams(10.0, 0.05, 0.05), SvrHyperParams(10.0, 0.05, 0.05)]


@pytest.fixture(scope="module")
def fitted():
    X, Y = _data()
    return X, Y, MultiOutputSVR(params=PARAMS).fit(X, Y)


def test_constant_column_drop_is_exactly_zero():
    X, Y = _data()
    X[:, 4] = 3.25
    X[:, 7] = 3.25
    m = MultiOutputSVR(params=PARAMS).fit(X, Y)
    res = permutation_importance(m, X, Y, repeats=10, seed=1)
    assert np.all(res.mean_drop[[4, 7]] == 0.0) and np.all(res.std_drop[[4, 7]] == 0.0)


def test_signal_columns_rank_first(fitted):
    X, Y, m = fitted
    res = permutation_importance(m, X, Y, repeats=10, seed=0)
    assert top_k_edges(res.mean_drop[:, 0], 1) == [2]
    assert set(top_k_edges(res.mean_drop[:, 1], 2)) == {3, 5}


def test_baseline_matches_model_predictions(fitted):
    X, Y, m = fitted
    res = permutation_importance(m, X, Y, repeats=2)
    pred = m.predict(X)
    for o in range(2):
        assert res.baseline_r[o] == pytest.approx(pearson_r(Y[:, o], pred[:, o]), abs=1e-12)


def test_matches_brute_force_shuffling(fitted):
    X, Y, m = fitted
    res = permutation_importance(m, X, Y, repeats=3, seed=5)
    base = pearson_r(Y[:, 0], m.predict(X)[:, 0])
    rng = edge_rng(5, 2)
    drops = []
    for _ in range(3):
        Xp = X.copy()
        Xp[:, 2] = X[rng.permutation(len(X)), 2]
        drops.append(base - pearson_r(Y[:, 0], m.predict(Xp)[:, 0]))
    assert res.mean_drop[2, 0] == pytest.approx(np.mean(drops), abs=1e-10)


def test_no_state_leaks_between_columns(fitted):
    X, Y, m = fitted
    X0 = X.copy()
    before = m.predict(X)
    permutation_importance(m, X, Y, repeats=3)
    assert np.array_equal(X, X0)
    assert np.array_equal(m.predict(X), before)


@given(st.permutations(list(range(10))))
@settings(max_examples=10, deadline=None)
def test_evaluation_order_invariance(order):
    X, Y = _data()
    m = MultiOutputSVR(params=PARAMS).fit(X, Y)
    a = permutation_importance(m, X, Y, repeats=4, seed=9)
    b = permutation_importance(m, X, Y, repeats=4, seed=9, edges=order)
    assert np.array_equal(a.mean_drop, b.mean_drop)
    assert np.array_equal(a.std_drop, b.std_drop)


def test_more_repeats_reduce_spread_of_the_estimate(fitted):
    # the mean over 20 shuffles varies less across master seeds than a single shuffle
    X, Y, m = fitted
    one = [permutation_importance(m, X, Y, repeats=1, seed=s, edges=[2]).mean_drop[2, 0] for s in range(12)]
    many = [permutation_importance(m, X, Y, repeats=20, seed=s, edges=[2]).mean_drop[2, 0] for s in range(12)]
    assert np.std(many) < np.std(one)


def test_reruns_are_identical(fitted):
    X, Y, m = fitted
    a = permutation_importance(m, X, Y, repeats=5, seed=3)
    b = permutation_importance(m, X, Y, repeats=5, seed=3)
    assert top_k_edges(a.mean_drop[:, 0], 5) == top_k_edges(b.mean_drop[:, 0], 5)
    assert a.mean_drop.tobytes() == b.mean_drop.tobytes()


def test_width_mismatch(fitted):
    X, Y, m = fitted
    with pytest.raises(WidthMismatch):
        permutation_importance(m, X[:, :5], Y)


def test_holdout_mode_finds_signal():
    X, Y = _data(n=25, p=6)
    res = holdout_permutation_importance(X, Y[:, :1], PARAMS[:1], repeats=5, seed=0)
    assert res.mode == "holdout"
    X[:, 4] = 1.0
    res = holdout_permutation_importance(X, Y[:, :1], PARAMS[:1], repeats=5, seed=0)
    assert np.all(res.mean_drop[4] == 0.0)
    assert top_k_edges(res.mean_drop[:, 0], 1) == [2]


def test_top_k_examples():
    assert top_k_edges([0.5, 0.2, 0.9], 2) == [2, 0]
    assert top_k_edges([0.3, 0.7, 0.7, 0.1], 2) == [1, 2]
    drops = np.random.default_rng(0).normal(size=19_900)
    top = top_k_edges(drops, 10)
    assert len(set(top)) == 10
    with pytest.raises(TooFewEdges):
        top_k_edges([0.1, np.nan], 2)


def test_region_contributions():
    assert region_contributions([("A", "B")], [0.4]) == {"A": 0.5, "B": 0.5}
    star = region_contributions([("H", "x"), ("H", "y"), ("H", "z")], [0.1, 0.1, 0.2])
    assert star["H"] == pytest.approx(0.5)
    assert region_contributions([("A", "B"), ("C", "D")], [0.3, 0.0]) == {"A": 0.5, "B": 0.5}
    with pytest.raises(TooFewEdges):
        region_contributions([], [])


@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8), st.floats(0, 5)), min_size=1, max_size=10))
@settings(max_examples=80, deadline=None)
def test_region_contributions_sum_to_one(items):
    edges = [(a, b) for a, b, _ in items if a != b]
    drops = [d for a, b, d in items if a != b]
    if not edges:
        return
    out = region_contributions(edges, drops)
    if any(d > 0 for d in drops):
        assert sum(out.values()) == pytest.approx(1.0, abs=1e-9)
    else:
        assert out == {}


def _table(networks):
    return AtlasTable([AtlasEntry(i + 1, f"r{i + 1}", "L", n) for i, n in enumerate(networks)])


def test_yeo_distribution():
    from xgml.importance import yeo_distribution

    table = _table(["DefaultMode"] * 20)
    edges = [(i, i + 1) for i in range(1, 11)]
    counts = yeo_distribution(edges, table)
    assert list(counts) == list(YEO_NETWORKS)
    assert counts["DefaultMode"] == 20 and sum(counts.values()) == 20

    rng = np.random.default_rng(4)
    nets = [YEO_NETWORKS[i] for i in rng.integers(0, 7, size=30)]
    table = _table(nets)
    edges = [tuple(rng.choice(np.arange(1, 31), 2, replace=False)) for _ in range(10)]
    tally = Counter(nets[r - 1] for e in edges for r in e)
    assert yeo_distribution(edges, table) == {n: tally.get(n, 0) for n in YEO_NETWORKS}
    with pytest.raises(UnknownRegion):
        yeo_distribution([(1, 99)], table)


def test_group_edge_means():
    F = np.array([[0.2], [0.4], [0.6]])
    assert group_edge_means([0], F, ["CN", "CN", "AD"]) == [(pytest.approx(0.3), 0.6)]
    same = np.array([[1.0], [2.0], [1.0], [2.0]])
    (cn, ad), = group_edge_means([0], same, ["CN", "CN", "AD", "AD"])
    assert cn == ad
    with pytest.raises(EmptyGroup):
        group_edge_means([0], F, ["CN", "MCI", "MCI"])


def test_cross_score_frequency():
    same = {f"o{i}": list(range(10)) for i in range(8)}
    edges, counts, inc = cross_score_frequency(same)
    assert edges == list(range(10)) and np.all(counts == 8) and inc.all()
    disjoint = {f"o{i}": list(range(10 * i, 10 * i + 10)) for i in range(8)}
    edges, counts, _ = cross_score_frequency(disjoint)
    assert len(edges) == 80 and np.all(counts == 1)
    rng = np.random.default_rng(0)
    lists = {f"o{i}": [777] + rng.choice(500, 9, replace=False).tolist() for i in range(8)}
    edges, counts, _ = cross_score_frequency(lists)
    assert edges[0] == 777 and counts[0] == 8


def test_report_files(tmp_path, fitted):
    X5 = np.random.default_rng(1).normal(size=(30, 10))  # k = 5 regions
    Y = np.column_stack([X5[:, 0], X5[:, 3]])
    m = MultiOutputSVR(params=PARAMS).fit(X5, Y)
    res = permutation_importance(m, X5, Y, repeats=3)
    table = _table(["Visual", "Limbic", "DefaultMode", "Visual", "Somatomotor"])
    groups = ["CN"] * 15 + ["AD"] * 15
    rep = build_report(res, ["a", "b"], [1, 2, 3, 4, 5], X5, groups, table, k=3)
    write_report(rep, tmp_path, ["a", "b"], table)
    back = json.loads((tmp_path / "importance_report.json").read_text())
    assert len(back["outcomes"]["a"]["top10"]) == 3
    assert sum(back["outcomes"]["a"]["yeo_tally"].values()) == 6
    header = (tmp_path / "cross_score.csv").read_text().splitlines()[0]
    assert header == "i,j,a,b"
    assert (tmp_path / "chord.csv").exists() and (tmp_path / "top_edges_bar.csv").exists()
