import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import pearson, rbf, reference_svr_dual
from xgml.exceptions import SolverStall, TooFewRows, WidthMismatch
from xgml.model import (
    EpsilonSVR,
    MultiOutputSVR,
    Standardizer,
    SvrHyperParams,
    dual_objective,
    fold_assignment,
    grid_search_5fold,
    loocv_evaluate,
    loocv_predictions,
    make_grid,
    pearson_r,
    solve_svr_dual,
)


# --- standardizer -------------------------------------------------------------


def test_two_value_column():
    s = Standardizer().fit([[1.0], [3.0]])
    assert s.mean_[0] == 2.0 and s.scale_[0] == 1.0


def test_constant_column_maps_to_zero():
    X = np.array([[1.0, 4.0], [2.0, 4.0], [3.0, 4.0]])
    Z = Standardizer().fit_transform(X)
    assert np.all(Z[:, 1] == 0.0)


def test_random_matrix_moments():
    X = np.random.default_rng(0).normal(3, 5, size=(10, 5))
    Z = Standardizer().fit_transform(X)
    assert np.all(np.abs(Z.mean(axis=0)) < 1e-12)
    assert np.all(np.abs(Z.std(axis=0) - 1) < 1e-9)


def test_standardizer_inverse_and_errors():
    X = np.random.default_rng(1).normal(size=(6, 3))
    s = Standardizer().fit(X)
    assert np.allclose(s.inverse_transform(s.transform(X)), X)
    with pytest.raises(TooFewRows):
        Standardizer().fit(X[:1])


# --- solver -------------------------------------------------------------------


def _instance(seed):
    rng = np.random.default_rng(seed)
    n, p = int(rng.integers(4, 13)), int(rng.integers(1, 5))
    X = rng.normal(size=(n, p))
    y = np.sin(X.sum(axis=1)) + 0.3 * rng.normal(size=n)
    C = float(rng.choice([0.1, 1.0, 10.0]))
    eps = float(rng.choice([0.01, 0.1, 0.3]))
    gamma = float(rng.choice([0.1, 0.5, 2.0]))
    return X, y, C, eps, gamma


@pytest.mark.parametrize("seed", range(10))
def test_matches_interior_point_reference(seed):
    X, y, C, eps, gamma = _instance(seed)
    K = rbf(X, X, gamma)
    sol = solve_svr_dual(K, y, C, eps, tol=1e-8)
    beta, obj, bias = reference_svr_dual(K, y, C, eps)
    assert abs(dual_objective(K, y, sol.coef, eps) - obj) < 1e-6
    assert np.max(np.abs((K @ sol.coef + sol.bias) - (K @ beta + bias))) < 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_dual_feasibility(seed):
    X, y, C, eps, gamma = _instance(seed)
    sol = solve_svr_dual(rbf(X, X, gamma), y, C, eps, tol=1e-8)
    assert np.all(np.abs(sol.coef) <= C + 1e-12)
    assert abs(sol.coef.sum()) < 1e-10


def test_noiseless_line():
    X = np.linspace(0, 1, 8)[:, None]
    y = 2 * X[:, 0] + 1
    m = EpsilonSVR(C=100, epsilon=0.01, gamma=0.5, tol=1e-8).fit(X, y)
    pred = m.predict(X)
    assert np.max(np.abs(pred - y)) < 0.05
    beta, obj, _ = reference_svr_dual(rbf(X, X, 0.5), y, 100, 0.01)
    assert abs(dual_objective(rbf(X, X, 0.5), y, np.zeros(8) + _full_coef(m, 8), 0.01) - obj) < 1e-6
    sv = m.support_[0]
    assert abs(m.predict(X[sv : sv + 1])[0] - y[sv]) < 0.01 + 0.05


def _full_coef(model, n):
    coef = np.zeros(n)
    coef[model.support_] = model.dual_coef_
    return coef


def test_wide_tube_has_no_support_vectors():
    X = np.arange(6.0)[:, None]
    y = np.array([1.0, 1.1, 0.9, 1.0, 1.05, 0.95])
    m = EpsilonSVR(C=1, epsilon=1.0, gamma=1.0).fit(X, y)
    assert m.dual_coef_.size == 0
    pred = m.predict(np.array([[-10.0], [2.5], [99.0]]))
    assert np.all(pred == pred[0])


def test_duplicate_queries_identical():
    X, y, C, eps, gamma = _instance(3)
    m = EpsilonSVR(C=C, epsilon=eps, gamma=gamma).fit(X, y)
    q = np.vstack([X[:1], X[:1]])
    p = m.predict(q)
    assert p[0] == p[1]


def test_objective_history_is_monotone():
    X, y, C, eps, gamma = _instance(4)
    m = EpsilonSVR(C=C, epsilon=eps, gamma=gamma, tol=1e-8, record_objective=True).fit(X, y)
    h = m.objective_history_
    assert len(h) > 1 and np.all(np.diff(h) >= -1e-12)


def test_stall_warning():
    X, y, C, eps, gamma = _instance(5)
    with pytest.warns(SolverStall):
        sol = solve_svr_dual(rbf(X, X, gamma), y, 10.0, 0.01, tol=1e-12, max_iter=1)
    assert sol.stalled


def test_width_mismatch():
    X, y, *_ = _instance(6)
    m = EpsilonSVR().fit(X, y)
    with pytest.raises(WidthMismatch):
        m.predict(np.ones((2, X.shape[1] + 1)))


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_fit_ignores_row_order(seed):
    X, y, C, eps, gamma = _instance(seed)
    perm = np.random.default_rng(seed + 1).permutation(len(y))
    a = EpsilonSVR(C=C, epsilon=eps, gamma=gamma).fit(X, y).predict(X)
    b = EpsilonSVR(C=C, epsilon=eps, gamma=gamma).fit(X[perm], y[perm]).predict(X)
    assert np.array_equal(a, b)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_box_and_equality_constraints(seed):
    X, y, C, eps, gamma = _instance(seed)
    sol = solve_svr_dual(rbf(X, X, gamma), y, C, eps)
    assert np.all(np.abs(sol.coef) <= C * (1 + 1e-12))
    assert abs(sol.coef.sum()) < 1e-9 * max(1.0, C)


# --- pearson -------------------------------------------------------------------


def test_pearson_matches_reference():
    rng = np.random.default_rng(7)
    a, b = rng.normal(size=30), rng.normal(size=30)
    assert pearson_r(a, b) == pytest.approx(pearson(a, b), abs=1e-14)
    assert pearson_r(a, a) == pytest.approx(1.0)
    assert pearson_r(a, np.ones(30)) == 0.0


@given(st.lists(st.floats(-100, 100), min_size=3, max_size=20), st.floats(0.1, 10), st.floats(-5, 5))
@settings(max_examples=60, deadline=None)
def test_pearson_affine_invariance_and_bounds(values, scale, shift):
    a = np.asarray(values)
    b = np.roll(a, 1) + np.arange(a.size)
    r = pearson_r(a, b)
    assert -1.0 <= r <= 1.0
    assert pearson_r(a * scale + shift, b) == pytest.approx(r, abs=1e-9)


# --- multi-output, grid search, LOOCV -----------------------------------------


def _cohort(n=30, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 6))
    Y = np.column_stack([X[:, 0] * 2 + 0.1 * rng.normal(size=n), rng.normal(size=n)])
    return X, Y


def test_multi_output_round_trip(tmp_path):
    X, Y = _cohort()
    params = [SvrHyperParams(10.0, 0.2, 0.1), SvrHyperParams(1.0, 0.1, 0.01)]
    m = MultiOutputSVR(params=params, outcome_names=["a", "b"]).fit(X, Y)
    m.save(tmp_path / "m.xgmlm", extra={"seed": 1})
    back = MultiOutputSVR.load(tmp_path / "m.xgmlm")
    assert np.array_equal(back.predict(X), m.predict(X))
    assert back.outcome_names_ == ["a", "b"] and back.extra_ == {"seed": 1}
    back.save(tmp_path / "n.xgmlm", extra={"seed": 1})
    assert (tmp_path / "n.xgmlm").read_bytes() == (tmp_path / "m.xgmlm").read_bytes()
    with pytest.raises(WidthMismatch):
        back.predict(X[:, :3])


def test_estimator_params():
    m = MultiOutputSVR(C=3.0)
    assert m.get_params()["C"] == 3.0
    assert m.set_params(epsilon=0.5).epsilon == 0.5


def test_grid_size_one():
    X, Y = _cohort(8)
    point = SvrHyperParams(1.0, 0.5, 0.1)
    res = grid_search_5fold(X, Y, grid=[point])
    assert res.best == [point, point]


def test_tie_break_prefers_smaller_c():
    X, Y = _cohort()
    # epsilon so large that every model is constant: all points score 0
    grid = [SvrHyperParams(10.0, 0.1, 100.0), SvrHyperParams(1.0, 0.1, 100.0)]
    res = grid_search_5fold(X, Y[:, :1], grid=grid)
    assert res.scores[0, 0] == res.scores[0, 1]
    assert res.best[0].c == 1.0


def test_grid_search_finds_signal():
    X, Y = _cohort(40)
    res = grid_search_5fold(X, Y, grid=make_grid(X))
    assert res.scores[0].max() > 0.8
    assert len(res.grid) == 36
    assert sorted(np.concatenate(res.folds).tolist()) == list(range(40))


def test_fold_assignment_deterministic():
    a = fold_assignment(23, 5, 42)
    b = fold_assignment(23, 5, 42)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert [len(f) for f in a] == [5, 5, 5, 4, 4]


def test_loocv_perfect_signal():
    X, Y = _cohort(20)
    rep = loocv_evaluate(X, Y[:, :1], [SvrHyperParams(100.0, 0.05, 0.01)], ["lin"])
    assert rep.per_outcome[0].pearson_r > 0.9


def test_loocv_invariant_to_subject_order():
    X, Y = _cohort(12, seed=3)
    params = [SvrHyperParams(10.0, 0.2, 0.05), SvrHyperParams(1.0, 0.5, 0.1)]
    perm = np.random.default_rng(9).permutation(12)
    a, _ = loocv_predictions(X, Y, params)
    b, _ = loocv_predictions(X[perm], Y[perm], params)
    assert np.array_equal(a[perm], b)


def test_eval_report_files(tmp_path):
    X, Y = _cohort(10)
    rep = loocv_evaluate(X, Y, [SvrHyperParams(1.0, 0.1, 0.1)] * 2, ["a", "b"], [f"s{i}" for i in range(10)])
    rep.write(tmp_path)
    assert (tmp_path / "eval_report.json").exists()
    rows = (tmp_path / "scatter_a.csv").read_text().splitlines()
    assert rows[0] == "subject_id,observed,predicted" and len(rows) == 11
