import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_dtw, warping_paths
from xgml.density import kde_curve
from xgml.dtw import DtwConfig, dtw_distance, pairwise_distances
from xgml.exceptions import EmptySequence, NonFiniteValue, PairError

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
seqs = st.lists(finite, min_size=1, max_size=12)
SQUARED = DtwConfig("squared_difference")


def test_path_enumeration_counts():
    # Delannoy numbers count monotone lattice paths with diagonal steps
    assert len(warping_paths(3, 3)) == 13
    assert len(warping_paths(4, 4)) == 63
    assert len(warping_paths(1, 5)) == 1


def test_identical_is_zero():
    assert dtw_distance([0.2, 0.5, 0.3], [0.2, 0.5, 0.3]) == 0.0


def test_repeated_element_warps_for_free():
    a, b = [1, 2, 3], [1, 2, 2, 3]
    assert brute_force_dtw(a, b) == 0.0
    assert dtw_distance(a, b) == 0.0


def test_single_cell():
    assert dtw_distance([0], [5]) == 5.0
    assert dtw_distance([0], [5], SQUARED) == 25.0


@pytest.mark.parametrize("squared", [False, True])
def test_matches_enumeration_on_random_short_pairs(squared):
    rng = np.random.default_rng(7)
    cfg = SQUARED if squared else DtwConfig()
    for _ in range(60):
        a = rng.normal(size=rng.integers(1, 6))
        b = rng.normal(size=rng.integers(1, 6))
        assert dtw_distance(a, b, cfg) == brute_force_dtw(a, b, squared)


def test_errors():
    with pytest.raises(EmptySequence):
        dtw_distance([], [1.0])
    with pytest.raises(NonFiniteValue):
        dtw_distance([1.0, math.nan], [1.0])
    with pytest.raises(ValueError):
        DtwConfig("cosine")


@given(seqs, seqs)
@settings(max_examples=200, deadline=None)
def test_symmetric_nonnegative(a, b):
    for cfg in (DtwConfig(), SQUARED):
        d = dtw_distance(a, b, cfg)
        assert d >= 0
        assert d == dtw_distance(b, a, cfg)


@given(seqs)
@settings(max_examples=100, deadline=None)
def test_self_distance_zero(a):
    assert dtw_distance(a, a) == 0.0


def _curves(rng, k, lengths=(70, 120)):
    return [kde_curve(rng.normal(size=rng.integers(*lengths)), 0.3, region_id=r + 1) for r in range(k)]


def test_pairwise_matches_scalar_calls():
    rng = np.random.default_rng(3)
    curves = _curves(rng, 6)
    g = pairwise_distances(curves, threads=2)
    assert np.array_equal(g.weights, g.weights.T)
    assert np.all(np.diag(g.weights) == 0)
    for i in range(6):
        for j in range(i + 1, 6):
            assert g.weights[i, j] == dtw_distance(curves[i].pdf, curves[j].pdf)
    assert g.region_ids == [1, 2, 3, 4, 5, 6]


def test_pairwise_identical_curves_zero():
    rng = np.random.default_rng(0)
    c = _curves(rng, 1)[0]
    g = pairwise_distances([c, c, c])
    assert np.all(g.weights == 0)


def test_thread_count_does_not_change_result(monkeypatch):
    rng = np.random.default_rng(5)
    curves = _curves(rng, 5)
    one = pairwise_distances(curves, threads=1).weights
    monkeypatch.setenv("XGML_THREADS", "3")
    env = pairwise_distances(curves).weights
    assert np.array_equal(one, env)


def test_pair_error_names_region():
    rng = np.random.default_rng(1)
    curves = _curves(rng, 2)
    curves[1].pdf = np.array([])
    with pytest.raises(PairError) as info:
        pairwise_distances(curves)
    assert info.value.pair[0] == curves[1].region_id
