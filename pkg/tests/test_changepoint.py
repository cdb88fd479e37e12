import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cshap.changepoint import (
    CpdParams,
    grid_edges,
    median_heuristic,
    pelt,
    penalized_objective,
    rbf_segment_cost,
    segment_cost_table,
    segments_from_changepoints,
)
from cshap.verify import optimal_partition


def test_rbf_cost_two_points():
    # 2 - (2 + 2 e^{-1/2}) / 2
    assert rbf_segment_cost(np.array([0.0, 1.0]), 0, 2, 1.0) == pytest.approx(1 - math.exp(-0.5), abs=1e-15)
    assert rbf_segment_cost(np.array([3.0]), 0, 1, 1.0) == 0.0
    assert rbf_segment_cost(np.full(7, 2.5), 0, 7, 0.3) == pytest.approx(0.0, abs=1e-12)


def test_rbf_cost_rejects_bad_segment():
    with pytest.raises(ValueError):
        rbf_segment_cost(np.zeros(5), 3, 3, 1.0)


def test_params_validation():
    with pytest.raises(ValueError):
        CpdParams(subsample=0)
    with pytest.raises(ValueError):
        CpdParams(kernel_bandwidth="silverman")
    with pytest.raises(ValueError):
        CpdParams(kernel_bandwidth=-1.0)
    assert CpdParams().min_size == 80


def test_median_heuristic():
    assert median_heuristic([0.0, 1.0, 3.0]) == 2.0  # distances 1, 3, 2
    assert median_heuristic(np.ones(10)) == 1.0
    assert median_heuristic([5.0]) == 1.0
    assert median_heuristic(np.arange(10.0), subsample=3) == 4.5  # points 0 3 6 9: distances 3,3,3,6,6,9


def test_grid_edges():
    assert grid_edges(10, 4).tolist() == [0, 4, 8, 10]
    assert grid_edges(8, 4).tolist() == [0, 4, 8]


def test_block_cost_matches_direct():
    rng = np.random.default_rng(1)
    x = rng.normal(size=97)
    p = CpdParams(subsample=7)
    edges, cost = segment_cost_table(x, p, bandwidth=0.8)
    for i, j in [(0, 1), (0, len(edges) - 1), (3, 9), (5, 6)]:
        assert cost(i, j) == pytest.approx(rbf_segment_cost(x, edges[i], edges[j], 0.8), abs=1e-10)


def test_short_signal_has_no_changepoints():
    assert len(pelt(np.arange(79.0), CpdParams())) == 0


def test_step_signal_recovered():
    rng = np.random.default_rng(0)
    x = np.concatenate([np.zeros(300), np.full(250, 6.0), np.full(310, -1.0)]) + rng.normal(size=860)
    cps = pelt(x, CpdParams())
    assert len(cps) == 2
    assert abs(cps[0] - 300) <= 40 and abs(cps[1] - 550) <= 40


def test_pelt_matches_exhaustive_frozen_case():
    rng = np.random.default_rng(7)
    x = np.concatenate([rng.normal(0, 1, 60), rng.normal(4, 1, 45)])
    p = CpdParams(subsample=3, penalty=5.0)
    best, cps = optimal_partition(x, p)
    got = pelt(x, p)
    assert got.tolist() == cps
    assert penalized_objective(x, got, p) == pytest.approx(best, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(8, 40), st.floats(0.1, 30.0),
       st.integers(1, 3))
def test_pelt_is_exact(seed, sub, m, pen, mseg):
    rng = np.random.default_rng(seed)
    n = sub * m + int(rng.integers(0, sub))
    x = np.repeat(rng.normal(0, 3, size=3), n // 3 + 1)[:n] + rng.normal(size=n)
    p = CpdParams(subsample=sub, penalty=pen, min_segment_length=mseg)
    best, _ = optimal_partition(x, p)
    cps = pelt(x, p)
    assert np.all(np.diff(cps) > 0)
    assert np.all(cps % sub == 0)
    assert penalized_objective(x, cps, p) == pytest.approx(best, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.5, 10.0), st.floats(1.01, 5.0))
def test_more_penalty_never_adds_changepoints(seed, pen, factor):
    rng = np.random.default_rng(seed)
    x = np.repeat(rng.normal(0, 2, size=4), 30) + rng.normal(size=120)
    lo = pelt(x, CpdParams(subsample=2, penalty=pen, kernel_bandwidth=1.0))
    hi = pelt(x, CpdParams(subsample=2, penalty=pen * factor, kernel_bandwidth=1.0))
    assert len(hi) <= len(lo)


def test_pelt_deterministic():
    x = np.random.default_rng(3).normal(size=500)
    assert np.array_equal(pelt(x, CpdParams(subsample=10)), pelt(x.copy(), CpdParams(subsample=10)))


def test_segments_from_changepoints():
    assert segments_from_changepoints([3, 7], 10) == [(0, 3), (3, 7), (7, 10)]
    assert segments_from_changepoints([], 4) == [(0, 4)]
