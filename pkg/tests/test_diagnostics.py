import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mechspace.diagnostics import (SweepCurve, coverability_sweep, geometry_report, knn_purity,
                                   neighbor_random_ratio, quartile_labels, rollout_drift, theta_drift,
                                   theta_nondegeneracy)
from mechspace.errors import ConfigurationError, DegenerateSetError, EmptyInputError


def test_theta_std_hand_values(rng):
    assert theta_nondegeneracy(np.array([[0.0], [2.0]])) == pytest.approx(np.sqrt(2.0), rel=1e-15)
    assert theta_nondegeneracy(np.ones((5, 3))) == 0.0
    X = rng.standard_normal((20, 4))
    assert theta_nondegeneracy(X + 7.0) == pytest.approx(theta_nondegeneracy(X), rel=1e-12)
    with pytest.raises(EmptyInputError):
        theta_nondegeneracy(np.ones((1, 3)))


def test_ratio_on_a_line():
    d = 0.25
    X = np.zeros((100, 3))
    X[:, 0] = d * np.arange(100)
    near, rand, ratio = neighbor_random_ratio(X, 10_000, seed=0)
    assert near == pytest.approx(d, rel=1e-12)
    assert 0.02 <= ratio <= 0.04


def test_ratio_of_shuffled_sequence(rng):
    X = rng.standard_normal((500, 4))
    _, _, ratio = neighbor_random_ratio(X, 10_000, seed=1)
    assert 0.9 <= ratio <= 1.1


def test_ratio_of_shuffled_sequence_frequency():
    X = np.cumsum(np.random.default_rng(0).standard_normal((500, 3)), axis=0)
    hits = 0
    for trial in range(100):
        perm = np.random.default_rng(trial).permutation(500)
        hits += 0.9 <= neighbor_random_ratio(X[perm], 10_000, seed=trial)[2] <= 1.1
    assert hits >= 95


def test_ratio_two_points_and_degenerate():
    near, rand, ratio = neighbor_random_ratio(np.array([[0.0, 0.0], [3.0, 4.0]]), 50)
    assert (near, rand, ratio) == (5.0, 5.0, 1.0)
    with pytest.raises(DegenerateSetError):
        neighbor_random_ratio(np.ones((10, 2)))


def test_knn_purity_cases():
    X = np.arange(20, dtype=float)[:, None]
    assert knn_purity(X, np.zeros(20, dtype=int), k=3) == 1.0
    assert knn_purity(X, np.arange(20) % 2, k=1) == 0.0
    with pytest.raises(ConfigurationError):
        knn_purity(X, np.zeros(20, dtype=int), k=20)


def test_knn_purity_random_labels(rng):
    X = rng.standard_normal((2000, 3))
    labels = rng.integers(0, 2, 2000)
    assert 0.46 <= knn_purity(X, labels, k=5) <= 0.54


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_diagnostics_invariant_under_isometry(seed):
    r = np.random.default_rng(seed)
    X = r.standard_normal((40, 3))
    Q, _ = np.linalg.qr(r.standard_normal((3, 3)))
    Y = X @ Q.T + r.standard_normal(3)
    labels = r.integers(0, 3, 40)
    assert theta_drift(Y) == pytest.approx(theta_drift(X), rel=1e-10)
    assert neighbor_random_ratio(Y, 500, 2)[2] == pytest.approx(neighbor_random_ratio(X, 500, 2)[2], rel=1e-10)
    assert knn_purity(Y, labels, 4) == knn_purity(X, labels, 4)
    assert 0.0 <= knn_purity(X, labels, 4) <= 1.0


def test_drift_cases():
    assert theta_drift(np.ones((6, 2))) == 0.0
    a, b = np.array([0.0, 0.0]), np.array([3.0, 4.0])
    assert theta_drift(np.array([a, b] * 5)) == pytest.approx(5.0, rel=1e-15)
    seqs = np.array([[a, b, a], [a, a, np.array([np.nan, np.nan])]])
    assert rollout_drift(seqs) == pytest.approx((5.0 + 0.0) / 2)


def test_quartile_labels(rng):
    labels = quartile_labels(rng.standard_normal(400))
    assert set(np.bincount(labels)) == {100}


def test_geometry_report_rows(rng):
    X = rng.standard_normal((50, 3))
    rep = geometry_report(X, {"regime": np.arange(50) % 2}, k=5, num_random_pairs=100)
    names = [n for n, _ in rep.rows()]
    assert names[:4] == ["theta_std", "neighbor_mean_dist", "random_mean_dist", "neighbor_random_ratio"]
    assert "knn_purity.regime" in names and rep.sample_count == 50


def test_sweep_single_k_and_reproducible():
    calls = lambda K, s: 1.0 / K + s
    one = coverability_sweep(calls, [64], [0, 1], descriptor_count=100)
    assert one.values.shape == (2, 1)
    a = coverability_sweep(calls, [32, 64, 128], [0, 1], descriptor_count=200)
    b = coverability_sweep(calls, [32, 64, 128], [0, 1], descriptor_count=200)
    assert np.array_equal(a.values, b.values)
    assert a.best_K() == [128, 128] and a.interior_count() == 0
    with pytest.raises(ConfigurationError):
        coverability_sweep(calls, [32, 512], [0], descriptor_count=100)


def test_sweep_curve_interior():
    c = SweepCurve([32, 64, 128], [0, 1, 2], [[3, 1, 2], [1, 2, 3], [2, 0.5, 0.7]])
    assert c.best_K() == [64, 32, 64] and c.interior_count() == 2
    assert len(c.long_rows()) == 9
