import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mechspace.errors import EmptyInputError, SingularityError
from mechspace.extract import (Scaler, build_descriptor_set, fit_local_descriptor, ridge_fit, ridge_fit_batched)
from mechspace.io import read_descriptors, write_descriptors
from mechspace.systems import BurgersConfig, simulate_burgers, strong_switch_schedule
from mechspace.windows import Fragment, extract_fragments


def test_ridge_identity_closed_form():
    theta = ridge_fit(np.eye(2), np.array([1.0, 2.0]), 1.0)
    np.testing.assert_allclose(theta, [0.5, 1.0], rtol=0, atol=1e-15)


def test_ridge_shrinkage_limit(rng):
    X = rng.standard_normal((20, 5))
    y = rng.standard_normal(20)
    theta = ridge_fit(X, y, 1e12)
    assert np.linalg.norm(theta) <= 1e-6 * np.linalg.norm(X.T @ y)


def test_ridge_matches_dense_oracle(rng):
    X = rng.standard_normal((20, 5))
    y = rng.standard_normal(20)
    oracle = np.linalg.solve(X.T @ X + 1e-3 * np.eye(5), X.T @ y)
    theta = ridge_fit(X, y, 1e-3)
    assert np.linalg.norm(theta - oracle) <= 1e-8 * np.linalg.norm(oracle)


def test_ridge_rank_deficient_without_penalty():
    X = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
    with pytest.raises(SingularityError):
        ridge_fit(X, np.ones(3), 0.0)


def test_ridge_batched_matches_single(rng):
    X = rng.standard_normal((4, 12, 3))
    y = rng.standard_normal((4, 12))
    thetas, _ = ridge_fit_batched(X, y, 1e-2)
    for b in range(4):
        np.testing.assert_allclose(thetas[b], ridge_fit(X[b], y[b], 1e-2), rtol=1e-10, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_ridge_column_permutation_equivariant(seed):
    r = np.random.default_rng(seed)
    X = r.standard_normal((15, 4))
    y = r.standard_normal(15)
    perm = r.permutation(4)
    np.testing.assert_allclose(ridge_fit(X[:, perm], y, 1e-2), ridge_fit(X, y, 1e-2)[perm], rtol=1e-9, atol=1e-12)


def _frag(inputs, target, loc=0, t=0):
    return Fragment(np.asarray(inputs, dtype=float), float(target), loc, t)


def test_descriptor_recovers_linear_rule(rng):
    a = rng.standard_normal(6)
    frags = []
    for i in range(30):
        w = rng.standard_normal((2, 3))
        frags.append(_frag(w, a @ w.ravel(), loc=i))
    d = fit_local_descriptor(frags, 0.0, Scaler())
    np.testing.assert_allclose(d.theta, np.append(a, 0.0), rtol=0, atol=1e-8)
    assert d.fit_residual < 1e-8


def test_descriptor_single_fragment_is_finite():
    d = fit_local_descriptor([_frag([[1.0, 2.0, 3.0]], 4.0)], 1.0, Scaler())
    assert np.all(np.isfinite(d.theta)) and d.theta.shape == (4,)


def test_descriptor_zero_targets(rng):
    frags = [_frag(rng.standard_normal((2, 3)), 0.0, loc=i) for i in range(5)]
    d = fit_local_descriptor(frags, 0.5, Scaler())
    assert np.all(d.theta == 0.0)


def test_descriptor_empty_neighbourhood():
    with pytest.raises(EmptyInputError):
        fit_local_descriptor([], 1.0)
    with pytest.raises(EmptyInputError):
        build_descriptor_set([], 5)


@pytest.fixture(scope="module")
def switching_fragments():
    cfg = BurgersConfig(grid_points=32, steps=60, regime_schedule=strong_switch_schedule(60), init_seed=7)
    traj = simulate_burgers(cfg)
    return extract_fragments(traj, spatial_width=5, time_depth=2, lead=1, spatial_stride=2, time_stride=2)


def test_descriptor_set_shape(switching_fragments):
    ds = build_descriptor_set(switching_fragments, 25, grid_points=32)
    assert len(ds) == len(switching_fragments)
    assert ds.dim == 11
    assert np.array_equal(ds.locations, [f.location for f in switching_fragments])


def test_neighbourhood_of_one_is_per_fragment_fit(switching_fragments):
    frags = switching_fragments[:6]
    scaler = Scaler.fit(frags)
    ds = build_descriptor_set(frags, 1, lam=0.1, scaler=scaler)
    for i, f in enumerate(frags):
        np.testing.assert_allclose(ds.thetas[i], fit_local_descriptor([f], 0.1, scaler).theta, rtol=1e-10, atol=1e-12)


def test_two_regime_descriptors_separate(switching_fragments):
    ds = build_descriptor_set(switching_fragments, 25, grid_points=32)
    X, lab = ds.thetas, ds.regimes
    D = np.linalg.norm(X[:, None] - X[None], axis=-1)
    same = lab[:, None] == lab[None]
    off = ~np.eye(len(X), dtype=bool)
    assert D[~same].mean() > D[same & off].mean()


def test_descriptor_time_shift_invariance(switching_fragments):
    frags = [f for f in switching_fragments if f.regime == 0]
    shifted = [Fragment(f.inputs, f.target, f.location, f.t_index + 50, f.regime) for f in frags]
    scaler = Scaler.fit(frags)
    a = build_descriptor_set(frags, 9, scaler=scaler, grid_points=32)
    b = build_descriptor_set(shifted, 9, scaler=scaler, grid_points=32)
    np.testing.assert_allclose(a.thetas, b.thetas, rtol=0, atol=1e-6)


def test_descriptor_file_round_trip(switching_fragments, tmp_path):
    ds = build_descriptor_set(switching_fragments[:40], 5, grid_points=32)
    write_descriptors(ds, tmp_path / "d.csv")
    back = read_descriptors(tmp_path / "d.csv")
    assert np.array_equal(back.thetas, ds.thetas)
    assert np.array_equal(back.locations, ds.locations)
    header = next(l for l in (tmp_path / "d.csv").read_text().splitlines() if not l.startswith("#"))
    assert header.startswith("anchor_loc,anchor_t,regime,residual,theta_0")
