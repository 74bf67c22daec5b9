import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mechspace.errors import ConfigurationError, EmptyInputError
from mechspace.evaluation import (autoregressive_rollout, fixed_horizon_eval, horizon_rmse, paired_stats, rmse,
                                  rollout_errors, switching_metrics)
from mechspace.models import build_model
from mechspace.systems import Trajectory
from mechspace.windows import HistoryPair


def persistence(h, d):
    """Direct model whose output is exactly its last input row."""
    return build_model("Direct", {"h": h, "state_dim": d, "enc_widths": [4], "z_dim": 2, "pred_widths": [4],
                                  "residual": True, "zero_init_output": True})


def test_rmse_values(rng):
    assert rmse([3.0, 4.0], [0.0, 0.0]) == pytest.approx(np.sqrt(12.5), abs=1e-15)
    assert rmse([3.0, 4.0], [0.0, 0.0]) == pytest.approx(3.53553391, abs=1e-8)
    a, b = rng.standard_normal(6), rng.standard_normal(6)
    assert rmse(a, a) == 0.0
    assert rmse(-2.5 * a, -2.5 * b) == pytest.approx(2.5 * rmse(a, b), rel=1e-14)
    with pytest.raises(ConfigurationError):
        rmse(np.zeros(2), np.zeros(3))
    with pytest.raises(EmptyInputError):
        rmse([], [])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_rmse_triangle_inequality(seed):
    a, b, c = np.random.default_rng(seed).standard_normal((3, 7)) * 5
    assert rmse(a, c) <= rmse(a, b) + rmse(b, c) + 1e-12


def test_persistence_on_constant_trajectory():
    m = persistence(2, 3)
    truth = np.tile([1.0, -2.0, 0.5], (10, 1))
    res = autoregressive_rollout(m, truth[:2], 8, truth[2:])
    assert np.all(res.per_step_rmse == 0.0)


def test_persistence_on_ramp():
    h = 3
    m = persistence(h, 1)
    series = np.arange(30, dtype=float)[:, None]
    traj = Trajectory(series[h:], np.arange(30 - h, dtype=float))
    res = autoregressive_rollout(m, series[:h], 12, traj)
    # prediction stays at x_{h-1}, truth at step k is x_{h-1} + k
    np.testing.assert_allclose(res.per_step_rmse, np.arange(1, 13), rtol=0, atol=1e-12)
    assert res.diverged_at is None


def test_rollout_does_not_leak_truth(rng):
    m = build_model("Direct", {"h": 2, "state_dim": 3}, seed=1)
    hist = rng.standard_normal((2, 3))
    truth = rng.standard_normal((6, 3))
    a = autoregressive_rollout(m, hist, 6, truth)
    b = autoregressive_rollout(m, hist, 6, np.zeros_like(truth))
    assert np.array_equal(a.predicted, b.predicted)
    assert not np.array_equal(a.per_step_rmse, b.per_step_rmse)


def test_horizon_one_matches_fixed_horizon(rng):
    m = build_model("Direct", {"h": 2, "state_dim": 3}, seed=2)
    series = rng.standard_normal((40, 3))
    starts = np.arange(5, 30)
    pairs = [HistoryPair(series[t - 1:t + 1], series[t + 1], t) for t in starts]
    assert horizon_rmse(m, series, starts, [1])[1] == pytest.approx(fixed_horizon_eval(m, pairs), rel=1e-13)


def test_fixed_horizon_pool_average(rng):
    m = persistence(1, 2)
    pairs = [HistoryPair(rng.standard_normal((1, 2)), rng.standard_normal(2), i) for i in range(3)]
    hand = np.mean([rmse(p.history[-1], p.target) for p in pairs])
    assert fixed_horizon_eval(m, pairs) == pytest.approx(hand, rel=1e-14)
    assert fixed_horizon_eval(m, pairs[:1]) == pytest.approx(rmse(pairs[0].history[-1], pairs[0].target))
    oracle = [HistoryPair(np.tile(p.target, (1, 1)), p.target, 0) for p in pairs]
    assert fixed_horizon_eval(m, oracle) == 0.0


def test_divergence_sentinel():
    m = build_model("Direct", {"h": 1, "state_dim": 2, "enc_widths": [2], "z_dim": 2, "pred_widths": [2],
                               "residual": True, "zero_init_output": True})
    m.params["G.b1"].data[...] = 1e308
    # 1e308 is finite, the second step overflows
    errs, (batch,) = rollout_errors(m, np.zeros((10, 2)), [0], 5, return_batch=True)
    assert batch.diverged_at[0] == 1
    assert np.all(np.isfinite(batch.predicted[0, 0])) and np.all(np.isnan(batch.predicted[0, 1:]))
    assert np.all(errs[0, 1:] == np.inf)


def test_switching_metrics_hand_example():
    rep = switching_metrics(np.array([1, 1, 1, 1, 3, 4, 5, 6.0]), 4, 4)
    assert (rep.pre_rmse, rep.post_rmse, rep.growth_jump) == (1.0, 4.5, 1.0)
    assert rep.recovery_steps == 8


def test_switching_metrics_flat_sequence():
    rep = switching_metrics(np.full(20, 0.7), 10, 10)
    assert rep.growth_jump == 0.0 and rep.post_rmse == rep.pre_rmse and rep.recovery_steps == 0


def test_switching_window_violation():
    with pytest.raises(ConfigurationError):
        switching_metrics(np.ones(8), 3, 4)


def test_paired_stats_equal():
    s = paired_stats([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert s.win_count == 0 and s.two_sided_p == 1.0 and s.degenerate


def test_paired_stats_t_and_p():
    a = np.zeros(5)
    b = np.array([1.0, 2, 3, 4, 5])
    s = paired_stats(a, b)
    assert s.t_statistic == pytest.approx(4.2426, abs=1e-4)
    assert s.two_sided_p == pytest.approx(2 * stats.t.sf(s.t_statistic, 4), rel=1e-10)
    assert s.two_sided_p == pytest.approx(0.0132, abs=1e-3)
    assert s.win_count == 5


def test_paired_stats_constant_nonzero_difference():
    s = paired_stats([1.0, 2.0], [2.0, 3.0])
    assert s.two_sided_p == 0.0 and s.degenerate


def test_paired_stats_antisymmetry_all_sign_patterns():
    base = np.array([0.3, 1.1, 0.7, 2.0, 0.4])
    for signs in itertools.product((-1, 0, 1), repeat=5):
        a = np.full(5, 5.0)
        b = a + np.array(signs) * base
        fwd, rev = paired_stats(a, b), paired_stats(b, a)
        assert rev.win_count == 5 - fwd.win_count - fwd.ties
        if not fwd.degenerate:
            assert rev.t_statistic == pytest.approx(-fwd.t_statistic, rel=1e-12)
            assert rev.two_sided_p == pytest.approx(fwd.two_sided_p, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(-100, 100))
def test_paired_stats_p_range_and_shift(seed, shift):
    a, b = np.random.default_rng(seed).standard_normal((2, 5))
    s = paired_stats(a, b)
    assert 0.0 <= s.two_sided_p <= 1.0
    assert paired_stats(a + shift, b + shift).two_sided_p == pytest.approx(s.two_sided_p, rel=1e-6, abs=1e-9)
