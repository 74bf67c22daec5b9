"""Rollouts, fixed-horizon scoring, switching metrics and paired statistics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .errors import ConfigurationError, EmptyInputError
from .training import pairs_to_arrays

RECOVERY_BAND = 1.5


def rmse(pred, truth):
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(truth, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"rmse shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        raise EmptyInputError("rmse of empty arrays")
    return float(np.sqrt(np.mean((a - b) ** 2)))


@dataclass
class RolloutResult:
    predicted: np.ndarray  # (H, d), NaN rows after divergence
    truth: np.ndarray  # (H, d)
    per_step_rmse: np.ndarray  # (H,), +inf after divergence
    mechanisms: np.ndarray | None = None
    weights: np.ndarray | None = None
    diverged_at: int | None = None

    @property
    def horizon(self):
        return len(self.per_step_rmse)


def _per_step(pred, truth, diverged_at):
    """Per-step RMSE over the last axis; steps at or after divergence get +inf."""
    with np.errstate(invalid="ignore", over="ignore"):
        err = np.sqrt(np.mean((pred - truth) ** 2, axis=-1))
    steps = np.arange(err.shape[-1])
    dead = (diverged_at[..., None] >= 0) & (steps >= diverged_at[..., None])
    return np.where(dead, np.inf, err)


def _future(truth, horizon):
    states = np.asarray(getattr(truth, "states", truth), dtype=np.float64)
    if len(states) < horizon:
        raise ConfigurationError(f"truth has {len(states)} steps, horizon is {horizon}")
    return states[:horizon]


def autoregressive_rollout(model, initial_history, horizon, truth) -> RolloutResult:
    """Roll ``model`` forward ``horizon`` steps from ``initial_history``.

    ``truth`` holds the states that follow the history (Trajectory or (>= H, d)
    array); it is only used for scoring.
    """
    if horizon < 1:
        raise ConfigurationError("horizon must be >= 1")
    future = _future(truth, horizon)
    batch = model.rollout(np.asarray(initial_history, dtype=np.float64)[None], horizon)
    div = int(batch.diverged_at[0])
    per_step = _per_step(batch.predicted[0], future, np.array(div))
    return RolloutResult(batch.predicted[0], future, per_step,
                         None if batch.mechanisms is None else batch.mechanisms[0],
                         None if batch.weights is None else batch.weights[0],
                         None if div < 0 else div)


def rollout_errors(model, series, starts, horizon, chunk=256, return_batch=False):
    """Per-step RMSE (n_starts, horizon) of rollouts launched at ``starts``.

    A start index t means the history is series[t - h + 1 .. t] and the first
    prediction is scored against series[t + 1].
    """
    series = np.asarray(series, dtype=np.float64)
    starts = np.asarray(starts, dtype=np.int64)
    h = model.h
    if starts.size == 0:
        raise EmptyInputError("no rollout start points")
    if starts.min() < h - 1 or starts.max() + horizon >= len(series):
        raise ConfigurationError("rollout start points leave the series")
    errs, batches = [], []
    for lo in range(0, len(starts), chunk):
        s = starts[lo:lo + chunk]
        hist = np.stack([series[t - h + 1:t + 1] for t in s])
        fut = np.stack([series[t + 1:t + 1 + horizon] for t in s])
        b = model.rollout(hist, horizon)
        errs.append(_per_step(b.predicted, fut, b.diverged_at))
        if return_batch:
            batches.append(b)
    errs = np.concatenate(errs)
    if return_batch:
        return errs, batches
    return errs


def horizon_rmse(model, series, starts, horizons):
    """Mean over starts of the per-step RMSE at each horizon (1-based)."""
    errs = rollout_errors(model, series, starts, max(horizons))
    return {int(k): float(np.mean(errs[:, k - 1])) for k in horizons}


def tracking_errors(model, series, starts, lead):
    """Per-step RMSE of ``lead``-step rollouts re-launched from the truth at every start.

    Entry i is the error of the ``lead``-th prediction made from history
    ending at starts[i]; it scores forecast quality along a trajectory without
    letting errors compound across the whole sequence.
    """
    errs = rollout_errors(model, series, starts, lead)
    return errs[:, lead - 1]


def fixed_horizon_eval(model, pairs):
    """Mean single-shot RMSE over a pool of pairs built at the model's lead."""
    X, Y = pairs_to_arrays(pairs)
    if len(X) == 0:
        raise EmptyInputError("empty evaluation pool")
    pred, _, _ = model.predict_batch(X)
    pred = pred.reshape(Y.shape)
    return float(np.mean(np.sqrt(np.mean((pred - Y) ** 2, axis=1))))


@dataclass
class SwitchReport:
    switch_step: int
    pre_rmse: float
    post_rmse: float
    growth_jump: float
    recovery_steps: int


def switching_metrics(rollout, switch_step, window=10) -> SwitchReport:
    """Error level and growth on symmetric windows around ``switch_step``.

    Growth is the mean first difference of per-step RMSE inside each window.
    Recovery counts steps after the switch until the error is back within
    1.5x the pre-switch mean; the sequence length marks "never".
    """
    e = np.asarray(getattr(rollout, "per_step_rmse", rollout), dtype=np.float64)
    H = len(e)
    if window < 2:
        raise ConfigurationError("switch window must be >= 2")
    if switch_step - window < 0 or switch_step + window > H:
        raise ConfigurationError(f"switch windows [{switch_step - window}, {switch_step + window}) leave [0, {H})")
    pre = e[switch_step - window:switch_step]
    post = e[switch_step:switch_step + window]
    with np.errstate(invalid="ignore"):
        jump = float(np.mean(np.diff(post)) - np.mean(np.diff(pre)))
    pre_mean = float(np.mean(pre))
    band = RECOVERY_BAND * pre_mean
    inside = np.flatnonzero(e[switch_step:] <= band)
    recovery = int(inside[0]) if inside.size else H
    return SwitchReport(int(switch_step), pre_mean, float(np.mean(post)), jump, recovery)


@dataclass
class PairedStats:
    win_count: int
    ties: int
    n: int
    mean_diff: float
    t_statistic: float
    two_sided_p: float
    degenerate: bool = False


def t_two_sided_p(t, df):
    """Two-sided Student-t tail probability via the regularised incomplete beta."""
    if not np.isfinite(t):
        return 0.0
    return float(betainc(0.5 * df, 0.5, df / (df + t * t)))


def paired_stats(a, b) -> PairedStats:
    """Paired comparison of per-seed values where lower is better.

    win_count counts seeds with a < b; the t-test runs on d = b - a.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ConfigurationError("paired_stats needs two equal-length 1-D sequences")
    n = len(a)
    if n < 2:
        raise ConfigurationError("paired_stats needs at least 2 pairs")
    wins = int(np.sum(a < b))
    ties = int(np.sum(a == b))
    with np.errstate(invalid="ignore"):
        d = b - a
    if not np.all(np.isfinite(d)):
        return PairedStats(wins, ties, n, float("nan"), float("nan"), float("nan"), True)
    mean = float(np.mean(d))
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return PairedStats(wins, ties, n, 0.0, 0.0, 1.0, True)
        return PairedStats(wins, ties, n, mean, float(np.copysign(np.inf, mean)), 0.0, True)
    t = mean / (sd / np.sqrt(n))
    return PairedStats(wins, ties, n, mean, float(t), t_two_sided_p(t, n - 1))
