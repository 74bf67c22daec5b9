"""Seeded minibatch training and the paired-seed protocol."""
from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigurationError, EmptyInputError, MechspaceError, ProtocolViolationError, TrainingAbortedError
from .models import ForecastModel, Standardizer


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    loss: str = "mse"
    shuffle_each_epoch: bool = True
    early_stop_patience: int | None = 20
    gradient_clip: float | None = 5.0
    fit_norm: bool = True
    per_coordinate_norm: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigurationError("lr must be positive")
        if self.loss != "mse":
            raise ConfigurationError(f"unknown loss {self.loss!r}")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ConfigurationError("early_stop_patience must be >= 1 when set")
        if self.gradient_clip is not None and not self.gradient_clip > 0:
            raise ConfigurationError("gradient_clip must be positive when set")


@dataclass
class TrainLog:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    best_epoch: int | None = None
    checkpoint: str | None = None

    @property
    def epochs_run(self):
        return len(self.train_loss)

    def to_text(self, with_time=True):
        head = "epoch,train_loss,val_loss" + (",seconds" if with_time else "")
        rows = [head]
        for i, (tr, va, s) in enumerate(zip(self.train_loss, self.val_loss, self.seconds)):
            row = f"{i},{tr:.17g},{va:.17g}"
            rows.append(row + (f",{s:.6f}" if with_time else ""))
        return "\n".join(rows) + "\n"


def loss_mse(pred, target):
    """Mean squared componentwise difference; differentiable when ``pred`` is a Tensor."""
    p_shape = pred.shape
    t_shape = np.shape(target.data if isinstance(target, nn.Tensor) else target)
    if tuple(p_shape) != tuple(t_shape):
        raise ConfigurationError(f"loss_mse shape mismatch {p_shape} vs {t_shape}")
    if isinstance(pred, nn.Tensor) or isinstance(target, nn.Tensor):
        diff = nn.as_tensor(pred) - target
        return (diff * diff).mean()
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(diff * diff))


def pairs_to_arrays(pairs):
    """(X, Y) raw arrays from HistoryPairs, Fragments or an (X, Y) tuple.

    Fragment targets become (n, 1) columns so every model sees 2-D targets.
    """
    if isinstance(pairs, tuple) and len(pairs) == 2 and isinstance(pairs[0], np.ndarray):
        X, Y = (np.asarray(a, dtype=np.float64) for a in pairs)
    else:
        items = list(pairs)
        if not items:
            raise EmptyInputError("no training pairs")
        if hasattr(items[0], "history"):
            X = np.stack([p.history for p in items])
            Y = np.stack([p.target for p in items])
        else:
            X = np.stack([np.asarray(f.inputs) for f in items])
            Y = np.array([f.target for f in items], dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(X) == 0:
        raise EmptyInputError("no training pairs")
    return X, Y


def _params_hash(params):
    h = hashlib.sha256()
    for name, t in params.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()[:16]


def _batched_loss(model, Xn, Yn, batch=1024):
    total = 0.0
    for lo in range(0, len(Xn), batch):
        out = model.core(Xn[lo:lo + batch]).pred.data
        total += float(np.sum((out - Yn[lo:lo + batch]) ** 2))
    return total / Yn.size


def train_model(model: ForecastModel, train, val, config: TrainConfig):
    """Minibatch Adam on the one-step MSE in standardised units.

    Standardisation statistics come from the training inputs only. With early
    stopping the best-validation parameters are restored before returning.
    """
    if not model.trainable:
        raise ConfigurationError(f"{model.variant} is fitted in closed form, not trained")
    X, Y = pairs_to_arrays(train)
    Xv, Yv = pairs_to_arrays(val) if val is not None else (None, None)
    if config.fit_norm:
        model.norm = Standardizer.fit(X, per_coordinate=config.per_coordinate_norm and model.kind == "state")
    Xn, Yn = model.norm.apply(X), model.norm.apply(Y)
    Xvn = None if Xv is None else model.norm.apply(Xv)
    Yvn = None if Yv is None else model.norm.apply(Yv)

    params = model.params
    log = TrainLog()
    rng = np.random.default_rng(config.seed)
    order = np.arange(len(Xn))
    best = (np.inf, None, None)
    stale = 0
    for epoch in range(config.epochs):
        start = time.perf_counter()
        if config.shuffle_each_epoch:
            order = rng.permutation(len(Xn))
        running, count = 0.0, 0
        for b, lo in enumerate(range(0, len(order), config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            pred = model.core(Xn[idx]).pred
            loss = loss_mse(pred, Yn[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingAbortedError(epoch, b, value)
            params.zero_grad()
            nn.backward(loss)
            if config.gradient_clip is not None:
                nn.clip_grad_norm(params, config.gradient_clip)
            nn.adam_step(params, config.lr)
            running += value * len(idx)
            count += len(idx)
        log.train_loss.append(running / count)
        val_loss = _batched_loss(model, Xvn, Yvn) if Xvn is not None else float("nan")
        log.val_loss.append(val_loss)
        log.seconds.append(time.perf_counter() - start)
        if config.early_stop_patience is not None and Xvn is not None:
            if val_loss < best[0]:
                best = (val_loss, epoch, params.copy())
                stale = 0
            else:
                stale += 1
                if stale >= config.early_stop_patience:
                    break
    if best[2] is not None:
        for name, t in best[2].items():
            params[name].data[...] = t.data
        log.best_epoch = best[1]
    log.checkpoint = _params_hash(params)
    return model, log


# ---------------------------------------------------------------------------
# paired-seed protocol


@dataclass
class CellResult:
    variant: str
    seed: int
    metrics: dict = field(default_factory=dict)
    fingerprint: str | None = None
    error: str | None = None
    extras: dict = field(default_factory=dict)


def run_seed_cells(prepare, fit_eval, variants, seed, quarantine=True):
    """One seed of the paired protocol: shared data, every variant, fingerprint check."""
    data = prepare(seed)
    cells = []
    for variant in variants:
        try:
            res = fit_eval(variant, seed, data)
        except MechspaceError as exc:
            if not quarantine:
                raise
            cells.append(CellResult(variant, seed, error=f"{type(exc).__name__}: {exc}"))
            continue
        metrics, fp = res[0], res[1]
        extras = res[2] if len(res) > 2 else {}
        cells.append(CellResult(variant, seed, dict(metrics), fp, extras=extras))
    prints = {c.fingerprint for c in cells if c.error is None}
    if len(prints) > 1:
        raise ProtocolViolationError(f"seed {seed}: variants saw different data {sorted(prints)}")
    return cells


def paired_seed_protocol(prepare, fit_eval, variants, seeds, quarantine=True):
    """Run every variant on every seed against identical data.

    ``prepare(seed)`` builds the per-seed dataset; ``fit_eval(variant, seed,
    data)`` returns ``(metrics, fingerprint)`` or ``(metrics, fingerprint,
    extras)``. Within a seed all successful cells must report the same
    fingerprint. Package errors are recorded on the cell when ``quarantine``
    is set; results come back ordered by seed, then by ``variants``.
    """
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ConfigurationError("the paired protocol needs at least 2 seeds")
    if len(set(seeds)) != len(seeds):
        raise ConfigurationError("duplicate seeds")
    out = []
    for seed in seeds:
        out.extend(run_seed_cells(prepare, fit_eval, variants, seed, quarantine))
    return out
