"""History/target pairs, local spatiotemporal fragments and data splits."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, EmptyInputError
from .systems import Trajectory


@dataclass(frozen=True)
class HistoryPair:
    history: np.ndarray  # (h, d)
    target: np.ndarray  # (d,)
    t_index: int
    regime: int | None = None


@dataclass(frozen=True)
class Fragment:
    inputs: np.ndarray  # (time_depth, spatial_width)
    target: float
    location: int
    t_index: int
    regime: int | None = None
    trajectory: int = 0


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    split_mode: str = "temporal_contiguous"
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(not (0.0 < f < 1.0) for f in fr):
            raise ConfigurationError("split fractions must lie in (0, 1)")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigurationError(f"split fractions sum to {sum(fr)!r}, expected 1")
        if self.split_mode not in ("temporal_contiguous", "shuffled"):
            raise ConfigurationError(f"unknown split_mode {self.split_mode!r}")


def extract_history_pairs(traj: Trajectory, h: int, lead: int) -> list[HistoryPair]:
    """All (H_t, x_{t+lead}) pairs; t_index is the last history step."""
    if h < 1 or lead < 1:
        raise ConfigurationError("h and lead must be >= 1")
    T = len(traj)
    if T < h + lead:
        raise EmptyInputError(f"trajectory of length {T} too short for h={h}, lead={lead}")
    states = traj.states
    labels = traj.regime_labels
    out = []
    for t in range(h - 1, T - lead):
        regime = None if labels is None else int(labels[t + lead])
        out.append(HistoryPair(states[t - h + 1:t + 1], states[t + lead], t, regime))
    return out


def stack_pairs(pairs):
    """(X, Y) arrays of shape (n, h, d) and (n, d)."""
    if not pairs:
        raise EmptyInputError("no pairs to stack")
    return np.stack([p.history for p in pairs]), np.stack([p.target for p in pairs])


def patch_at(states, location, t_index, time_depth, spatial_width):
    """(time_depth, spatial_width) block ending at ``t_index``, centred on ``location`` with periodic wrap."""
    M = states.shape[1]
    cols = (location - spatial_width // 2 + np.arange(spatial_width)) % M
    return states[t_index - time_depth + 1:t_index + 1][:, cols]


def extract_fragments(traj: Trajectory, spatial_width: int, time_depth: int, lead: int,
                      spatial_stride: int = 1, time_stride: int = 1, trajectory_id: int = 0) -> list[Fragment]:
    """Local patches of a spatially extended trajectory with their centre value at ``lead``."""
    states = traj.states
    T, M = states.shape
    if spatial_width < 1 or time_depth < 1 or lead < 1 or spatial_stride < 1 or time_stride < 1:
        raise ConfigurationError("fragment widths, lead and strides must be >= 1")
    if spatial_width > M:
        raise ConfigurationError(f"spatial_width {spatial_width} exceeds grid size {M}")
    n_time = T - time_depth - lead + 1
    if n_time < 1:
        raise ConfigurationError(f"time_depth {time_depth} + lead {lead} exceeds trajectory length {T}")
    labels = traj.regime_labels
    out = []
    for k in range(n_time // time_stride):
        t = time_depth - 1 + k * time_stride
        regime = None if labels is None else int(labels[t + lead])
        for j in range(M // spatial_stride):
            s = j * spatial_stride
            out.append(Fragment(patch_at(states, s, t, time_depth, spatial_width), float(states[t + lead, s]),
                                s, t, regime, trajectory_id))
    return out


def field_patches(history, spatial_width):
    """Every periodic patch of a (time_depth, M) history, one per grid point: (M, time_depth, width)."""
    history = np.asarray(history)
    M = history.shape[-1]
    offsets = np.arange(spatial_width) - spatial_width // 2
    cols = (np.arange(M)[:, None] + offsets[None, :]) % M
    # history[..., cols] -> (..., time_depth, M, width)
    return np.moveaxis(history[..., cols], -2, -3)


def split_pairs(pairs, spec: SplitSpec):
    """Exact partition of ``pairs`` into (train, val, test)."""
    items = list(pairs)
    n = len(items)
    if n == 0:
        raise EmptyInputError("nothing to split")
    n_train = int(round(spec.train_fraction * n))
    n_val = int(round(spec.val_fraction * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ConfigurationError(f"split of {n} items gives empty part ({n_train}, {n_val}, {n_test})")
    order = np.arange(n)
    if spec.split_mode == "shuffled":
        order = np.random.default_rng(spec.seed).permutation(n)
    idx = [order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]]
    return tuple([items[i] for i in part] for part in idx)


def split_bounds(n, spec: SplitSpec):
    """Index boundaries (train_end, val_end) matching :func:`split_pairs` on ``n`` items."""
    n_train = int(round(spec.train_fraction * n))
    n_val = int(round(spec.val_fraction * n))
    return n_train, n_train + n_val


def fingerprint(*arrays):
    """Stable content hash of arrays (shape, dtype and bytes)."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.shape).encode())
        h.update(str(a.dtype).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]
