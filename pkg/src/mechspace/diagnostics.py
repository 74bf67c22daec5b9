"""Mechanism-space geometry: spread, temporal coherence, kNN purity, drift and the K-sweep."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateSetError, EmptyInputError

DEFAULT_RANDOM_PAIRS = 10_000
DEFAULT_PURITY_K = 10


def _points(thetas, minimum, what):
    X = np.asarray(getattr(thetas, "thetas", thetas), dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ConfigurationError(f"{what} expects a sequence of vectors")
    if len(X) < minimum:
        raise EmptyInputError(f"{what} needs at least {minimum} vectors, got {len(X)}")
    return X


def theta_nondegeneracy(thetas):
    """Mean over dimensions of the per-dimension sample standard deviation (n - 1)."""
    X = _points(thetas, 2, "theta_nondegeneracy")
    return float(np.mean(np.std(X, axis=0, ddof=1)))


def neighbor_random_ratio(thetas, num_random_pairs=DEFAULT_RANDOM_PAIRS, seed=0):
    """(mean consecutive distance, mean random-pair distance, their ratio).

    Random pairs are drawn uniformly among ordered pairs of distinct indices.
    """
    X = _points(thetas, 2, "neighbor_random_ratio")
    if num_random_pairs < 1:
        raise ConfigurationError("num_random_pairs must be >= 1")
    n = len(X)
    neighbor = float(np.mean(np.linalg.norm(np.diff(X, axis=0), axis=1)))
    rng = np.random.default_rng(seed)
    i = rng.integers(n, size=num_random_pairs)
    j = (i + rng.integers(1, n, size=num_random_pairs)) % n
    random = float(np.mean(np.linalg.norm(X[i] - X[j], axis=1)))
    if random == 0.0:
        raise DegenerateSetError("all sampled points coincide; random-pair distance is zero")
    return neighbor, random, neighbor / random


def knn_indices(X, k, chunk=512):
    """k nearest other points per row (Euclidean); ties go to the lower index."""
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    sq = np.sum(X * X, axis=1)
    out = np.empty((n, k), dtype=np.int64)
    for lo in range(0, n, chunk):
        rows = np.arange(lo, min(lo + chunk, n))
        d = np.maximum(sq[rows, None] - 2.0 * X[rows] @ X.T + sq[None, :], 0.0)
        d[np.arange(len(rows)), rows] = np.inf
        out[rows] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def knn_purity(thetas, labels, k=DEFAULT_PURITY_K):
    """Mean fraction of each point's k nearest neighbours sharing its label."""
    X = _points(thetas, 2, "knn_purity")
    labels = np.asarray(labels)
    if len(labels) != len(X):
        raise ConfigurationError(f"{len(labels)} labels for {len(X)} points")
    if not 1 <= k < len(X):
        raise ConfigurationError(f"k must satisfy 1 <= k < {len(X)}, got {k}")
    nb = knn_indices(X, k)
    return float(np.mean(labels[nb] == labels[:, None]))


def theta_drift(thetas):
    """Mean Euclidean step between consecutive inferred mechanisms."""
    X = _points(thetas, 2, "theta_drift")
    return float(np.mean(np.linalg.norm(np.diff(X, axis=0), axis=1)))


def rollout_drift(mechanisms):
    """Mean theta_drift over a batch of rollouts (B, H, d_m), skipping diverged tails."""
    M = np.asarray(mechanisms, dtype=np.float64)
    vals = []
    for seq in M:
        seq = seq[np.all(np.isfinite(seq), axis=1)]
        if len(seq) >= 2:
            vals.append(theta_drift(seq))
    if not vals:
        raise EmptyInputError("no rollout produced two finite mechanisms")
    return float(np.mean(vals))


@dataclass
class GeometryReport:
    theta_std: float
    neighbor_mean_dist: float
    random_mean_dist: float
    ratio: float
    knn_purity: dict = field(default_factory=dict)
    sample_count: int = 0
    seed: int = 0

    def rows(self):
        """(metric, value) pairs in a fixed order."""
        out = [("theta_std", self.theta_std), ("neighbor_mean_dist", self.neighbor_mean_dist),
               ("random_mean_dist", self.random_mean_dist), ("neighbor_random_ratio", self.ratio)]
        out += [(f"knn_purity.{name}", v) for name, v in sorted(self.knn_purity.items())]
        out.append(("sample_count", float(self.sample_count)))
        return out


def geometry_report(thetas, labels=None, k=DEFAULT_PURITY_K, num_random_pairs=DEFAULT_RANDOM_PAIRS,
                    seed=0) -> GeometryReport:
    """All geometry diagnostics for a temporally ordered θ sequence.

    ``labels`` maps proxy names to per-point integer labels.
    """
    X = _points(thetas, 2, "geometry_report")
    near, rand, ratio = neighbor_random_ratio(X, num_random_pairs, seed)
    purity = {name: knn_purity(X, lab, k) for name, lab in (labels or {}).items()}
    return GeometryReport(theta_nondegeneracy(X), near, rand, ratio, purity, len(X), seed)


def quartile_labels(values):
    """Quartile index (0..3) of each value within the sample."""
    v = np.asarray(values, dtype=np.float64)
    edges = np.quantile(v, [0.25, 0.5, 0.75])
    return np.searchsorted(edges, v, side="right")


@dataclass
class SweepCurve:
    K_values: list
    seeds: list
    values: np.ndarray  # (n_seeds, n_K)
    metric: str = "near_split_rmse@20"

    def __post_init__(self):
        self.K_values = [int(k) for k in self.K_values]
        self.seeds = [int(s) for s in self.seeds]
        self.values = np.asarray(self.values, dtype=np.float64).reshape(len(self.seeds), len(self.K_values))
        if any(b <= a for a, b in zip(self.K_values, self.K_values[1:])):
            raise ConfigurationError("K values must be strictly increasing")

    def best_K(self):
        """Per-seed K with the lowest metric (first on ties)."""
        return [self.K_values[int(np.argmin(row))] for row in self.values]

    def interior_count(self):
        ends = {self.K_values[0], self.K_values[-1]}
        return sum(k not in ends for k in self.best_K())

    def long_rows(self):
        return [(K, s, self.metric, float(self.values[i, j]))
                for j, K in enumerate(self.K_values) for i, s in enumerate(self.seeds)]


def coverability_sweep(evaluate, K_grid, seeds, descriptor_count, metric="near_split_rmse@20") -> SweepCurve:
    """Evaluate ``evaluate(K, seed) -> float`` over the grid.

    ``descriptor_count`` is the size of the descriptor set the banks are built
    from; it must cover the largest K.
    """
    K_grid = [int(k) for k in K_grid]
    seeds = list(seeds)
    if not K_grid or not seeds:
        raise ConfigurationError("K grid and seeds must be nonempty")
    if descriptor_count < max(K_grid):
        raise ConfigurationError(f"{descriptor_count} descriptors cannot support K = {max(K_grid)}")
    values = np.array([[float(evaluate(K, s)) for K in K_grid] for s in seeds])
    return SweepCurve(K_grid, seeds, values, metric)
