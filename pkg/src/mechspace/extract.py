"""Local mechanism descriptors from ridge fits on fragment neighbourhoods."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ConfigurationError, EmptyInputError, NumericError, SingularityError

RESIDUAL_RTOL = 1e-8


def ridge_fit(design, targets, lam):
    """argmin_theta ||X theta - y||^2 + lam ||theta||^2 via Cholesky of X^T X + lam I.

    ``targets`` may be a vector or an (n, k) matrix of independent right-hand sides.
    """
    X = np.asarray(design, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ConfigurationError("design must be a non-empty 2-D matrix")
    if y.shape[0] != X.shape[0]:
        raise ConfigurationError("targets and design have different row counts")
    if lam < 0:
        raise ConfigurationError("ridge penalty must be nonnegative")
    A = X.T @ X
    A[np.diag_indices_from(A)] += lam
    rhs = X.T @ y
    try:
        factor = linalg.cho_factor(A, lower=True, check_finite=True)
    except linalg.LinAlgError:
        raise SingularityError("X^T X + lam I is not positive definite (rank-deficient design?)") from None
    if lam == 0 and np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularityError("rank-deficient design with lam = 0")
    theta = linalg.cho_solve(factor, rhs)
    resid = np.linalg.norm(A @ theta - rhs)
    if resid > RESIDUAL_RTOL * (np.linalg.norm(rhs) + 1.0):
        # one step of iterative refinement before giving up
        theta = theta + linalg.cho_solve(factor, rhs - A @ theta)
        resid = np.linalg.norm(A @ theta - rhs)
        if resid > RESIDUAL_RTOL * (np.linalg.norm(rhs) + 1.0):
            raise NumericError(f"ridge normal-equation residual {resid:.3e} exceeds bound")
    return theta


def ridge_fit_batched(designs, targets, lam):
    """Independent ridge fits for a stack of (n, d) designs; returns (B, d) and residuals (B,)."""
    X = np.asarray(designs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    A = np.einsum("bnd,bne->bde", X, X)
    d = A.shape[-1]
    A[:, np.arange(d), np.arange(d)] += lam
    rhs = np.einsum("bnd,bn->bd", X, y)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise SingularityError("a neighbourhood system is not positive definite") from None
    z = np.linalg.solve(L, rhs[..., None])
    theta = np.linalg.solve(np.swapaxes(L, -1, -2), z)[..., 0]
    bound = RESIDUAL_RTOL * (np.linalg.norm(rhs, axis=1) + 1.0)
    normal_resid = np.linalg.norm(np.einsum("bde,be->bd", A, theta) - rhs, axis=1)
    if np.any(normal_resid > bound):
        raise NumericError("batched ridge normal-equation residual exceeds bound")
    fit_resid = np.sqrt(np.mean((np.einsum("bnd,bd->bn", X, theta) - y) ** 2, axis=1))
    return theta, fit_resid


@dataclass(frozen=True)
class Scaler:
    """Scalar affine standardisation shared by fragment inputs and targets."""

    mean: float = 0.0
    std: float = 1.0

    @classmethod
    def fit(cls, fragments):
        vals = np.concatenate([np.ravel(f.inputs) for f in fragments])
        std = float(np.std(vals))
        return cls(float(np.mean(vals)), std if std > 0 else 1.0)

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, x):
        return np.asarray(x, dtype=np.float64) * self.std + self.mean


@dataclass(frozen=True)
class MechanismDescriptor:
    theta: np.ndarray
    fit_residual: float = 0.0


@dataclass
class DescriptorSet:
    thetas: np.ndarray  # (N, d_m)
    locations: np.ndarray
    t_indices: np.ndarray
    regimes: np.ndarray  # -1 where unknown
    residuals: np.ndarray
    trajectories: np.ndarray = None
    scaler: Scaler = field(default_factory=Scaler)
    lam: float = 1e-3

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=np.float64))
        n = len(self.thetas)
        if self.trajectories is None:
            self.trajectories = np.zeros(n, dtype=np.int64)
        for name in ("locations", "t_indices", "regimes", "residuals", "trajectories"):
            arr = np.asarray(getattr(self, name))
            if len(arr) != n:
                raise ConfigurationError(f"descriptor metadata {name} has length {len(arr)} != {n}")
            setattr(self, name, arr)
        if not np.all(np.isfinite(self.thetas)):
            raise NumericError("non-finite descriptor entries")

    def __len__(self):
        return len(self.thetas)

    @property
    def dim(self):
        return self.thetas.shape[1]

    def __getitem__(self, i):
        return MechanismDescriptor(self.thetas[i], float(self.residuals[i]))


def design_matrix(fragments, scaler: Scaler | None = None):
    """Rows [standardised flattened inputs, 1] and standardised targets."""
    scaler = scaler or Scaler()
    X = np.stack([np.ravel(f.inputs) for f in fragments])
    y = np.array([f.target for f in fragments], dtype=np.float64)
    X = scaler.apply(X)
    return np.hstack([X, np.ones((len(X), 1))]), scaler.apply(y)


def fit_local_descriptor(neighborhood, lam, scaler: Scaler | None = None) -> MechanismDescriptor:
    """Affine ridge predictor of the fragment target from its (bias-augmented) inputs."""
    frags = list(neighborhood)
    if not frags:
        raise EmptyInputError("empty neighbourhood")
    shape = np.shape(frags[0].inputs)
    if any(np.shape(f.inputs) != shape for f in frags):
        raise ConfigurationError("inconsistent fragment shapes in neighbourhood")
    X, y = design_matrix(frags, scaler)
    theta = ridge_fit(X, y, lam)
    resid = float(np.sqrt(np.mean((X @ theta - y) ** 2)))
    return MechanismDescriptor(theta, resid)


def _neighbour_index(locs, times, size, M, chunk=256):
    """For each fragment, itself plus its size-1 nearest fragments (Chebyshev, periodic in space).

    Distance ties go to the lower fragment index.
    """
    n = len(locs)
    cols = np.arange(n)
    out = np.empty((n, size), dtype=np.int64)
    for lo in range(0, n, chunk):
        rows = np.arange(lo, min(lo + chunk, n))
        ds = np.abs(locs[rows, None] - locs[None, :])
        if M is not None:
            ds = np.minimum(ds, M - ds)
        dist = np.maximum(ds, np.abs(times[rows, None] - times[None, :])) + 1
        dist[np.arange(len(rows)), rows] = 0
        key = dist * n + cols[None, :]
        if size < n:
            part = np.argpartition(key, size - 1, axis=1)[:, :size]
        else:
            part = np.broadcast_to(cols, (len(rows), n))
        order = np.argsort(np.take_along_axis(key, part, axis=1), axis=1)
        out[rows] = np.take_along_axis(part, order, axis=1)
    return out


def build_descriptor_set(fragments, neighborhood_size, lam=1e-3, scaler: Scaler | None = None,
                         grid_points=None) -> DescriptorSet:
    """One descriptor per fragment anchor, fitted on its space-time neighbourhood.

    Neighbourhoods never cross trajectories. ``grid_points`` enables periodic
    spatial distance.
    """
    frags = list(fragments)
    if not frags:
        raise EmptyInputError("no fragments")
    if neighborhood_size < 1:
        raise ConfigurationError("neighborhood_size must be >= 1")
    scaler = scaler or Scaler.fit(frags)
    X, y = design_matrix(frags, scaler)
    locs = np.array([f.location for f in frags])
    times = np.array([f.t_index for f in frags])
    trajs = np.array([f.trajectory for f in frags])
    regimes = np.array([-1 if f.regime is None else f.regime for f in frags])
    thetas = np.empty((len(frags), X.shape[1]))
    resid = np.empty(len(frags))
    for tid in np.unique(trajs):
        members = np.flatnonzero(trajs == tid)
        size = min(neighborhood_size, len(members))
        nb = members[_neighbour_index(locs[members], times[members], size, grid_points)]
        thetas[members], resid[members] = ridge_fit_batched(X[nb], y[nb], lam)
    return DescriptorSet(thetas, locs, times, regimes, resid, trajs, scaler, lam)
