"""Prototype banks: k-means, farthest-point selection, frozen buffers and learnable banks."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

MODES = ("frozen_cluster", "frozen_selected", "frozen_buffer", "learnable")
K_GRID = (32, 64, 128, 256, 512, 1024, 2048)


@dataclass
class PrototypeBank:
    prototypes: np.ndarray  # (K, d_m) mechanism values
    mode: str
    construction: dict = field(default_factory=dict)
    keys: np.ndarray | None = None  # (K, key_dim); None means key = value

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown bank mode {self.mode!r}")
        protos = np.array(self.prototypes, dtype=np.float64, ndmin=2)
        if protos.shape[0] < 1 or not np.all(np.isfinite(protos)):
            raise ConfigurationError("bank needs K >= 1 finite rows")
        keys = None if self.keys is None else np.array(self.keys, dtype=np.float64, ndmin=2)
        if keys is not None and keys.shape[0] != protos.shape[0]:
            raise ConfigurationError("bank keys and values must have the same number of rows")
        if self.frozen:
            protos.setflags(write=False)
            if keys is not None:
                keys.setflags(write=False)
        self.prototypes = protos
        self.keys = keys

    @property
    def frozen(self):
        return self.mode != "learnable"

    @property
    def K(self):
        return self.prototypes.shape[0]

    @property
    def dim(self):
        return self.prototypes.shape[1]

    @property
    def key_dim(self):
        return self.dim if self.keys is None else self.keys.shape[1]

    def checksum(self):
        h = hashlib.sha256(np.ascontiguousarray(self.prototypes).tobytes())
        if self.keys is not None:
            h.update(np.ascontiguousarray(self.keys).tobytes())
        return h.hexdigest()[:16]

    def save(self, path):
        """Header of key=value lines, then one row per prototype (values, then keys)."""
        lines = [f"K={self.K}", f"d_m={self.dim}", f"mode={self.mode}", f"key_dim={self.key_dim}",
                 f"has_keys={int(self.keys is not None)}"]
        lines += [f"construction.{k}={v}" for k, v in sorted(self.construction.items())]
        lines.append("---")
        rows = self.prototypes if self.keys is None else np.hstack([self.prototypes, self.keys])
        lines += [",".join(format(float(v), ".17g") for v in row) for row in rows]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            text = fh.read().splitlines()
        sep = text.index("---")
        header = dict(line.split("=", 1) for line in text[:sep])
        construction = {k[len("construction."):]: _parse_scalar(v)
                        for k, v in header.items() if k.startswith("construction.")}
        rows = np.array([[float(v) for v in line.split(",")] for line in text[sep + 1:] if line])
        d = int(header["d_m"])
        keys = rows[:, d:] if int(header["has_keys"]) else None
        bank = cls(rows[:, :d], header["mode"], construction, keys)
        if bank.K != int(header["K"]):
            raise ConfigurationError("bank file row count does not match header K")
        return bank


def _parse_scalar(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _as_points(descriptors):
    return np.asarray(getattr(descriptors, "thetas", descriptors), dtype=np.float64)


def _sqdist(X, C):
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_plusplus(X, K, rng):
    n = len(X)
    centers = [int(rng.integers(n))]
    d2 = _sqdist(X, X[centers])[:, 0]
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with chosen centres; take unused points in order
            unused = np.setdiff1d(np.arange(n), centers)
            centers.append(int(unused[0]))
        else:
            centers.append(int(rng.choice(n, p=d2 / total)))
        d2 = np.minimum(d2, _sqdist(X, X[centers[-1:]])[:, 0])
    return X[centers].copy()


def lloyd(X, centers, max_iters=100, tol=1e-10):
    """Lloyd iterations; returns (centres, labels, inertia history).

    Empty clusters are re-seeded at the point farthest from its current centre.
    """
    centers = centers.copy()
    history = []
    K = len(centers)
    for _ in range(max_iters):
        d2 = _sqdist(X, centers)
        labels = d2.argmin(1)
        inertia = float(d2[np.arange(len(X)), labels].sum())
        history.append(inertia)
        counts = np.bincount(labels, minlength=K)
        new = np.zeros_like(centers)
        np.add.at(new, labels, X)
        nonempty = counts > 0
        new[nonempty] /= counts[nonempty, None]
        own = d2[np.arange(len(X)), labels].copy()
        for k in np.flatnonzero(~nonempty):
            far = int(np.argmax(own))
            new[k] = X[far]
            own[far] = -1.0
        centers = new
        if len(history) > 1 and history[-2] - history[-1] <= tol * max(history[-2], 1e-300):
            break
    d2 = _sqdist(X, centers)
    labels = d2.argmin(1)
    final = float(d2[np.arange(len(X)), labels].sum())
    if final <= history[-1]:
        history.append(final)
    return centers, labels, history


def kmeans_prototypes(descriptors, K, seed=0, max_iters=100) -> PrototypeBank:
    X = _as_points(descriptors)
    if len(X) < K:
        raise ConfigurationError(f"need at least K={K} descriptors, got {len(X)}")
    if K < 1:
        raise ConfigurationError("K must be >= 1")
    rng = np.random.default_rng(seed)
    centers, _, history = lloyd(X, kmeans_plusplus(X, K, rng), max_iters=max_iters)
    construction = {"method": "kmeans", "N": len(X), "seed": seed, "iterations": len(history),
                    "inertia": history[-1]}
    bank = PrototypeBank(centers, "frozen_cluster", construction)
    bank.inertia_history = history
    return bank


def select_representatives(descriptors, K, seed=0) -> PrototypeBank:
    """Greedy k-centre (farthest-point) subset of the descriptors."""
    X = _as_points(descriptors)
    if len(X) < K:
        raise ConfigurationError(f"need at least K={K} descriptors, got {len(X)}")
    if K < 1:
        raise ConfigurationError("K must be >= 1")
    rng = np.random.default_rng(seed)
    picks = [int(rng.integers(len(X)))]
    d2 = _sqdist(X, X[picks])[:, 0]
    for _ in range(1, K):
        nxt = int(np.argmax(d2))
        picks.append(nxt)
        d2 = np.minimum(d2, _sqdist(X, X[nxt:nxt + 1])[:, 0])
    construction = {"method": "farthest_point", "N": len(X), "seed": seed}
    bank = PrototypeBank(X[picks].copy(), "frozen_selected", construction)
    bank.indices = picks
    return bank


def frozen_buffer(descriptors) -> PrototypeBank:
    """Store descriptors verbatim as a non-learnable retrieval buffer."""
    X = _as_points(descriptors)
    return PrototypeBank(X.copy(), "frozen_buffer", {"method": "buffer", "N": len(X)})


def init_learnable_bank(K, d_m, seed=0, scale=0.1, key_dim=None) -> PrototypeBank:
    if K < 1 or d_m < 1:
        raise ConfigurationError("K and d_m must be >= 1")
    rng = np.random.default_rng(seed)
    values = scale * rng.standard_normal((K, d_m))
    keys = None if key_dim is None else scale * rng.standard_normal((K, key_dim))
    return PrototypeBank(values, "learnable", {"method": "gaussian", "seed": seed, "scale": scale}, keys)
