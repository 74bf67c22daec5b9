"""The forecaster family behind one interface.

Gradient-trained variants (Direct, NoBank, Full, LSTM, NODE) share a
``core`` forward on standardised inputs. Reservoir-style variants (RCESN,
NVAR) hold ridge readouts instead of a parameter store.

Two input kinds are supported. ``state`` models map a (h, d) history of the
full state to the next state (Lorenz96). ``local_field`` models map one
(h, spatial_width) patch to the centre value at the lead and are applied at
every grid point to advance a periodic field (Burgers).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import NamedTuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import ArpackNoConvergence, eigs

from . import nn
from .bank import PrototypeBank
from .errors import ConfigurationError, NumericError
from .extract import ridge_fit
from .nn import MLPSpec, ParamStore, Tensor
from .systems import rk4_step
from .windows import field_patches

VARIANTS = ("Direct", "NoBank", "Full", "LSTM", "NODE", "RCESN", "NVAR")
GRADIENT_VARIANTS = ("Direct", "NoBank", "Full", "LSTM", "NODE")

DEFAULT_HYPER = {
    "Direct": {"enc_widths": [76, 76], "z_dim": 64, "pred_widths": [76, 76]},
    "NoBank": {"enc_widths": [120, 120], "z_dim": 64, "pred_widths": [120, 120], "head_widths": [64], "d_m": 16},
    "Full": {"enc_widths": [120, 120], "z_dim": 64, "pred_widths": [120, 120], "key_dim": 16, "d_m": 16,
             "local_rule": False},
    "LSTM": {"hidden": 73},
    "NODE": {"field_widths": [151, 151], "substeps": 4, "interval": 1.0},
    "RCESN": {"reservoir_size": 512, "density": 0.05, "spectral_radius": 0.9, "input_scale": 0.5,
              "leak": 1.0, "lam": 1e-6, "washout": 100, "seed": 0, "sync": 100, "squared_readout": True},
    "NVAR": {"k": 4, "lam": 1e-6},
}


@dataclass
class Standardizer:
    """Affine map to zero mean / unit variance; arrays broadcast over the state axis."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        self.std = np.where(std > 0, std, 1.0)

    @classmethod
    def fit(cls, values, per_coordinate=True):
        values = np.asarray(values, dtype=np.float64)
        if per_coordinate:
            flat = values.reshape(-1, values.shape[-1])
            return cls(flat.mean(0), flat.std(0))
        return cls(values.mean(), values.std())

    @classmethod
    def identity(cls):
        return cls(0.0, 1.0)

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, x):
        return np.asarray(x, dtype=np.float64) * self.std + self.mean

    def to_dict(self):
        return {"mean": np.atleast_1d(self.mean).tolist(), "std": np.atleast_1d(self.std).tolist(),
                "scalar": self.mean.ndim == 0}

    @classmethod
    def from_dict(cls, d):
        if d.get("scalar"):
            return cls(d["mean"][0], d["std"][0])
        return cls(d["mean"], d["std"])


@dataclass
class ForecastOutput:
    prediction: np.ndarray
    mechanism: np.ndarray | None = None
    weights: np.ndarray | None = None


class CoreOut(NamedTuple):
    pred: Tensor
    mechanism: Tensor | None
    weights: Tensor | None


@dataclass
class RolloutBatch:
    predicted: np.ndarray  # (B, H, d)
    mechanisms: np.ndarray | None  # (B, H, d_m)
    weights: np.ndarray | None  # (B, H, K)
    diverged_at: np.ndarray  # (B,), -1 when the rollout stayed finite


@dataclass
class ForecastModel:
    variant: str
    hyper: dict
    params: ParamStore | None = None
    bank: PrototypeBank | None = None
    norm: Standardizer = field(default_factory=Standardizer.identity)
    readout: np.ndarray | None = None
    reservoir: dict | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.variant == "Full" and self.bank is None:
            raise ConfigurationError("Full model requires a prototype bank")
        if self.variant != "Full" and self.bank is not None:
            raise ConfigurationError(f"{self.variant} model must not carry a bank")
        if self.kind == "local_field" and self.variant not in ("Direct", "NoBank", "Full"):
            raise ConfigurationError(f"{self.variant} does not support local_field inputs")

    # shape bookkeeping ------------------------------------------------------
    @property
    def kind(self):
        return self.hyper.get("kind", "state")

    @property
    def h(self):
        return int(self.hyper["h"])

    @property
    def state_dim(self):
        return int(self.hyper["state_dim"])

    @property
    def width(self):
        return int(self.hyper.get("spatial_width", 1))

    @property
    def in_features(self):
        return self.h * (self.width if self.kind == "local_field" else self.state_dim)

    @property
    def out_dim(self):
        return 1 if self.kind == "local_field" else self.state_dim

    @property
    def trainable(self):
        return self.variant in GRADIENT_VARIANTS

    def num_params(self):
        if self.params is not None:
            return self.params.num_params()
        return 0 if self.readout is None else int(self.readout.size)

    def current_bank(self) -> PrototypeBank | None:
        """The bank as used for retrieval; learnable rows are read from the parameter store."""
        if self.bank is None or self.bank.frozen:
            return self.bank
        return PrototypeBank(self.params["bank.values"].data.copy(), "learnable", dict(self.bank.construction),
                             self.params["bank.keys"].data.copy())

    # differentiable core ------------------------------------------------------
    def core(self, Xn) -> CoreOut:
        """Forward pass on standardised inputs ``Xn`` of shape (B, h, d) or (B, h, width)."""
        Xn = np.asarray(Xn, dtype=np.float64) if not isinstance(Xn, Tensor) else Xn
        shape = Xn.shape
        expected = (self.h, self.width if self.kind == "local_field" else self.state_dim)
        if len(shape) != 3 or tuple(shape[1:]) != expected:
            raise ConfigurationError(f"{self.variant}: expected input (B, {expected[0]}, {expected[1]}), got {shape}")
        fn = _CORES[self.variant]
        out = fn(self, Xn)
        if self.hyper.get("residual", False):
            last = Xn[:, -1, :] if self.kind == "state" else Xn[:, -1, self.width // 2:self.width // 2 + 1]
            out = CoreOut(out.pred + last, out.mechanism, out.weights)
        return out

    # numpy-level prediction ---------------------------------------------------
    def predict_batch(self, histories):
        """Raw-unit predictions for a batch of histories (B, h, d_s)."""
        H = np.asarray(histories, dtype=np.float64)
        if H.ndim != 3 or H.shape[1] < self.h:
            raise ConfigurationError(f"{self.variant}: histories must be (B, >= {self.h}, d)")
        H = H[:, -self.h:]
        if self.variant in ("RCESN", "NVAR"):
            return _READOUT_PREDICT[self.variant](self, H), None, None
        if self.kind == "local_field":
            B, h, M = H.shape
            patches = field_patches(self.norm.apply(H), self.width).reshape(B * M, h, self.width)
            out = self.core(patches)
            pred = self.norm.invert(out.pred.data.reshape(B, M))
            mech = None if out.mechanism is None else out.mechanism.data.reshape(B, M, -1).mean(1)
            w = None if out.weights is None else out.weights.data.reshape(B, M, -1).mean(1)
            return pred, mech, w
        out = self.core(self.norm.apply(H))
        mech = None if out.mechanism is None else out.mechanism.data
        w = None if out.weights is None else out.weights.data
        return self.norm.invert(out.pred.data), mech, w

    def forecast(self, history) -> ForecastOutput:
        pred, mech, w = self.predict_batch(np.asarray(history)[None])
        return ForecastOutput(pred[0], None if mech is None else mech[0], None if w is None else w[0])

    def rollout(self, histories, horizon) -> RolloutBatch:
        """Autoregressive rollouts: each prediction is appended to the model's own window."""
        if self.variant == "RCESN":
            return _rcesn_rollout(self, histories, horizon)
        window = np.array(np.asarray(histories, dtype=np.float64)[:, -self.h:])
        B, _, d = window.shape
        preds = np.full((B, horizon, d), np.nan)
        mechs = weights = None
        alive = np.ones(B, dtype=bool)
        diverged = np.full(B, -1)
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(horizon):
                feed = np.where(alive[:, None, None], window, 0.0)
                pred, mech, w = self.predict_batch(feed)
                if mech is not None and mechs is None:
                    mechs = np.full((B, horizon, mech.shape[1]), np.nan)
                if w is not None and weights is None:
                    weights = np.full((B, horizon, w.shape[1]), np.nan)
                ok = alive & np.all(np.isfinite(pred), axis=1)
                newly = alive & ~ok
                diverged[newly] = k
                alive = ok
                preds[alive, k] = pred[alive]
                if mechs is not None:
                    mechs[alive, k] = mech[alive]
                if weights is not None:
                    weights[alive, k] = w[alive]
                window = np.concatenate([window[:, 1:], np.where(alive[:, None], pred, 0.0)[:, None]], axis=1)
        return RolloutBatch(preds, mechs, weights, diverged)


# ---------------------------------------------------------------------------
# construction


def resolve_hyper(variant, hyper):
    merged = dict(DEFAULT_HYPER.get(variant, {}))
    merged.update(hyper or {})
    for key in ("h", "state_dim"):
        if key not in merged:
            raise ConfigurationError(f"{variant}: hyper is missing {key!r}")
    if merged.get("kind", "state") == "local_field" and "spatial_width" not in merged:
        raise ConfigurationError(f"{variant}: local_field models need spatial_width")
    return merged


def _specs(model):
    hy = model.hyper
    act = hy.get("activation", "tanh")
    enc = MLPSpec(tuple([model.in_features, *hy["enc_widths"], hy["z_dim"]]), act)
    if model.variant == "Direct":
        pred_in = hy["z_dim"]
    else:
        pred_in = hy["z_dim"] + _mech_dim(model)
    pred = MLPSpec(tuple([pred_in, *hy["pred_widths"], model.out_dim]), act)
    return enc, pred


def _mech_dim(model):
    if model.variant == "Full":
        return model.bank.dim
    return int(model.hyper["d_m"])


def build_model(variant, hyper, seed=0, bank: PrototypeBank | None = None, norm: Standardizer | None = None):
    """Freshly initialised model. Full requires ``bank``; RCESN/NVAR are returned unfitted."""
    hyper = resolve_hyper(variant, hyper)
    model = ForecastModel(variant, hyper, bank=bank, norm=norm or Standardizer.identity())
    if variant in ("RCESN", "NVAR"):
        return model
    rng = np.random.default_rng(seed)
    params = ParamStore()
    model.params = params
    zero_last = bool(hyper.get("zero_init_output", False))
    if variant in ("Direct", "NoBank", "Full"):
        enc, pred = _specs(model)
        nn.init_mlp(params, "E", enc, rng)
        if variant == "NoBank":
            if hyper.get("local_rule") and int(hyper["d_m"]) != model.in_features + 1:
                raise ConfigurationError("local_rule needs d_m = in_features + 1")
            head = MLPSpec(tuple([hyper["z_dim"], *hyper["head_widths"], hyper["d_m"]]), enc.activation)
            nn.init_mlp(params, "H", head, rng)
        if variant == "Full":
            key_dim = bank.key_dim
            if not bank.frozen:
                # explicit key rows fix the width; otherwise the hyper decides
                key_dim = bank.keys.shape[1] if bank.keys is not None else int(hyper.get("key_dim", bank.key_dim))
                hyper["key_dim"] = key_dim
                keys = bank.keys if bank.keys is not None else \
                    float(bank.construction.get("scale", 0.1)) * rng.standard_normal((bank.K, key_dim))
                params.add("bank.values", bank.prototypes)
                params.add("bank.keys", keys)
            if hyper.get("local_rule") and bank.dim != model.in_features + 1:
                raise ConfigurationError("local_rule needs descriptors of size in_features + 1")
            bound = np.sqrt(6.0 / (hyper["z_dim"] + key_dim))
            params.add("Q.W", rng.uniform(-bound, bound, size=(hyper["z_dim"], key_dim)))
            params.add("Q.b", np.zeros(key_dim))
        nn.init_mlp(params, "G", pred, rng, zero_last=zero_last)
    elif variant == "LSTM":
        H = int(hyper["hidden"])
        nn.init_lstm(params, "lstm", model.state_dim, H, rng)
        nn.init_mlp(params, "head", MLPSpec((H, model.state_dim)), rng, zero_last=zero_last)
    elif variant == "NODE":
        spec = MLPSpec(tuple([model.state_dim, *hyper["field_widths"], model.state_dim]),
                       hyper.get("activation", "tanh"))
        nn.init_mlp(params, "f", spec, rng, zero_last=zero_last)
    return model


# ---------------------------------------------------------------------------
# cores


def _flat(Xn):
    return nn.reshape(nn.as_tensor(Xn), (Xn.shape[0], -1))


def _encode(model, Xn):
    enc, pred = _specs(model)
    return nn.mlp_forward(model.params, enc, _flat(Xn), "E"), pred


def _temperature(model, key_dim):
    return float(model.hyper.get("temperature", np.sqrt(key_dim)))


def _predict_from_mechanism(model, Xn, z, theta, pred_spec):
    out = nn.mlp_forward(model.params, pred_spec, nn.concat([z, theta], axis=1), "G")
    if model.hyper.get("local_rule"):
        flat = _flat(Xn)
        aug = nn.concat([flat, np.ones((flat.shape[0], 1))], axis=1)
        out = out + nn.reshape((aug * theta).sum(axis=1), (-1, 1))
    return out


def _direct_core(model, Xn):
    z, pred = _encode(model, Xn)
    return CoreOut(nn.mlp_forward(model.params, pred, z, "G"), None, None)


def retrieve(model, z):
    """(alpha, theta_hat) for encoded queries ``z`` against the model's bank."""
    p = model.params
    if model.bank.frozen:
        keys = values = model.bank.prototypes
    else:
        keys, values = p["bank.keys"], p["bank.values"]
    q = nn.matmul(z, p["Q.W"]) + p["Q.b"]
    key_dim = keys.shape[1]
    return nn.attend(q, keys, values, _temperature(model, key_dim))


def _full_core(model, Xn):
    z, pred = _encode(model, Xn)
    alpha, theta = retrieve(model, z)
    return CoreOut(_predict_from_mechanism(model, Xn, z, theta, pred), theta, alpha)


def _nobank_core(model, Xn):
    z, pred = _encode(model, Xn)
    hy = model.hyper
    head = MLPSpec(tuple([hy["z_dim"], *hy["head_widths"], hy["d_m"]]), hy.get("activation", "tanh"))
    theta = nn.mlp_forward(model.params, head, z, "H")
    return CoreOut(_predict_from_mechanism(model, Xn, z, theta, pred), theta, None)


def _lstm_core(model, Xn):
    Xn = nn.as_tensor(Xn)
    B = Xn.shape[0]
    H = int(model.hyper["hidden"])
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(model.h):
        h, c = nn.lstm_step(model.params, Xn[:, t, :], h, c, "lstm")
    out = nn.mlp_forward(model.params, MLPSpec((H, model.state_dim)), h, "head")
    return CoreOut(out, None, None)


def node_vector_field(model):
    spec = MLPSpec(tuple([model.state_dim, *model.hyper["field_widths"], model.state_dim]),
                   model.hyper.get("activation", "tanh"))
    return lambda x: nn.mlp_forward(model.params, spec, x, "f")


def _node_core(model, Xn):
    x = nn.as_tensor(Xn)[:, -1, :]
    f = node_vector_field(model)
    n_sub = int(model.hyper["substeps"])
    step = float(model.hyper["interval"]) / n_sub
    for _ in range(n_sub):
        x = rk4_step(f, x, step)
    return CoreOut(x, None, None)


_CORES = {"Direct": _direct_core, "Full": _full_core, "NoBank": _nobank_core, "LSTM": _lstm_core,
          "NODE": _node_core}


# public per-variant entry points ---------------------------------------------

def _check_variant(model, variant):
    if model.variant != variant:
        raise ConfigurationError(f"expected a {variant} model, got {model.variant}")


def direct_forecast(model, history) -> ForecastOutput:
    _check_variant(model, "Direct")
    return model.forecast(history)


def full_forecast(model, history) -> ForecastOutput:
    _check_variant(model, "Full")
    return model.forecast(history)


def nobank_forecast(model, history) -> ForecastOutput:
    _check_variant(model, "NoBank")
    return model.forecast(history)


def lstm_forecast(model, history) -> ForecastOutput:
    _check_variant(model, "LSTM")
    return model.forecast(history)


def node_forecast(model, history) -> ForecastOutput:
    _check_variant(model, "NODE")
    return model.forecast(history)


# ---------------------------------------------------------------------------
# reservoir computing


def spectral_radius(A, max_iters=500, tol=1e-10, dense_below=64, seed=0):
    """Largest eigenvalue modulus of a square matrix.

    Small matrices are solved densely. Larger ones use ARPACK's restarted
    Arnoldi iteration (a Krylov refinement of power iteration that copes with
    the near-tied moduli of random reservoirs); failure to converge within
    ``max_iters`` restarts raises NumericError.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigurationError("spectral radius needs a square matrix")
    n = A.shape[0]
    if n < dense_below:
        return float(np.max(np.abs(np.linalg.eigvals(A))))
    v0 = np.random.default_rng(seed).standard_normal(n)
    try:
        vals = eigs(csr_matrix(A), k=1, which="LM", maxiter=max_iters, tol=tol, v0=v0,
                    return_eigenvectors=False)
    except ArpackNoConvergence:
        raise NumericError(f"spectral radius iteration did not converge in {max_iters} restarts") from None
    return float(np.abs(vals[0]))


def rescale_spectral_radius(A, target, **kw):
    rho = spectral_radius(A, **kw)
    if rho <= 0:
        raise NumericError("reservoir matrix has zero spectral radius")
    return A * (target / rho)


def _make_reservoir(hy, d):
    rng = np.random.default_rng(int(hy["seed"]))
    n = int(hy["reservoir_size"])
    mask = rng.random((n, n)) < float(hy["density"])
    A = np.where(mask, rng.uniform(-1.0, 1.0, (n, n)), 0.0)
    A = rescale_spectral_radius(A, float(hy["spectral_radius"]))
    W_in = float(hy["input_scale"]) * rng.uniform(-1.0, 1.0, (n, d))
    return {"A": A, "W_in": W_in}


def reservoir_update(model, r, x):
    """r' = (1 - leak) r + leak tanh(A r + W_in x); batch over rows."""
    leak = float(model.hyper["leak"])
    res = model.reservoir
    return (1.0 - leak) * r + leak * np.tanh(r @ res["A"].T + x @ res["W_in"].T)


def _reservoir_features(model, r):
    if model.hyper.get("squared_readout", True):
        r = r.copy()
        r[..., 1::2] = r[..., 1::2] ** 2
    return np.concatenate([r, np.ones(r.shape[:-1] + (1,))], axis=-1)


def _series(data):
    """Accepts a (T, d) array, a Trajectory, or temporally contiguous one-step pairs."""
    if hasattr(data, "states"):
        return np.asarray(data.states)
    if isinstance(data, (list, tuple)) and data and hasattr(data[0], "history"):
        t = np.array([p.t_index for p in data])
        if np.any(np.diff(t) != 1) or any(p.history.shape[0] != 1 for p in data):
            raise ConfigurationError("reservoir fit needs temporally contiguous one-step pairs (h=1, lead=1)")
        return np.vstack([data[0].history, np.stack([p.target for p in data])])
    return np.asarray(data, dtype=np.float64)


def rcesn_fit(train, hyper, norm: Standardizer | None = None) -> ForecastModel:
    """Fit an echo-state network readout by ridge regression on driven reservoir states."""
    series = _series(train)
    hyper = resolve_hyper("RCESN", {"h": hyper.get("sync", DEFAULT_HYPER["RCESN"]["sync"]),
                                    "state_dim": series.shape[1], **hyper})
    model = ForecastModel("RCESN", hyper, norm=norm or Standardizer.fit(series))
    model.reservoir = _make_reservoir(hyper, series.shape[1])
    xs = model.norm.apply(series)
    washout = int(hyper["washout"])
    if len(xs) - 1 <= washout:
        raise ConfigurationError("training series shorter than washout")
    r = np.zeros(int(hyper["reservoir_size"]))
    states = np.empty((len(xs) - 1, r.size))
    for t in range(len(xs) - 1):
        r = reservoir_update(model, r, xs[t])
        states[t] = r
    feats = _reservoir_features(model, states[washout:])
    model.readout = ridge_fit(feats, xs[washout + 1:], float(hyper["lam"]))
    return model


def _drive(model, Hn):
    r = np.zeros((Hn.shape[0], int(model.hyper["reservoir_size"])))
    for t in range(Hn.shape[1]):
        r = reservoir_update(model, r, Hn[:, t])
    return r


def _rcesn_predict(model, H):
    r = _drive(model, model.norm.apply(H))
    return model.norm.invert(_reservoir_features(model, r) @ model.readout)


def _rcesn_rollout(model, histories, horizon):
    H = np.asarray(histories, dtype=np.float64)[:, -model.h:]
    B, _, d = H.shape
    preds = np.full((B, horizon, d), np.nan)
    diverged = np.full(B, -1)
    alive = np.ones(B, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        r = _drive(model, model.norm.apply(H))
        for k in range(horizon):
            yn = _reservoir_features(model, r) @ model.readout
            ok = alive & np.all(np.isfinite(yn), axis=1)
            diverged[alive & ~ok] = k
            alive = ok
            preds[alive, k] = model.norm.invert(yn[alive])
            r = reservoir_update(model, r, np.where(alive[:, None], yn, 0.0))
    return RolloutBatch(preds, None, None, diverged)


def nvar_features(window):
    """[1, linear terms (newest first), unique quadratic monomials] for a (k, d) window.

    Accepts a batch (B, k, d). Length is 1 + dk + dk(dk + 1)/2.
    """
    W = np.asarray(window, dtype=np.float64)
    single = W.ndim == 2
    if single:
        W = W[None]
    lin = W[:, ::-1, :].reshape(W.shape[0], -1)
    n = lin.shape[1]
    i, j = np.triu_indices(n)
    quad = lin[:, i] * lin[:, j]
    feats = np.concatenate([np.ones((W.shape[0], 1)), lin, quad], axis=1)
    return feats[0] if single else feats


def nvar_feature_length(d, k):
    n = d * k
    return 1 + n + n * (n + 1) // 2


def nvar_fit(train, hyper, norm: Standardizer | None = None) -> ForecastModel:
    """Ridge readout from NVAR features of k-deep windows to the next state.

    ``train`` is a sequence of HistoryPair with history length >= k, or an
    (X, Y) tuple of arrays with X of shape (n, >= k, d).
    """
    if isinstance(train, tuple) and len(train) == 2 and not hasattr(train[0], "history"):
        X, Y = (np.asarray(a, dtype=np.float64) for a in train)
    else:
        X = np.stack([p.history for p in train])
        Y = np.stack([p.target for p in train])
    hyper = resolve_hyper("NVAR", {"h": hyper.get("k", DEFAULT_HYPER["NVAR"]["k"]),
                                   "state_dim": X.shape[-1], **hyper})
    k = int(hyper["k"])
    if X.shape[1] < k:
        raise ConfigurationError(f"NVAR needs windows of depth >= {k}")
    hyper["h"] = k
    model = ForecastModel("NVAR", hyper, norm=norm or Standardizer.fit(X))
    feats = nvar_features(model.norm.apply(X[:, -k:]))
    model.readout = ridge_fit(feats, model.norm.apply(Y), float(hyper["lam"]))
    return model


def _nvar_predict(model, H):
    feats = nvar_features(model.norm.apply(H[:, -int(model.hyper["k"]):]))
    return model.norm.invert(feats @ model.readout)


_READOUT_PREDICT = {"RCESN": _rcesn_predict, "NVAR": _nvar_predict}


def nvar_rcesn_monomials(d, k):
    """Index pairs of the quadratic monomials, in feature order."""
    return list(combinations_with_replacement(range(d * k), 2))
