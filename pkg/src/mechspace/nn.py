"""Minimal dense-network substrate.

A small reverse-mode differentiation engine over numpy arrays, a named
parameter store with Adam state, and the handful of layers the forecasters
need: affine/tanh MLPs, scaled dot-product attention over a prototype bank,
and an LSTM cell. Everything runs in float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericError, UsageError

DTYPE = np.float64


class Tensor:
    """Array node in a recorded computation graph.

    Leaves created with ``requires_grad=True`` accumulate gradients into
    ``.grad`` on every :func:`backward` call; intermediate nodes do not keep
    gradients.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    # make numpy defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if (requires_grad and not _parents) else None
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise NotImplementedError("division by a tensor is not supported")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __getitem__(self, idx):
        return index(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self):
        return mul(tsum(self), 1.0 / self.data.size)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward):
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward)


def neg(a):
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ConfigurationError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ConfigurationError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _node(a.data @ b.data, (a, b), backward)


def transpose(a):
    return _node(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def _is_basic(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, type(Ellipsis))) for p in parts)


def index(a, idx):
    def backward(g):
        out = np.zeros_like(a.data)
        if _is_basic(idx):
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _node(a.data[idx], (a,), backward)


def tsum(a, axis=None):
    shape = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node(np.sum(a.data, axis=axis), (a,), backward)


def tanh(a):
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a):
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def identity(a):
    return a


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def softmax(scores, axis=-1):
    """Softmax with max-subtraction; differentiable."""
    scores = as_tensor(scores)
    shifted = scores.data - scores.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (scores,), backward)


ACTIVATIONS = {"tanh": tanh, "relu": relu, "sigmoid": sigmoid, "identity": identity}


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order[::-1]


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every reachable trainable leaf.

    Gradients add to whatever the leaves already hold; call
    :meth:`ParamStore.zero_grad` to reset.
    """
    if not isinstance(loss, Tensor):
        raise UsageError("backward expects the Tensor returned by a forward pass")
    if loss.data.size != 1:
        raise UsageError(f"loss must be scalar, got shape {loss.shape}")
    if not loss._parents:
        raise UsageError("no recorded forward graph behind this loss")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in _topological(loss):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# parameters and optimisation


class ParamStore:
    """Ordered named parameters plus Adam moments and step counter."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name, value):
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=DTYPE)
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)
        return t

    def __getitem__(self, name) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise ConfigurationError(f"unknown parameter {name!r}") from None

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def num_params(self):
        return int(sum(t.data.size for t in self._params.values()))

    def zero_grad(self):
        for t in self._params.values():
            t.grad[...] = 0.0

    def flat(self):
        return np.concatenate([t.data.ravel() for t in self._params.values()]) if self._params else np.zeros(0)

    def flat_grad(self):
        return np.concatenate([t.grad.ravel() for t in self._params.values()]) if self._params else np.zeros(0)

    def set_flat(self, vector):
        vector = np.asarray(vector, dtype=DTYPE)
        if vector.size != self.num_params():
            raise ConfigurationError("flat vector length does not match parameter count")
        i = 0
        for t in self._params.values():
            n = t.data.size
            t.data[...] = vector[i:i + n].reshape(t.data.shape)
            i += n

    def grad_norm(self):
        return float(np.sqrt(sum(float(np.sum(t.grad * t.grad)) for t in self._params.values())))

    def copy(self):
        other = ParamStore()
        for name, t in self._params.items():
            other.add(name, t.data.copy())
            other._params[name].grad[...] = t.grad
            other.m[name] = self.m[name].copy()
            other.v[name] = self.v[name].copy()
        other.step = self.step
        return other

    def state_arrays(self):
        """Flat name -> array mapping covering values, moments and step."""
        out = {}
        for name, t in self._params.items():
            out[f"param/{name}"] = t.data
            out[f"m/{name}"] = self.m[name]
            out[f"v/{name}"] = self.v[name]
        out["step"] = np.array(self.step, dtype=np.int64)
        out["__order__"] = np.array(list(self._params), dtype=str)
        return out

    @classmethod
    def from_state_arrays(cls, arrays):
        store = cls()
        for name in [str(n) for n in arrays["__order__"]]:
            store.add(name, arrays[f"param/{name}"])
            store.m[name] = np.array(arrays[f"m/{name}"], dtype=DTYPE)
            store.v[name] = np.array(arrays[f"v/{name}"], dtype=DTYPE)
        store.step = int(arrays["step"])
        return store

    def save(self, path):
        np.savez(path, **self.state_arrays())

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as data:
            return cls.from_state_arrays({k: data[k] for k in data.files})


def clip_grad_norm(params: ParamStore, max_norm):
    norm = params.grad_norm()
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for _, t in params.items():
            t.grad *= scale
    return norm


def adam_step(params: ParamStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; gradients are zeroed afterwards."""
    params.step += 1
    k = params.step
    c1 = 1.0 - beta1 ** k
    c2 = 1.0 - beta2 ** k
    for name, t in params.items():
        g = t.grad
        m = params.m[name]
        v = params.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        t.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        g[...] = 0.0
    return params


# ---------------------------------------------------------------------------
# layers


@dataclass(frozen=True)
class MLPSpec:
    """Layer widths from input to output; hidden layers use ``activation``."""

    widths: tuple
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.widths) < 2 or any(int(w) < 1 for w in self.widths):
            raise ConfigurationError(f"invalid MLP widths {self.widths}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def n_layers(self):
        return len(self.widths) - 1

    def num_params(self):
        return sum(a * b + b for a, b in zip(self.widths[:-1], self.widths[1:]))


def init_mlp(params: ParamStore, prefix, spec: MLPSpec, rng, zero_last=False):
    for i, (fan_in, fan_out) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        last = i == spec.n_layers - 1
        if last and zero_last:
            w = np.zeros((fan_in, fan_out))
        else:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params.add(f"{prefix}.W{i}", w)
        params.add(f"{prefix}.b{i}", np.zeros(fan_out))


def mlp_forward(params: ParamStore, spec: MLPSpec, x, prefix="mlp"):
    """Alternating affine and activation layers; the last layer is affine."""
    x = as_tensor(x)
    squeeze = x.ndim == 1
    if squeeze:
        x = reshape(x, (1, -1))
    if x.shape[1] != spec.widths[0]:
        raise ConfigurationError(f"{prefix}: input width {x.shape[1]} != {spec.widths[0]}")
    act = ACTIVATIONS[spec.activation]
    for i in range(spec.n_layers):
        x = matmul(x, params[f"{prefix}.W{i}"]) + params[f"{prefix}.b{i}"]
        if i < spec.n_layers - 1:
            x = act(x)
    return reshape(x, (-1,)) if squeeze else x


@dataclass
class AttentionOutput:
    weights: np.ndarray
    mechanism: np.ndarray


def attend(query, keys, values, temperature):
    """Differentiable retrieval: returns (alpha, theta) for a batch of queries."""
    query, keys, values = as_tensor(query), as_tensor(keys), as_tensor(values)
    if temperature <= 0:
        raise ConfigurationError("temperature must be positive")
    if query.shape[-1] != keys.shape[-1]:
        raise ConfigurationError(f"query dim {query.shape[-1]} != key dim {keys.shape[-1]}")
    scores = mul(matmul(query, transpose(keys)), 1.0 / temperature)
    if not np.all(np.isfinite(scores.data)):
        raise NumericError("non-finite attention scores")
    alpha = softmax(scores, axis=-1)
    return alpha, matmul(alpha, values)


def attention_retrieve(query, bank, temperature) -> AttentionOutput:
    """Softmax attention of ``query`` over the rows of a prototype bank.

    ``query`` may be a single vector or a batch (rows). Keys default to the
    prototype values when the bank carries no separate key rows.
    """
    q = np.asarray(query, dtype=DTYPE)
    single = q.ndim == 1
    keys = bank.keys if getattr(bank, "keys", None) is not None else bank.prototypes
    alpha, theta = attend(np.atleast_2d(q), keys, bank.prototypes, temperature)
    if single:
        return AttentionOutput(alpha.data[0], theta.data[0])
    return AttentionOutput(alpha.data, theta.data)


def init_lstm(params: ParamStore, prefix, input_dim, hidden, rng):
    bound = 1.0 / np.sqrt(hidden)
    params.add(f"{prefix}.Wx", rng.uniform(-bound, bound, size=(input_dim, 4 * hidden)))
    params.add(f"{prefix}.Wh", rng.uniform(-bound, bound, size=(hidden, 4 * hidden)))
    params.add(f"{prefix}.b", np.zeros(4 * hidden))


def lstm_step(params: ParamStore, x, hidden, cell, prefix="lstm"):
    """Standard 4-gate LSTM update; gate column blocks are ordered i, f, g, o."""
    x, hidden, cell = as_tensor(x), as_tensor(hidden), as_tensor(cell)
    Wh = params[f"{prefix}.Wh"]
    H = Wh.shape[0]
    if hidden.shape[-1] != H or cell.shape[-1] != H:
        raise ConfigurationError(f"{prefix}: hidden/cell width must be {H}")
    if x.shape[-1] != params[f"{prefix}.Wx"].shape[0]:
        raise ConfigurationError(f"{prefix}: input width mismatch")
    squeeze = x.ndim == 1
    if squeeze:
        x, hidden, cell = reshape(x, (1, -1)), reshape(hidden, (1, -1)), reshape(cell, (1, -1))
    gates = matmul(x, params[f"{prefix}.Wx"]) + matmul(hidden, Wh) + params[f"{prefix}.b"]
    i = sigmoid(gates[:, 0:H])
    f = sigmoid(gates[:, H:2 * H])
    g = tanh(gates[:, 2 * H:3 * H])
    o = sigmoid(gates[:, 3 * H:4 * H])
    c_new = f * cell + i * g
    h_new = o * tanh(c_new)
    if squeeze:
        return reshape(h_new, (-1,)), reshape(c_new, (-1,))
    return h_new, c_new
