"""Reverse-mode autodiff over float64 numpy arrays, plus Adam and a checker.

A Value wraps an array and records how it was produced; backward() walks the
tape in reverse topological order accumulating gradients. The primitive set is
deliberately small (dense-network sized): matmul, broadcasting add/multiply,
tanh, relu, softplus, exp, log, sum, mean, square, sigmoid, concatenation.
Everything is deterministic; randomness is drawn outside the graph from
counter-based Philox streams and injected as constants.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericError

GRAD_CHECK_SAMPLE_CAP = 10_000
GRAD_CHECK_SAMPLE_SIZE = 256


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """A Philox generator for (seed, key...); distinct keys never collide."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce `grad` back to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Value:
    """A node in the computation graph: array data, gradient, provenance."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Value(shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        """Accumulate d(self)/d(node) into every node's .grad; self is scalar."""
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar, got shape {self.data.shape}")
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


def _as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def add(a, b) -> Value:
    a, b = _as_value(a), _as_value(b)
    out = Value(a.data + b.data, parents=(a, b))

    def backward(g):
        a.grad += _unbroadcast(g, a.data.shape)
        b.grad += _unbroadcast(g, b.data.shape)

    out._backward = backward
    return out


def mul(a, b) -> Value:
    a, b = _as_value(a), _as_value(b)
    out = Value(a.data * b.data, parents=(a, b))

    def backward(g):
        a.grad += _unbroadcast(g * b.data, a.data.shape)
        b.grad += _unbroadcast(g * a.data, b.data.shape)

    out._backward = backward
    return out


def matmul(a, b) -> Value:
    a, b = _as_value(a), _as_value(b)
    out = Value(a.data @ b.data, parents=(a, b))

    def backward(g):
        a.grad += g @ b.data.T
        b.grad += a.data.T @ g

    out._backward = backward
    return out


def _unary(a, fn, dfn) -> Value:
    a = _as_value(a)
    y = fn(a.data)
    out = Value(y, parents=(a,))

    def backward(g):
        a.grad += g * dfn(a.data, y)

    out._backward = backward
    return out


def tanh(a) -> Value:
    return _unary(a, np.tanh, lambda x, y: 1.0 - y * y)


def relu(a) -> Value:
    return _unary(a, lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0.0).astype(np.float64))


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a) -> Value:
    return _unary(a, _softplus, lambda x, y: _sigmoid(x))


def sigmoid(a) -> Value:
    return _unary(a, _sigmoid, lambda x, y: y * (1.0 - y))


def exp(a) -> Value:
    return _unary(a, np.exp, lambda x, y: y)


def log(a) -> Value:
    return _unary(a, np.log, lambda x, y: 1.0 / x)


def square(a) -> Value:
    return _unary(a, np.square, lambda x, y: 2.0 * x)


def vsum(a) -> Value:
    a = _as_value(a)
    out = Value(np.sum(a.data), parents=(a,))

    def backward(g):
        a.grad += np.broadcast_to(g, a.data.shape)

    out._backward = backward
    return out


def vmean(a) -> Value:
    a = _as_value(a)
    out = Value(np.mean(a.data), parents=(a,))

    def backward(g):
        a.grad += np.broadcast_to(g / a.data.size, a.data.shape)

    out._backward = backward
    return out


def concat(values, axis: int = 0) -> Value:
    values = [_as_value(v) for v in values]
    out = Value(np.concatenate([v.data for v in values], axis=axis), parents=tuple(values))
    sizes = [v.data.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for v, lo, hi in zip(values, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            v.grad += g[tuple(sl)]

    out._backward = backward
    return out


def reciprocal(a) -> Value:
    """1/x for positive x, composed from the exp/log primitives."""
    return exp(mul(log(a), -1.0))


def sqrt(a) -> Value:
    """sqrt(x) for positive x, composed from the exp/log primitives."""
    return exp(mul(log(a), 0.5))


class ParamStore:
    """Named float64 parameter tensors with Adam moment buffers."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.moment1: dict[str, np.ndarray] = {}
        self.moment2: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, array: np.ndarray) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        arr = np.asarray(array, dtype=np.float64)
        self.params[name] = arr
        self.moment1[name] = np.zeros_like(arr)
        self.moment2[name] = np.zeros_like(arr)

    def names(self):
        return list(self.params)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def as_values(self) -> dict:
        return {name: Value(arr.copy()) for name, arr in self.params.items()}


def forward_backward(builder, store: ParamStore):
    """Run `builder` over leaf Values of the store's parameters.

    builder(values: dict[str, Value]) must return a scalar loss Value. Returns
    (loss as float, gradients keyed like the store).
    """
    values = store.as_values()
    loss = builder(values)
    if not isinstance(loss, Value):
        raise TypeError("builder must return a Value")
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    loss.backward()
    return float(loss.data), {name: values[name].grad for name in store.names()}


def adam_step(
    store: ParamStore,
    gradients: dict,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamStore:
    """Bias-corrected Adam update applied in place; returns the store."""
    for name in store.names():
        if name not in gradients:
            raise ValueError(f"missing gradient for parameter {name!r}")
    store.step += 1
    t = store.step
    for name in store.names():
        g = np.asarray(gradients[name], dtype=np.float64)
        m = store.moment1[name]
        v = store.moment2[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        store.params[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return store


def _loss_at(builder, store: ParamStore) -> float:
    loss = builder(store.as_values())
    return float(loss.data)


def grad_check(builder, store: ParamStore, step: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks every parameter coordinate, or a seeded sample of
    GRAD_CHECK_SAMPLE_SIZE coordinates when the store holds more than
    GRAD_CHECK_SAMPLE_CAP. Raises NumericError on non-finite values.
    """
    _, grads = forward_backward(builder, store)
    coords = []
    for name in store.names():
        for idx in range(store.params[name].size):
            coords.append((name, idx))
    if len(coords) > GRAD_CHECK_SAMPLE_CAP:
        rng = rng_stream(seed, 97)
        chosen = rng.choice(len(coords), size=GRAD_CHECK_SAMPLE_SIZE, replace=False)
        coords = [coords[int(i)] for i in sorted(chosen)]

    worst = 0.0
    for name, idx in coords:
        flat = store.params[name].reshape(-1)
        original = flat[idx]
        flat[idx] = original + step
        f_plus = _loss_at(builder, store)
        flat[idx] = original - step
        f_minus = _loss_at(builder, store)
        flat[idx] = original
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NumericError(
                f"non-finite loss while probing {name}[{idx}]",
                parameter=name,
                index=idx,
            )
        numeric = (f_plus - f_minus) / (2.0 * step)
        analytic = float(grads[name].reshape(-1)[idx])
        if not math.isfinite(analytic):
            raise NumericError(
                f"non-finite gradient at {name}[{idx}]", parameter=name, index=idx
            )
        err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
        worst = max(worst, err)
    return worst
