"""Reverse-mode automatic differentiation over dense float32 tensors.

A Tape records every operation executed while it is active; backward() replays
the record in reverse. Running ops with no active tape is the inference path:
same arithmetic, nothing recorded. All values are float32 and every op output
is checked finite; NaN/Inf anywhere is a hard error, not a warning.

Includes the gradient reversal primitive used for adversarial feature
training: identity forward, upstream gradient scaled by -strength backward.
"""

from __future__ import annotations

import threading

import numpy as np

_STATE = threading.local()


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


class Tensor:
    """Dense float32 array with optional gradient tracking.

    Tensors with requires_grad=True are leaves: backward() accumulates into
    their .grad buffer (additively across calls — zero it between steps).
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float32)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor initialized with non-finite values")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of executed ops; execution order is a topological order.

    Use as a context manager around the forward pass, then call
    backward(loss). Each recorded op is visited exactly once per backward.
    Intermediate gradients live only for the duration of one backward call;
    leaf gradients accumulate into Tensor.grad, so two backward calls without
    zeroing double the leaf grads.
    """

    def __init__(self):
        # entries: (out_tensor, [input tensors], backward_fn)
        # backward_fn(upstream) -> list of gradient arrays aligned with inputs
        self.entries: list[tuple[Tensor, list[Tensor], object]] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        stack = getattr(_STATE, "tapes", None)
        if stack is None:
            stack = _STATE.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _STATE.tapes.pop()
        return False

    def record(self, out: Tensor, inputs: list[Tensor], backward_fn) -> None:
        self.entries.append((out, inputs, backward_fn))
        self._produced.add(id(out))

    def backward(self, loss: Tensor) -> None:
        """Reverse-mode accumulation from a scalar loss into all leaf grads."""
        if loss.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, backward_fn in reversed(self.entries):
            upstream = grads.pop(id(out), None)
            if upstream is None:
                continue
            for tensor, contrib in zip(inputs, backward_fn(upstream)):
                if contrib is None:
                    continue
                if id(tensor) in self._produced:
                    slot = grads.get(id(tensor))
                    if slot is None:
                        grads[id(tensor)] = contrib.copy()
                    else:
                        slot += contrib
                elif tensor.requires_grad:
                    tensor.grad += contrib


def _active_tape() -> Tape | None:
    stack = getattr(_STATE, "tapes", None)
    return stack[-1] if stack else None


def _make(data: np.ndarray, inputs: list[Tensor], backward_fn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("op produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    tape = _active_tape()
    if tape is not None and any(
        t.requires_grad or id(t) in tape._produced for t in inputs
    ):
        tape.record(out, inputs, backward_fn)
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def backward(g):
        return [g @ b.data.T, a.data.T @ g]

    return _make(out, [a, b], backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; also supports bias-add of a vector onto matrix rows."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape and not (
        a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]
    ):
        raise ValueError(f"add shape mismatch: {a.data.shape} + {b.data.shape}")
    out = a.data + b.data

    def backward(g):
        gb = g.sum(axis=0) if b.data.ndim < g.ndim else g
        return [g, gb]

    return _make(out, [a, b], backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"sub shape mismatch: {a.data.shape} - {b.data.shape}")

    def backward(g):
        return [g, -g]

    return _make(a.data - b.data, [a, b], backward)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ValueError(f"multiply shape mismatch: {a.data.shape} * {b.data.shape}")

    def backward(g):
        return [g * b.data, g * a.data]

    return _make(a.data * b.data, [a, b], backward)


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = np.float32(c)

    def backward(g):
        return [g * c]

    return _make(a.data * c, [a], backward)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return list(np.split(g, splits, axis=axis))

    return _make(out, tensors, backward)


def slice_(a: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return [full]

    return _make(a.data[index].copy(), [a], backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    out = a.data.reshape(shape).copy()

    def backward(g):
        return [g.reshape(a.data.shape)]

    return _make(out, [a], backward)


def mean(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    n = np.float32(a.data.size)

    def backward(g):
        return [np.full_like(a.data, g / n)]

    return _make(np.asarray(a.data.mean(), dtype=np.float32), [a], backward)


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, dtype=np.float32)

    def backward(g):
        if axis is None:
            return [np.full_like(a.data, g)]
        return [np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy()]

    return _make(np.asarray(out, dtype=np.float32), [a], backward)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def backward(g):
        return [g * (a.data > 0)]

    return _make(out, [a], backward)


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        return [g * (1.0 - out * out)]

    return _make(out, [a], backward)


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    # stable in both tails: exp of a nonpositive argument never overflows
    e = np.exp(-np.abs(a.data))
    out = np.where(a.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(np.float32)

    def backward(g):
        return [g * out * (1.0 - out)]

    return _make(out, [a], backward)


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):  # overflow surfaces as NonFiniteError
        out = np.exp(a.data)

    def backward(g):
        return [g * out]

    return _make(out, [a], backward)


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise NonFiniteError("log of non-positive value")

    def backward(g):
        return [g / a.data]

    return _make(np.log(a.data), [a], backward)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted for stability."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return [out * (g - dot)]

    return _make(out.astype(np.float32), [a], backward)


def log_softmax(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def backward(g):
        return [g - p * g.sum(axis=-1, keepdims=True)]

    return _make(out.astype(np.float32), [a], backward)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp; gradient passes only through the unclamped region."""
    a = _as_tensor(a)
    out = np.clip(a.data, np.float32(lo), np.float32(hi))

    def backward(g):
        return [g * ((a.data >= lo) & (a.data <= hi))]

    return _make(out, [a], backward)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties route the gradient to the first argument."""
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.data <= b.data

    def backward(g):
        return [g * take_a, g * ~take_a]

    return _make(np.where(take_a, a.data, b.data), [a, b], backward)


def grad_reverse(x: Tensor, strength: float) -> Tensor:
    """Identity forward; backward multiplies the upstream gradient by -strength.

    Placing this between a feature extractor and a classifier turns the
    classifier's training signal into an adversarial one for the extractor.
    """
    x = _as_tensor(x)
    if not np.isfinite(strength):
        raise NonFiniteError("grad_reverse strength must be finite")
    neg = np.float32(-strength)

    def backward(g):
        return [g * neg]

    return _make(x.data, [x], backward)


# ---------------------------------------------------------------------------
# losses


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits).

    Accepts a single logit row with an int label or a batch with a label
    vector. Max-subtracted for stability.
    """
    logits = _as_tensor(logits)
    squeeze = logits.data.ndim == 1
    z = logits.data[None, :] if squeeze else logits.data
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, c = z.shape
    if c < 2:
        raise ValueError("cross_entropy needs at least 2 classes")
    if y.shape != (n,) or y.min() < 0 or y.max() >= c:
        raise ValueError(f"labels out of range for {n}x{c} logits")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    loss = np.asarray(-logp[np.arange(n), y].mean(), dtype=np.float32)
    p = np.exp(logp)

    def backward(g):
        dz = p.copy()
        dz[np.arange(n), y] -= 1.0
        dz *= g / np.float32(n)
        return [dz[0] if squeeze else dz]

    return _make(loss, [logits], backward)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared differences over all elements."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ValueError(f"mse shape mismatch: {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    n = np.float32(diff.size)
    loss = np.asarray((diff * diff).mean(), dtype=np.float32)

    def backward(g):
        d = (2.0 * g / n) * diff
        return [d, -d]

    return _make(loss, [pred, target], backward)


# ---------------------------------------------------------------------------
# optimizers


class SGD:
    """Plain gradient descent: theta <- theta - lr * grad."""

    def __init__(self, params: list[Tensor], lr: float):
        self.params = params
        self.lr = np.float32(lr)

    def step(self) -> None:
        for p in self.params:
            update = p.data - self.lr * p.grad
            if not np.all(np.isfinite(update)):
                raise NonFiniteError("non-finite parameter update")
            p.data = update

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


class Adam:
    """Adaptive-moment gradient descent with bias correction."""

    def __init__(self, params: list[Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            update = p.data - (self.lr / b1t) * m / (np.sqrt(v / b2t) + self.eps)
            update = update.astype(np.float32)
            if not np.all(np.isfinite(update)):
                raise NonFiniteError("non-finite parameter update")
            p.data = update

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def make_optimizer(kind: str, params: list[Tensor], lr: float):
    if kind == "sgd":
        return SGD(params, lr)
    if kind == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer: {kind!r}")
