"""
Dense tensor engine with reverse-mode automatic differentiation.

A Tensor wraps a row-major numpy array. While gradients are enabled, every
primitive whose inputs require a gradient is appended to the calling
thread's GradTape; backward() replays that tape in reverse order and then
clears it.

Primitives:
    add, sub, mul, neg, matmul           -- arithmetic (bias-add broadcast only)
    sigmoid, tanh, relu, exp, log,
    square, clip                         -- elementwise
    reduce_sum, reduce_mean              -- reductions
    softmax, log_softmax                 -- max-subtracted, stable
    concat, stack, select, slice_last,
    embedding                            -- structure
    batched_dot, weighted_sum            -- attention kernels
    minimum, dropout, nll_loss
"""

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from .errors import ContractError, NonFiniteError, ShapeError, TargetIndexError


@dataclass
class TapeNode:
    op: str
    output: 'Tensor'
    inputs: Tuple['Tensor', ...]
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class GradTape:
    """Ordered record of executed primitives, one per thread."""

    def __init__(self):
        self.nodes: List[TapeNode] = []
        self.generation = 0
        self.enabled = True
        self.check_finite = False

    def record(self, node: TapeNode):
        self.nodes.append(node)

    def clear(self):
        self.nodes = []
        self.generation += 1

    def __len__(self):
        return len(self.nodes)


_local = threading.local()


def current_tape() -> GradTape:
    tape = getattr(_local, 'tape', None)
    if tape is None:
        tape = GradTape()
        _local.tape = tape
    return tape


@contextmanager
def no_grad():
    tape = current_tape()
    previous = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = previous


@contextmanager
def detect_anomaly():
    """Raise NonFiniteError naming the first op that produces NaN/Inf."""
    tape = current_tape()
    previous = tape.check_finite
    tape.check_finite = True
    try:
        yield
    finally:
        tape.check_finite = previous


class Tensor:
    __slots__ = ('data', 'requires_grad', 'grad', 'name', '_generation')

    def __init__(self, data, requires_grad: bool = False, name: str = '', dtype=None):
        if dtype is None:
            is_float = isinstance(data, np.ndarray) and data.dtype.kind == 'f'
            dtype = data.dtype if is_float else np.float64
        self.data = np.array(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        # -1 marks a leaf; op outputs carry the tape generation they were recorded in
        self._generation = -1

    @classmethod
    def _wrap(cls, data: np.ndarray) -> 'Tensor':
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.grad = None
        t.name = ''
        t._generation = -1
        return t

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def sum(self, axis=None) -> 'Tensor':
        return reduce_sum(self, axis)

    def mean(self, axis=None) -> 'Tensor':
        return reduce_mean(self, axis)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division is only defined by a constant")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        label = f"{self.name}: " if self.name else ""
        return f"Tensor({label}shape={self.shape}, requires_grad={self.requires_grad})"


TensorLike = Union[Tensor, np.ndarray, float, int]


def parameter(data: np.ndarray, name: str = '') -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def constant(data, like: Optional[Tensor] = None) -> Tensor:
    dtype = like.dtype if like is not None else None
    if dtype is None and not (isinstance(data, np.ndarray) and data.dtype.kind == 'f'):
        dtype = np.float64
    return Tensor._wrap(np.asarray(data, dtype=dtype))


def _make(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...],
          backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    tape = current_tape()
    if tape.check_finite and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite output from op '{op}'")
    out = Tensor._wrap(np.asarray(data))
    if tape.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._generation = tape.generation
        tape.record(TapeNode(op, out, inputs, backward))
    return out


def _pair(a: TensorLike, b: TensorLike) -> Tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise ContractError("at least one operand must be a Tensor")
    if not isinstance(a, Tensor):
        a = constant(a, like=b)
    if not isinstance(b, Tensor):
        b = constant(b, like=a)
    return a, b


def _check_broadcast(op: str, a: Tensor, b: Tensor):
    if a.shape == b.shape:
        return
    for x, y in ((a, b), (b, a)):
        if x.ndim == 0 or x.shape == (1,):
            return
        if x.ndim == 1 and y.ndim >= 1 and x.shape[0] == y.shape[-1]:
            return
    raise ShapeError(f"{op}: cannot combine shapes {a.shape} and {b.shape}")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ── arithmetic ─────────────────────────────────────────────────────────────

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast('add', a, b)
    return _make('add', a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast('sub', a, b)
    return _make('sub', a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast('mul', a, b)
    return _make('mul', a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def neg(x: Tensor) -> Tensor:
    return _make('neg', -x.data, (x,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a[..., k] @ b[k, n]; a may carry one leading batch axis."""
    if b.ndim != 2 or a.ndim not in (2, 3) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")

    def backward(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _make('matmul', a.data @ b.data, (a, b), backward)


# ── elementwise ────────────────────────────────────────────────────────────

def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return _make('sigmoid', out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make('tanh', out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    active = x.data > 0
    return _make('relu', np.where(active, x.data, 0.0).astype(x.dtype), (x,),
                 lambda g: (g * active,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make('exp', out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _make('log', np.log(x.data), (x,), lambda g: (g / x.data,))


def square(x: Tensor) -> Tensor:
    return _make('square', x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def clip(x: Tensor, low: float, high: float) -> Tensor:
    inside = (x.data >= low) & (x.data <= high)
    return _make('clip', np.clip(x.data, low, high), (x,), lambda g: (g * inside,))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"minimum: shapes {a.shape} and {b.shape} differ")
    first = a.data <= b.data
    return _make('minimum', np.where(first, a.data, b.data), (a, b),
                 lambda g: (g * first, g * ~first))


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool = True) -> Tensor:
    if not training or p <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return mul(x, constant(keep, like=x))


# ── reductions ─────────────────────────────────────────────────────────────

def reduce_sum(x: Tensor, axis: Optional[int] = None) -> Tensor:
    out = np.asarray(np.sum(x.data, axis=axis))

    def backward(g):
        if axis is None:
            return (np.full(x.shape, g, dtype=x.dtype),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make('sum', out, (x,), backward)


def reduce_mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    count = x.size if axis is None else x.shape[axis]
    return mul(reduce_sum(x, axis), 1.0 / count)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make('softmax', out, (x,),
                 lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    return _make('log_softmax', out, (x,),
                 lambda g: (g - np.exp(out) * g.sum(axis=axis, keepdims=True),))


# ── structure ──────────────────────────────────────────────────────────────

def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    return _make('concat', np.concatenate([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    return _make('stack', np.stack([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))))


def select(x: Tensor, index: int, axis: int = 1) -> Tensor:
    """x.take(index, axis), dropping that axis."""
    def backward(g):
        full = np.zeros_like(x.data)
        where = [slice(None)] * x.ndim
        where[axis] = index
        full[tuple(where)] = g
        return (full,)

    return _make('select', np.take(x.data, index, axis=axis), (x,), backward)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    def backward(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        return (full,)

    return _make('slice', x.data[..., start:stop], (x,), backward)


def embedding(weight: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    vocab = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise TargetIndexError(f"embedding: token id outside [0, {vocab})")

    def backward(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids, g)
        return (gw,)

    return _make('embedding', weight.data[ids], (weight,), backward)


# ── attention kernels ──────────────────────────────────────────────────────

def batched_dot(keys: Tensor, query: Tensor) -> Tensor:
    """scores[b, l] = <keys[b, l, :], query[b, :]>"""
    if keys.ndim != 3 or query.ndim != 2 or keys.shape[0] != query.shape[0] \
            or keys.shape[2] != query.shape[1]:
        raise ShapeError(f"batched_dot: shapes {keys.shape} and {query.shape} do not conform")
    return _make('batched_dot', np.einsum('blh,bh->bl', keys.data, query.data), (keys, query),
                 lambda g: (g[:, :, None] * query.data[:, None, :],
                            np.einsum('bl,blh->bh', g, keys.data)))


def weighted_sum(weights: Tensor, values: Tensor) -> Tensor:
    """out[b, :] = sum_l weights[b, l] * values[b, l, :]"""
    if weights.ndim != 2 or values.ndim != 3 or weights.shape != values.shape[:2]:
        raise ShapeError(f"weighted_sum: shapes {weights.shape} and {values.shape} do not conform")
    return _make('weighted_sum', np.einsum('bl,blh->bh', weights.data, values.data),
                 (weights, values),
                 lambda g: (np.einsum('bh,blh->bl', g, values.data),
                            weights.data[:, :, None] * g[:, None, :]))


# ── loss ───────────────────────────────────────────────────────────────────

def nll_loss(log_probs: Tensor, targets, weights) -> Tensor:
    """
    Weighted negative log-likelihood: l_n = -w[y_n] * log_probs[n, y_n],
    averaged over the total weight of the positions. All-zero weight gives
    a zero loss with a zero gradient.
    """
    targets = np.asarray(targets, dtype=np.int64)
    weights = np.asarray(weights, dtype=log_probs.dtype)
    if log_probs.ndim != 2 or targets.shape != (log_probs.shape[0],):
        raise ShapeError(f"nll_loss: log_probs {log_probs.shape} vs targets {targets.shape}")
    n, vocab = log_probs.shape
    if weights.shape != (vocab,):
        raise ShapeError(f"nll_loss: weights {weights.shape} vs {vocab} classes")
    bad = (targets < 0) | (targets >= vocab)
    if bad.any():
        raise TargetIndexError(f"nll_loss: target {int(targets[bad][0])} outside [0, {vocab})")

    rows = np.arange(n)
    w = weights[targets]
    total = w.sum()
    if total > 0:
        value = -(w * log_probs.data[rows, targets]).sum() / total
    else:
        value = 0.0

    def backward(g):
        grad = np.zeros_like(log_probs.data)
        if total > 0:
            grad[rows, targets] = -w / total * g
        return (grad,)

    return _make('nll_loss', np.asarray(value, dtype=log_probs.dtype), (log_probs,), backward)


# ── reverse pass ───────────────────────────────────────────────────────────

def backward(loss: Tensor):
    """Populate .grad on every requires_grad tensor reachable from `loss`."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if loss._generation == -1:
        loss.grad = np.ones_like(loss.data)
        return
    tape = current_tape()
    if loss._generation != tape.generation:
        raise ContractError("tape already consumed; recompute the loss before calling backward")

    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        g = node.output.grad
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.grad is None:
                inp.grad = np.array(gi, dtype=inp.dtype)
            else:
                inp.grad = inp.grad + gi
        node.output.grad = None
    tape.clear()


# ── seeding and initialisation ─────────────────────────────────────────────

def make_rng(seed: int) -> np.random.Generator:
    """The single documented generator: numpy PCG64 seeded with a 64-bit integer."""
    return np.random.Generator(np.random.PCG64(seed))


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   dtype=np.float64) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def uniform_bias(rng: np.random.Generator, fan_in: int, size: int, dtype=np.float64) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=size).astype(dtype)
