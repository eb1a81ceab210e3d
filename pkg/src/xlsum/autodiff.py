"""Dense float64 tensors with reverse-mode automatic differentiation.

Just enough machinery to train a tiny transformer on one CPU core: a Tensor
wraps a numpy float64 array, every primitive records a backward closure, and
``backward`` replays the tape (a topologically ordered node list) in reverse.

Conventions:
  * everything is float64; verification beats speed at this scale
  * losses are minimized (objectives stated as log-prob sums are negated)
  * gradients accumulate into ``.grad`` until ``zero_grad`` clears them
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (used for decoding/eval)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-dimensional float64 array with optional gradient tracking.

    ``data`` is treated as immutable once the tensor participates in a graph;
    the optimizer mutates leaf parameters only between training steps.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; all graph logic lives in the module-level primitives
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data, requires_grad: bool = True) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original input shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tape:
    """Topologically ordered record of the graph reachable from a root.

    Every node's parents precede it in ``nodes``; the backward pass walks the
    list once in reverse, so each operation is visited exactly one time.
    """

    def __init__(self, root: Tensor):
        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                nodes.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        self.nodes = nodes


def backward(loss: Tensor) -> None:
    """Populate ``grad`` for every requires_grad tensor reachable from ``loss``.

    Repeated calls without ``zero_grad`` accumulate, matching the linearity
    of differentiation: backward(a) then backward(b) equals backward(a + b).
    """
    if loss.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = Tape(loss)
    local: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = local.get(id(node))
        if g is None:
            continue
        if node._backward is not None:
            _run_backward(node, g, local)
    for node in tape.nodes:
        g = local.get(id(node))
        if g is not None:
            node.accumulate_grad(g)


def _run_backward(node: Tensor, g: np.ndarray, local: dict[int, np.ndarray]) -> None:
    def sink(parent: Tensor, grad: np.ndarray) -> None:
        if not parent.requires_grad:
            return
        key = id(parent)
        if key in local:
            local[key] = local[key] + grad
        else:
            local[key] = np.array(grad, dtype=np.float64, copy=True)

    node._backward(g, sink)


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g, sink):
        sink(a, _unbroadcast(g, a.shape))
        sink(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bwd(g, sink):
        sink(a, _unbroadcast(g, a.shape))
        sink(b, _unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g, sink):
        sink(a, _unbroadcast(g * b.data, a.shape))
        sink(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def bwd(g, sink):
        sink(a, _unbroadcast(g / b.data, a.shape))
        sink(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), bwd)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g, sink):
        sink(a, -g)

    return _make(-a.data, (a,), bwd)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def bwd(g, sink):
        sink(a, g @ b.data.T)
        sink(b, a.data.T @ g)

    return _make(out_data, (a, b), bwd)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out_data = np.transpose(a.data, axes)
    inv = None if axes is None else tuple(np.argsort(axes))

    def bwd(g, sink):
        sink(a, np.transpose(g, inv))

    return _make(out_data, (a,), bwd)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def bwd(g, sink):
        sink(a, g.reshape(a.shape))

    return _make(out_data, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g, sink):
        for t, piece in zip(ts, np.split(g, offsets, axis=axis)):
            sink(t, piece)

    return _make(out_data, tuple(ts), bwd)


def slice_(a, key) -> Tensor:
    a = as_tensor(a)
    out_data = a.data[key]

    def bwd(g, sink):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        sink(a, full)

    return _make(out_data, (a,), bwd)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g, sink):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        sink(a, np.broadcast_to(g, a.shape).copy())

    return _make(out_data, (a,), bwd)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g, sink):
        sink(a, g * out_data)

    return _make(out_data, (a,), bwd)


def log(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g, sink):
        sink(a, g / a.data)

    return _make(np.log(a.data), (a,), bwd)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def bwd(g, sink):
        sink(a, g * 0.5 / out_data)

    return _make(out_data, (a,), bwd)


def relu(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g, sink):
        sink(a, g * (a.data > 0.0))

    return _make(np.maximum(a.data, 0.0), (a,), bwd)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g, sink):
        sink(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bwd)


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax; outputs along ``axis`` sum to 1."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g, sink):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        sink(a, out_data * (g - dot))

    return _make(out_data, (a,), bwd)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out_data = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bwd(g, sink):
        soft = np.exp(out_data)
        sink(a, g - soft * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (a,), bwd)


IGNORE_INDEX = -100


def cross_entropy(logits: Tensor, targets, ignore_index: int = IGNORE_INDEX) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under row-wise softmax.

    ``logits`` is [T, V]; positions whose target equals ``ignore_index``
    contribute nothing to the mean.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ValueError(f"cross_entropy expects [T, V] logits, got {logits.shape}")
    t = np.asarray(targets, dtype=np.int64)
    if t.ndim != 1 or t.shape[0] != logits.shape[0]:
        raise ValueError(f"targets shape {t.shape} does not match logits {logits.shape}")
    vocab = logits.shape[1]
    keep = t != ignore_index
    if np.any((t[keep] < 0) | (t[keep] >= vocab)):
        bad = t[keep][(t[keep] < 0) | (t[keep] >= vocab)][0]
        raise IndexError(f"target id {bad} out of range for vocab size {vocab}")
    n_kept = int(keep.sum())
    if n_kept == 0:
        raise ValueError("cross_entropy: all positions ignored")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.nonzero(keep)[0]
    out_data = -logp[rows, t[rows]].mean()

    def bwd(g, sink):
        grad = np.exp(logp)
        grad[rows, t[rows]] -= 1.0
        grad[~keep] = 0.0
        sink(logits, grad * (float(g) / n_kept))

    return _make(np.asarray(out_data), (logits,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale-shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out_data = xhat * gain.data + bias.data

    def bwd(g, sink):
        reduce_axes = tuple(range(g.ndim - 1))
        sink(gain, _unbroadcast((g * xhat).sum(axis=reduce_axes), gain.shape))
        sink(bias, _unbroadcast(g.sum(axis=reduce_axes), bias.shape))
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        sink(x, inv_std * (dxhat - m1 - xhat * m2))

    return _make(out_data, (x, gain, bias), bwd)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table`` by integer ids (any id-array shape)."""
    table = as_tensor(table)
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range for table with {table.shape[0]} rows")
    out_data = table.data[idx]

    def bwd(g, sink):
        grad = np.zeros_like(table.data)
        np.add.at(grad, idx, g)
        sink(table, grad)

    return _make(out_data, (table,), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    return out if b is None else add(out, b)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None = None, train: bool = False) -> Tensor:
    """Inverted dropout; identity when ``train`` is false or ``rate`` is 0.

    The mask comes from the caller's ``rng``, so results are deterministic
    given an explicitly seeded generator.
    """
    x = as_tensor(x)
    if not train or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("dropout in train mode needs an explicit rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def bwd(g, sink):
        sink(x, g * mask)

    return _make(x.data * mask, (x,), bwd)


# ---------------------------------------------------------------------------
# optimizer


def adam_step(
    params: Iterable[Tensor],
    grads: Iterable[np.ndarray],
    state: dict[int, list],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-9,
) -> None:
    """One Adam update, in place. ``state`` maps id(param) -> [t, m, v].

    Bias correction is tracked per parameter, so tensors that only receive
    gradients on some steps (alternating objectives) stay untouched on the
    steps where they get none.
    """
    for p, g in zip(params, grads):
        s = state.get(id(p))
        if s is None:
            s = [0, np.zeros_like(p.data), np.zeros_like(p.data)]
            state[id(p)] = s
        s[0] += 1
        t, m, v = s
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Adam with per-parameter step counts; updates only params that got grads."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-9):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state: dict[int, list] = {}

    def step(self, params: Iterable[Tensor]) -> list[Tensor]:
        touched = [p for p in params if p.grad is not None]
        adam_step(
            touched,
            [p.grad for p in touched],
            self.state,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
        )
        return touched

    def zero_grad(self, params: Iterable[Tensor]) -> None:
        for p in params:
            p.grad = None


def entropy_of(probs: np.ndarray) -> float:
    p = probs[probs > 0]
    return float(-(p * np.log(p)).sum())


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))
