"""A small dense-tensor engine with tape-based reverse-mode differentiation.

Values are float64 numpy arrays.  Every differentiable operation that touches a
tracked tensor appends a :class:`Node` to the active :class:`Tape`; calling
:func:`backward` on a scalar walks that tape in reverse.  Ops accept optional
leading batch dimensions (``(..., m, n)``); parameters broadcast across them
and their gradients are summed back to the parameter shape.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .errors import AlignmentError, ContractError, DimensionError, DomainError, NumericError

LN_EPS = 1e-5
LOG_EPS = 1e-8


class Node:
    """One recorded op: its inputs, its position on the tape and its backward rule."""

    __slots__ = ("inputs", "backward_fn", "tape", "index")

    def __init__(self, inputs, backward_fn, tape, index):
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.tape = tape
        self.index = index


class Tape:
    """Ordered record of operations.

    Used as a context manager, a tape becomes the recording target for every op
    evaluated inside the ``with`` block.  Outside any block ops record onto a
    process-wide default tape, which :meth:`reset` can empty.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def record(self, inputs, backward_fn) -> Node:
        node = Node(inputs, backward_fn, self, len(self.nodes))
        self.nodes.append(node)
        return node

    def reset(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack.pop()
        return False


_default_tape = Tape()
_tape_stack: list[Tape | None] = []


def active_tape() -> Tape | None:
    if _tape_stack:
        return _tape_stack[-1]
    return _default_tape


def default_tape() -> Tape:
    return _default_tape


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording anything."""
    _tape_stack.append(None)
    try:
        yield
    finally:
        _tape_stack.pop()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self._node is not None

    @property
    def tape_node(self) -> Node | None:
        return self._node

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = False
    out._node = None
    tape = active_tape()
    if tape is not None and any(t.tracked for t in inputs):
        out._node = tape.record(tuple(inputs), backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


# ----------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make(out, (a, b), bw)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    mask = a.data > floor

    def bw(g):
        return (g * mask,)

    return _make(np.where(mask, a.data, floor), (a,), bw)


# ----------------------------------------------------------------------------
# shape manipulation


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise DimensionError(f"transpose needs at least 2 dims, got shape {a.shape}")

    def bw(g):
        return (_swap(g),)

    return _make(_swap(a.data), (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        return (g.reshape(a.shape),)

    return _make(a.data.reshape(shape), (a,), bw)


def getitem(a: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing.  Fancy indexing is not supported."""

    def bw(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _make(a.data[index].copy(), (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(data, tensors, bw)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ----------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        return _unbroadcast(g @ _swap(b.data), a.shape), _unbroadcast(_swap(a.data) @ g, b.shape)

    return _make(a.data @ b.data, (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def bilinear(x: Tensor, y: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``out[..., i, j] = x[..., i, :] @ weight[j] @ y[..., i, :] + bias[j]``."""
    if x.shape[:-1] != y.shape[:-1]:
        raise AlignmentError(f"bilinear row mismatch: {x.shape} vs {y.shape}")
    k, p, q = weight.shape
    if x.shape[-1] != p or y.shape[-1] != q or bias.shape != (k,):
        raise DimensionError(
            f"bilinear shape mismatch: x {x.shape}, y {y.shape}, W {weight.shape}, b {bias.shape}"
        )
    # xw[..., i, j, :] = x[..., i, :] @ W[j]
    xw = np.einsum("...p,kpq->...kq", x.data, weight.data)
    out = np.einsum("...kq,...q->...k", xw, y.data) + bias.data

    def bw(g):
        gy = np.einsum("...k,...kq->...q", g, xw)
        wy = np.einsum("kpq,...q->...kp", weight.data, y.data)
        gx = np.einsum("...k,...kp->...p", g, wy)
        lead = "".join("abcdefgh"[: x.ndim - 1])
        gw = np.einsum(f"{lead}k,{lead}p,{lead}q->kpq", g, x.data, y.data)
        gb = g.reshape(-1, k).sum(axis=0)
        return gx, gy, gw, gb

    return _make(out, (x, y, weight, bias), bw)


# ----------------------------------------------------------------------------
# nonlinearities and normalisation


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        return (g * mask,)

    return _make(a.data * mask, (a,), bw)


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    factor = np.where(a.data > 0, 1.0, slope)

    def bw(g):
        return (g * factor,)

    return _make(a.data * factor, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # branch on sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def bw(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), bw)


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last axis with per-row max subtraction."""
    if np.isnan(a.data).any():
        raise NumericError("softmax_rows received NaN input")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (a,), bw)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalise each row (last axis) to zero mean / unit variance, then scale and shift."""
    n = a.shape[-1]
    if n < 1 or gain.shape != (n,) or bias.shape != (n,):
        raise DimensionError(f"layer_norm shape mismatch: input {a.shape}, gain {gain.shape}, bias {bias.shape}")
    xc = a.data - a.data.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        gx = g * gain.data
        ga = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        ggain = (g * xhat).reshape(-1, n).sum(axis=0)
        gbias = g.reshape(-1, n).sum(axis=0)
        return ga, ggain, gbias

    return _make(out, (a, gain, bias), bw)


def conv1d_pointwise_ff(a: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Two kernel-size-1 convolutions over time with a ReLU between them.

    A pointwise convolution is an affine map applied independently at every
    timestamp, so weights are stored as (in, out) matrices.
    """
    if a.shape[-1] != w1.shape[0] or w1.shape[1] != w2.shape[0]:
        raise DimensionError(f"feedforward shape mismatch: input {a.shape}, w1 {w1.shape}, w2 {w2.shape}")
    return linear(relu(linear(a, w1, b1)), w2, b2)


# ----------------------------------------------------------------------------
# divergences


def _check_prob(t: Tensor, label: str):
    if (t.data < 0).any():
        raise DomainError(f"{label} has negative entries; KL needs probability rows")


def kl_per_row(p: Tensor, q: Tensor) -> Tensor:
    """Row-wise KL(p || q) over the last axis; entries clamped at 1e-8 before the log."""
    p, q = as_tensor(p), as_tensor(q)
    if p.shape != q.shape:
        raise DimensionError(f"kl shape mismatch: {p.shape} vs {q.shape}")
    _check_prob(p, "p")
    _check_prob(q, "q")
    pc = np.maximum(p.data, LOG_EPS)
    qc = np.maximum(q.data, LOG_EPS)
    log_ratio = np.log(pc) - np.log(qc)
    out = (p.data * log_ratio).sum(axis=-1)

    def bw(g):
        g = g[..., None]
        gp = g * (log_ratio + (p.data > LOG_EPS))
        gq = g * np.where(q.data > LOG_EPS, -p.data / qc, 0.0)
        return gp, gq

    return _make(out, (p, q), bw)


def kl_rows(p: Tensor, q: Tensor) -> Tensor:
    """Sum over all rows of KL(p_row || q_row) as a scalar tensor."""
    return sum(kl_per_row(p, q))


def js_per_row(p: Tensor, q: Tensor) -> Tensor:
    """Row-wise Jensen-Shannon divergence (natural log, so bounded by ln 2)."""
    m = mul(add(p, q), 0.5)
    return mul(add(kl_per_row(p, m), kl_per_row(q, m)), 0.5)


# ----------------------------------------------------------------------------
# gradient control


def stop_gradient(a: Tensor) -> Tensor:
    """Value copy that is invisible to the tape."""
    return Tensor(a.data.copy(), requires_grad=False)


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires-grad leaf.

    The tape is left intact, so a second call without resetting grads adds the
    same contribution again.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    node = loss._node
    if node is None:
        return
    tape = node.tape
    cot: dict[int, np.ndarray] = {node.index: np.ones_like(loss.data)}
    leaf_grads: dict[int, np.ndarray] = {}
    leaves: dict[int, Tensor] = {}
    for idx in range(node.index, -1, -1):
        current = tape.nodes[idx]
        g = cot.pop(idx, None)
        for inp in current.inputs:
            if inp._node is None and inp.requires_grad and id(inp) not in leaves:
                leaves[id(inp)] = inp
        if g is None:
            continue
        grads = current.backward_fn(g)
        for inp, gi in zip(current.inputs, grads):
            if gi is None or not inp.tracked:
                continue
            if inp._node is not None and inp._node.tape is tape:
                key = inp._node.index
                cot[key] = cot[key] + gi if key in cot else gi
            elif inp._node is None:
                key = id(inp)
                leaf_grads[key] = leaf_grads[key] + gi if key in leaf_grads else gi
    for key, leaf in leaves.items():
        g = leaf_grads.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
