"""Dense float64 tensors with reverse-mode autodiff on an explicit tape.

Every operation validates shapes, computes the forward value with numpy,
rejects non-finite results, and, when any input tracks gradients, records
a backward closure on the active (thread-local) tape.  ``backward`` replays
the tape once in reverse, leaves gradients on the leaf tensors and clears
the tape.  Elementwise binary ops follow numpy broadcasting; gradients of
broadcast operands are summed back to the operand shape.
"""

from __future__ import annotations

import struct
import threading
from contextlib import contextmanager

import numpy as np
from scipy.special import erf, expit

from .exceptions import ContractError, DimensionError, InputError, NumericError

_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))

CHECKPOINT_MAGIC = b"GCPT"
CHECKPOINT_VERSION = 1


class Tensor:
    """A dense float64 array with optional gradient tracking.

    Attributes:
        data: the underlying contiguous float64 ndarray.
        grad: gradient ndarray of identical shape, populated by ``backward``.
        requires_grad: whether this tensor participates in differentiation.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        # note: ascontiguousarray would promote 0-d arrays to 1-d
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Convenience operators; all defer to the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __neg__(self):
        return multiply(self, -1.0)

    def __sub__(self, other):
        return add(self, multiply(other, -1.0))

    def __rsub__(self, other):
        return add(other, multiply(self, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return _reduce(self, axis, keepdims, mean=False)

    def mean(self, axis=None, keepdims: bool = False):
        return _reduce(self, axis, keepdims, mean=True)

    def abs(self):
        return absolute(self)

    def log(self):
        return log(self)

    def clamp(self, lo: float, hi: float):
        return clamp(self, lo, hi)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


class _Node:
    __slots__ = ("out", "backward")

    def __init__(self, out, backward):
        self.out = out
        self.backward = backward


class Tape:
    """Execution-ordered record of differentiable operations.

    Nodes are appended in forward execution order, which is a topological
    order of the computation graph, so a single reverse scan visits every
    node exactly once.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.enabled = True

    def clear(self):
        self.nodes = []


_state = threading.local()


def active_tape() -> Tape:
    tape = getattr(_state, "tape", None)
    if tape is None:
        tape = Tape()
        _state.tape = tape
    return tape


@contextmanager
def no_grad():
    """Suspend tape recording; forwards run but nothing is differentiable."""
    tape = active_tape()
    prev = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = prev


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finite_or_raise(op: str, arr: np.ndarray):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op} produced a non-finite value")


def _make(op: str, value: np.ndarray, inputs, backward_fn) -> Tensor:
    _finite_or_raise(op, value)
    tape = active_tape()
    track = tape.enabled and any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=track)
    if track:
        tape.nodes.append(_Node(out, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor):
    """Run reverse-mode accumulation from a scalar loss.

    Gradients are accumulated into ``.grad`` of every requires_grad leaf
    that contributed to the loss.  The active tape is cleared afterwards,
    including on error.
    """
    if not isinstance(loss, Tensor) or loss.data.ndim != 0:
        raise ContractError("backward requires a scalar tensor")
    tape = active_tape()
    if not tape.nodes:
        raise ContractError("backward called with an empty tape")
    try:
        produced = {id(n.out) for n in tape.nodes}
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for node in reversed(tape.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            holders.pop(id(node.out), None)
            for t, gt in node.backward(g):
                if not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gt
                else:
                    grads[key] = np.asarray(gt, dtype=np.float64)
                    holders[key] = t
        for key, g in grads.items():
            t = holders[key]
            if id(t) in produced:
                continue
            t.grad = g if t.grad is None else t.grad + g
    finally:
        tape.clear()


# ---------------------------------------------------------------------------
# Elementwise and linear algebra ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            value = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def grad(g):
        return [(a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))]

    return _make("add", value, (a, b), grad)


def multiply(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            value = a.data * b.data
    except ValueError:
        raise DimensionError(f"multiply: shapes {a.shape} and {b.shape} do not broadcast")

    def grad(g):
        return [
            (a, _unbroadcast(g * b.data, a.shape)),
            (b, _unbroadcast(g * a.data, b.shape)),
        ]

    return _make("multiply", value, (a, b), grad)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dims differ, {a.shape} vs {b.shape}")
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            value = a.data @ b.data
    except ValueError:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast")

    def grad(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return [(a, _unbroadcast(ga, a.shape)), (b, _unbroadcast(gb, b.shape))]

    return _make("matmul", value, (a, b), grad)


def gelu(x) -> Tensor:
    """Gaussian error linear unit, exact erf form."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    value = x.data * cdf

    def grad(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return [(x, g * (cdf + x.data * pdf))]

    return _make("gelu", value, (x,), grad)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    value = expit(x.data)

    def grad(g):
        return [(x, g * value * (1.0 - value))]

    return _make("sigmoid", value, (x,), grad)


def softmax(x) -> Tensor:
    """Softmax over the last axis; rows sum to one."""
    x = as_tensor(x)
    if x.ndim < 1:
        raise DimensionError("softmax: operand must have at least one axis")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=-1, keepdims=True)

    def grad(g):
        dot = (g * value).sum(axis=-1, keepdims=True)
        return [(x, (g - dot) * value)]

    return _make("softmax", value, (x,), grad)


def log_softmax(x) -> Tensor:
    """Numerically stable log of the last-axis softmax."""
    x = as_tensor(x)
    if x.ndim < 1:
        raise DimensionError("log_softmax: operand must have at least one axis")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    value = shifted - lse

    def grad(g):
        soft = np.exp(value)
        return [(x, g - soft * g.sum(axis=-1, keepdims=True))]

    return _make("log_softmax", value, (x,), grad)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with learned scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1] if x.ndim else 0
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm: gain/bias must be ({d},), got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    value = xhat * gain.data + bias.data

    def grad(g):
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        gx = (dxhat - m1 - xhat * m2) * inv
        lead = tuple(range(g.ndim - 1))
        return [
            (x, gx),
            (gain, (g * xhat).sum(axis=lead)),
            (bias, g.sum(axis=lead)),
        ]

    return _make("layer_norm", value, (x, gain, bias), grad)


def embedding_gather(table, ids) -> Tensor:
    """Select rows of a 2-d table by integer id; gradient scatter-adds."""
    table = as_tensor(table)
    if table.ndim != 2:
        raise DimensionError(f"embedding_gather: table must be 2-d, got {table.shape}")
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise InputError("embedding_gather: ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise InputError(
            f"embedding_gather: id out of range for table with {table.shape[0]} rows"
        )
    value = table.data[ids]

    def grad(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return [(table, gt)]

    return _make("embedding_gather", value, (table,), grad)


def take_rows(x, idx) -> Tensor:
    """Row selection from a 2-d tensor; alias of embedding_gather."""
    return embedding_gather(x, idx)


def clamp(x, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; zero gradient strictly outside the interval."""
    if not lo < hi:
        raise ContractError(f"clamp: lo must be < hi, got {lo} and {hi}")
    x = as_tensor(x)
    value = np.clip(x.data, lo, hi)

    def grad(g):
        inside = (x.data >= lo) & (x.data <= hi)
        return [(x, g * inside)]

    return _make("clamp", value, (x,), grad)


def absolute(x) -> Tensor:
    """Elementwise absolute value; subgradient 0 at the origin."""
    x = as_tensor(x)
    value = np.abs(x.data)

    def grad(g):
        return [(x, g * np.sign(x.data))]

    return _make("abs", value, (x,), grad)


def log(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.log(x.data)

    def grad(g):
        return [(x, g / x.data)]

    return _make("log", value, (x,), grad)


def _reduce(x: Tensor, axis, keepdims: bool, mean: bool) -> Tensor:
    op = "mean" if mean else "sum"
    if axis is not None and not isinstance(axis, int):
        raise ContractError(f"{op}: axis must be None or an int")
    if axis is not None and not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for shape {x.shape}")
    value = getattr(x.data, op)(axis=axis, keepdims=keepdims)
    scale = 1.0
    if mean:
        scale = 1.0 / (x.size if axis is None else x.shape[axis])

    def grad(g):
        g = np.asarray(g)
        if axis is None:
            gx = np.broadcast_to(g, x.shape)
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            gx = np.broadcast_to(g, x.shape)
        return [(x, gx * scale)]

    return _make(op, value, (x,), grad)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        value = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")

    def grad(g):
        return [(x, g.reshape(x.shape))]

    return _make("reshape", value, (x,), grad)


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose: axes {axes} invalid for shape {x.shape}")
    value = x.data.transpose(axes)
    inverse = np.argsort(axes)

    def grad(g):
        return [(x, g.transpose(inverse))]

    return _make("transpose", value, (x,), grad)


def concatenate(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concatenate: need at least one tensor")
    try:
        value = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concatenate: shapes {shapes} do not conform on axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grad(g):
        pieces = np.split(g, splits, axis=axis)
        return list(zip(tensors, pieces))

    return _make("concatenate", value, tuple(tensors), grad)


# ---------------------------------------------------------------------------
# Checkpoint serialization
#
# Layout, all little-endian: magic "GCPT", version u32, tensor count u32,
# then per tensor {name length u32, UTF-8 name, rank u32, dims u32 each,
# float64 payload}.


def save_checkpoint(path, params: dict):
    """Write named arrays to a binary checkpoint file."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(params)))
        for name, value in params.items():
            arr = value.data if isinstance(value, Tensor) else np.asarray(value)
            arr = np.asarray(arr, dtype="<f8", order="C")
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            if arr.ndim:
                f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> dict:
    """Read a checkpoint written by save_checkpoint; returns name -> ndarray."""

    def read(f, n, what):
        buf = f.read(n)
        if len(buf) != n:
            raise InputError(f"checkpoint truncated while reading {what}")
        return buf

    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        if read(f, 4, "magic") != CHECKPOINT_MAGIC:
            raise InputError("not a checkpoint file (bad magic)")
        version, count = struct.unpack("<II", read(f, 8, "header"))
        if version != CHECKPOINT_VERSION:
            raise InputError(f"unsupported checkpoint version {version}")
        for _ in range(count):
            (nlen,) = struct.unpack("<I", read(f, 4, "name length"))
            name = read(f, nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", read(f, 4, "rank"))
            dims = struct.unpack(f"<{rank}I", read(f, 4 * rank, "dims")) if rank else ()
            n = int(np.prod(dims)) if rank else 1
            payload = read(f, 8 * n, f"payload of {name}")
            out[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    return out
