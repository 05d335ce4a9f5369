"""
Tensor Core
Dense NCHW tensors with a reverse-mode gradient tape

GELU uses the tanh approximation:
    gelu(x) = 0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))
    gelu'(x) = 0.5 * (1 + t) + 0.5 * x * (1 - t^2) * sqrt(2/pi) * (1 + 3 * 0.044715 * x^2)
with t = tanh(sqrt(2/pi) * (x + 0.044715 * x^3)).

Gradients accumulate into leaf ``grad`` buffers; callers zero them between
optimizer steps.
"""
import contextlib
import logging
import threading
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.errors import DimensionError, TensorIndexError, UsageError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float32
FLOAT_DTYPES = (np.float32, np.float64)

_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715

# grad mode is per thread
_grad_state = threading.local()

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
Operand = Union["Tensor", float, int]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run forward passes without recording a tape"""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


class Node:
    """One recorded operation: its inputs and the backward rule"""

    __slots__ = ("op", "inputs", "backward_fn")

    def __init__(self, op: str, inputs: Sequence["Tensor"], backward_fn: BackwardFn):
        self.op = op
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn


class Tensor:
    """Dense float array with optional gradient tape linkage"""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in FLOAT_DTYPES:
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        if np.dtype(dtype) not in FLOAT_DTYPES:
            raise UsageError(f"Unsupported tensor dtype: {dtype}")
        self.data = np.ascontiguousarray(np.asarray(data, dtype=dtype))
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def numel(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def astype(self, dtype) -> "Tensor":
        """Fresh leaf with the same values in another precision"""
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self) -> str:
        tag = f", op={self.node.op}" if self.node else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other: Operand) -> "Tensor":
        return add(self, other)

    def __sub__(self, other: Operand) -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: Operand) -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return scalar_mul(self, -1.0)


def as_tensor(value: Operand, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def make_result(data: np.ndarray, op: str, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap an op output and record it on the tape when any input needs gradients"""
    needs_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad, dtype=data.dtype)
    if needs_grad:
        out.node = Node(op, inputs, backward_fn)
    return out


class Tape:
    """Operations reaching a root tensor, in topological order"""

    def __init__(self, entries: List[Tensor]):
        self.entries = entries

    @classmethod
    def collect(cls, root: Tensor) -> "Tape":
        order: List[Tensor] = []
        seen = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in seen:
                continue
            seen.add(id(tensor))
            stack.append((tensor, True))
            for parent in tensor.node.inputs:
                if parent.node is not None and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.entries)

    def ops(self) -> List[str]:
        return [t.node.op for t in self.entries]


def backward(loss: Tensor):
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``"""
    if loss.node is None:
        raise UsageError("backward() called on a tensor with no tape")
    if loss.numel != 1:
        raise DimensionError(f"backward() needs a scalar loss, got shape {loss.shape}")

    tape = Tape.collect(loss)
    pending = {id(loss): np.ones_like(loss.data)}
    for tensor in reversed(tape.entries):
        grad_out = pending.pop(id(tensor), None)
        if grad_out is None:
            continue
        grads = tensor.node.backward_fn(grad_out)
        for parent, grad in zip(tensor.node.inputs, grads):
            if grad is None or not parent.requires_grad:
                continue
            if parent.node is None:
                if parent.grad is None:
                    parent.grad = np.array(grad, dtype=parent.dtype)
                else:
                    parent.grad += grad
            elif id(parent) in pending:
                pending[id(parent)] = pending[id(parent)] + grad
            else:
                pending[id(parent)] = grad


# ------------------------------------------------------------------ broadcasting

def _broadcast_view(a: Tensor, b: Tensor) -> Tuple[int, ...]:
    """Shape under which ``b`` broadcasts against ``a``"""
    if b.shape == a.shape:
        return b.shape
    if b.ndim == 1 and a.ndim == 4 and b.shape[0] == a.shape[1]:
        return (1, b.shape[0], 1, 1)
    try:
        joined = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        joined = None
    if joined != a.shape:
        axis = _first_mismatch(a.shape, b.shape)
        raise DimensionError(
            f"Operand shape {b.shape} does not broadcast to {a.shape} (axis {axis})"
        )
    return b.shape


def _first_mismatch(a: Tuple[int, ...], b: Tuple[int, ...]) -> int:
    offset = len(a) - len(b)
    for i in range(len(a)):
        j = i - offset
        if j < 0:
            continue
        if b[j] not in (1, a[i]):
            return i
    return 0


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` along broadcast axes"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ------------------------------------------------------------------ elementwise

def add(a: Tensor, b: Operand) -> Tensor:
    b = as_tensor(b, a)
    view = _broadcast_view(a, b)
    out = a.data + b.data.reshape(view)

    def backward_fn(g):
        return g, unbroadcast(g, view).reshape(b.shape)

    return make_result(out, "add", (a, b), backward_fn)


def sub(a: Tensor, b: Operand) -> Tensor:
    b = as_tensor(b, a)
    view = _broadcast_view(a, b)
    out = a.data - b.data.reshape(view)

    def backward_fn(g):
        return g, -unbroadcast(g, view).reshape(b.shape)

    return make_result(out, "sub", (a, b), backward_fn)


def mul(a: Tensor, b: Operand) -> Tensor:
    b = as_tensor(b, a)
    view = _broadcast_view(a, b)
    bv = b.data.reshape(view)
    out = a.data * bv

    def backward_fn(g):
        return g * bv, unbroadcast(g * a.data, view).reshape(b.shape)

    return make_result(out, "mul", (a, b), backward_fn)


def scalar_mul(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = a.data * a.dtype.type(s)

    def backward_fn(g):
        return (g * g.dtype.type(s),)

    return make_result(out, "scalar_mul", (a,), backward_fn)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = np.where(mask, a.data, 0).astype(a.dtype)

    def backward_fn(g):
        return (g * mask,)

    return make_result(out, "relu", (a,), backward_fn)


def gelu(a: Tensor) -> Tensor:
    x = a.data
    t = np.tanh(_GELU_C * (x + _GELU_A * x ** 3))
    out = (0.5 * x * (1.0 + t)).astype(a.dtype)

    def backward_fn(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        return ((g * (0.5 * (1.0 + t) + 0.5 * x * dt)).astype(a.dtype),)

    return make_result(out, "gelu", (a,), backward_fn)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)

    def backward_fn(g):
        return (g * y * (1.0 - y),)

    return make_result(y, "sigmoid", (a,), backward_fn)


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)

    def backward_fn(g):
        return (g * sign,)

    return make_result(np.abs(a.data), "abs", (a,), backward_fn)


_BINARY = {"add": add, "sub": sub, "mul": mul}
_UNARY = {"relu": relu, "gelu": gelu, "sigmoid": sigmoid}


def elementwise(op: str, a: Tensor, b: Optional[Operand] = None) -> Tensor:
    """Dispatch one of add, sub, mul, scalar_mul, relu, gelu, sigmoid"""
    if op in _BINARY:
        if b is None:
            raise UsageError(f"{op} needs a second operand")
        return _BINARY[op](a, b)
    if op == "scalar_mul":
        if b is None or isinstance(b, Tensor):
            raise UsageError("scalar_mul needs a Python scalar operand")
        return scalar_mul(a, b)
    if op in _UNARY:
        return _UNARY[op](a)
    raise UsageError(f"Unknown elementwise op: {op}")


# ------------------------------------------------------------------ reductions

def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.dtype).reshape(1, 1, 1, 1)

    def backward_fn(g):
        return (np.broadcast_to(g.reshape(()), a.shape).astype(a.dtype),)

    return make_result(out, "sum", (a,), backward_fn)


def mean_all(a: Tensor) -> Tensor:
    n = a.numel
    out = np.asarray(a.data.mean(), dtype=a.dtype).reshape(1, 1, 1, 1)

    def backward_fn(g):
        return (np.full(a.shape, g.reshape(()) / n, dtype=a.dtype),)

    return make_result(out, "mean", (a,), backward_fn)


# ------------------------------------------------------------------ channel layout

def _require_rank4(x: Tensor, op: str):
    if x.ndim != 4:
        raise DimensionError(f"{op} expects an N,C,H,W tensor, got shape {x.shape}")


def channel_concat(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise DimensionError("channel_concat needs at least one part")
    for p in parts:
        _require_rank4(p, "channel_concat")
    ref = parts[0].shape
    for p in parts[1:]:
        for axis, name in ((0, "N"), (2, "H"), (3, "W")):
            if p.shape[axis] != ref[axis]:
                raise DimensionError(
                    f"channel_concat: axis {axis} ({name}) mismatch {p.shape[axis]} != {ref[axis]}"
                )
    sizes = [p.shape[1] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=1)
    bounds = np.cumsum([0] + sizes)

    def backward_fn(g):
        return [g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts))]

    return make_result(out, "concat", tuple(parts), backward_fn)


def channel_split(x: Tensor, boundary: int) -> Tuple[Tensor, Tensor]:
    _require_rank4(x, "channel_split")
    channels = x.shape[1]
    if not 0 < boundary < channels:
        raise TensorIndexError(f"Split boundary {boundary} outside (0, {channels})")

    def first_backward(g):
        grad = np.zeros_like(x.data)
        grad[:, :boundary] = g
        return (grad,)

    def second_backward(g):
        grad = np.zeros_like(x.data)
        grad[:, boundary:] = g
        return (grad,)

    first = make_result(x.data[:, :boundary].copy(), "split", (x,), first_backward)
    second = make_result(x.data[:, boundary:].copy(), "split", (x,), second_backward)
    return first, second
