"""Dense tensors with a reverse-mode gradient tape.

Every differentiable op records a :class:`Node` on the active :class:`Tape`.
``backward`` walks the tape in reverse insertion order, which is a valid
topological order because an op can only consume tensors that already exist.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import UsageError

DEFAULT_DTYPE = np.float32


class Tensor:
    """A dense float array (NCHW for images) with an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "node", "detached", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node: Optional[Node] = None
        self.detached = False
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g: np.ndarray):
        if self.detached:
            return
        if g.shape != self.data.shape:
            g = g.reshape(self.data.shape)
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # operator sugar, resolved lazily to avoid an import cycle with ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def sum(self):
        from . import ops
        return ops.sum(self)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Node:
    __slots__ = ("inputs", "output", "backward_fn", "op")

    def __init__(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward_fn: BackwardFn):
        self.op = op
        self.inputs = tuple(inputs)
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of differentiable operations."""

    def __init__(self):
        self.nodes: list[Node] = []

    def record(self, node: Node):
        self.nodes.append(node)

    def clear(self):
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: Tensor):
        if loss.data.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.node is None:
            # constant w.r.t. every leaf (e.g. fully detached): all gradients are zero
            self.clear()
            return
        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = pending.pop(id(node.output), None)
            if g is None:
                continue
            grads = node.backward_fn(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or not inp.requires_grad or inp.detached:
                    continue
                if inp.node is None:
                    inp.accumulate(gi)
                else:
                    key = id(inp)
                    if key in pending:
                        pending[key] = pending[key] + gi
                    else:
                        pending[key] = gi
        self.clear()


class _GradMode:
    enabled = True
    tape = Tape()
    # detach recorder/replayer used by the finite-difference checker
    detach_log: Optional[list] = None
    detach_replay: Optional[list] = None


def current_tape() -> Tape:
    return _GradMode.tape


def is_grad_enabled() -> bool:
    return _GradMode.enabled


@contextlib.contextmanager
def no_grad():
    prev = _GradMode.enabled
    _GradMode.enabled = False
    try:
        yield
    finally:
        _GradMode.enabled = prev


@contextlib.contextmanager
def fresh_tape():
    """Run the block against an isolated tape and restore the previous one."""
    prev = _GradMode.tape
    _GradMode.tape = Tape()
    try:
        yield _GradMode.tape
    finally:
        _GradMode.tape = prev


def make_result(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    out = Tensor(data)
    if _GradMode.enabled and any(t.requires_grad and not t.detached for t in inputs):
        out.requires_grad = True
        node = Node(op, inputs, out, backward_fn)
        out.node = node
        _GradMode.tape.record(node)
    return out


def detach(x: Tensor) -> Tensor:
    """Same values as ``x`` with the tape lineage cut: no gradient flows back."""
    if _GradMode.detach_replay is not None:
        data = _GradMode.detach_replay.pop(0)
    else:
        data = x.data
        if _GradMode.detach_log is not None:
            _GradMode.detach_log.append(data.copy())
    out = Tensor(data)
    out.detached = True
    return out


def backward(loss: Tensor):
    """Populate ``.grad`` on every non-detached leaf reachable from ``loss``."""
    current_tape().backward(loss)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def parameter(data, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)
