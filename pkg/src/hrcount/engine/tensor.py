"""Tensor type, gradient tape and the reverse-mode pass."""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class NonFiniteError(ArithmeticError):
    """Raised when an engine operation produces NaN or Inf."""


class Node:
    __slots__ = ("out", "inputs", "backward", "index", "tape", "name")

    def __init__(self, out, inputs, backward, name):
        self.out = out
        self.inputs = inputs
        self.backward = backward
        self.name = name
        self.index = -1
        self.tape = None


class Tape:
    """Ordered record of executed operations.

    Recording order is execution order, so walking the list backwards is a
    reverse topological traversal. A tape is freed by the first backward pass
    that consumes it.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.freed = False

    def record(self, node: Node) -> None:
        if self.freed:
            raise RuntimeError("cannot record on a freed tape")
        node.index = len(self.nodes)
        node.tape = self
        self.nodes.append(node)

    def free(self) -> None:
        for node in self.nodes:
            node.out._node = None
            node.out.requires_grad = False
        self.nodes.clear()
        self.freed = True

    def __len__(self) -> int:
        return len(self.nodes)


class _State(threading.local):
    def __init__(self) -> None:
        self.tape: Optional[Tape] = None
        self.grad_enabled = True


_state = _State()


def current_tape() -> Tape:
    """The calling thread's live tape, created on demand."""
    if _state.tape is None or _state.tape.freed:
        _state.tape = Tape()
    return _state.tape


def is_grad_enabled() -> bool:
    return _state.grad_enabled


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block (inference, finite differences)."""
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def _as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """N-dimensional real array that can take part in the gradient tape.

    Leaves created with ``requires_grad=True`` own a zero-initialised ``grad``
    buffer of the same shape. Intermediate results never retain gradients.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = _as_float_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._node: Optional[Node] = None

    @classmethod
    def _result(cls, data: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.grad = None
        t._node = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
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

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.requires_grad:
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
            else:
                self.grad.fill(0)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic is delegated to ops to keep the backward rules in one place
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

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis)

    def mean(self):
        from . import ops
        return ops.mean(self)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn,
                name: str) -> Tensor:
    """Wrap an op result and record it when any input needs gradients."""
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{name} produced non-finite values")
    out = Tensor._result(data)
    if _state.grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(out, tuple(inputs), backward_fn, name)
        current_tape().record(node)
        out._node = node
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    The tape holding ``loss`` is freed afterwards; calling backward twice on
    the same graph is an error, but leaf gradients accumulate across graphs
    until zeroed.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    node = loss._node
    if node is None or node.tape is None or node.tape.freed:
        raise ValueError("loss is not on a live tape")
    tape = node.tape
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for nd in reversed(tape.nodes[: node.index + 1]):
        g = pending.pop(id(nd.out), None)
        if g is None:
            continue
        for inp, gi in zip(nd.inputs, nd.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp._node is not None and inp._node.tape is tape:
                key = id(inp)
                if key in pending:
                    pending[key] = pending[key] + gi
                else:
                    pending[key] = gi
            else:
                gi = np.asarray(gi, dtype=inp.data.dtype).reshape(inp.data.shape)
                if inp.grad is None:
                    inp.grad = gi.copy()
                else:
                    inp.grad += gi
    tape.free()
