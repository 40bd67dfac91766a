"""Dense tensors and a single-use reverse-mode tape.

Every differentiable op appends a :class:`TapeNode` to the thread's active
tape. :func:`backward` walks the tape in exact reverse recording order and
then retires it, so each forward pass supports exactly one backward pass.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "AutogradError",
    "Parameter",
    "Tape",
    "TapeNode",
    "Tensor",
    "active_tape",
    "backward",
    "grad_enabled",
    "no_grad",
    "record",
]


class AutogradError(RuntimeError):
    """Raised for misuse of the tape (foreign tensors, reused tapes)."""


class Tensor:
    """A dense real array of rank 1-4 that may take part in autograd.

    ``data`` is a numpy array owned by the tensor. Leaf tensors created with
    ``requires_grad=True`` accumulate their gradient into ``grad`` when a
    loss depending on them is back-propagated.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        if arr.ndim < 1 or arr.ndim > 4:
            raise ValueError(f"tensor rank must be 1-4, got shape {arr.shape}")
        if any(n < 1 for n in arr.shape):
            raise ValueError(f"tensor extents must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[TapeNode] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # no copy, no validation: used for op outputs
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._node = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


class Parameter(Tensor):
    """A named trainable tensor with gradient and Adam moment buffers."""

    __slots__ = ("name", "adam_m", "adam_v")

    def __init__(self, name: str, data, trainable: bool = True, dtype=None):
        super().__init__(data, requires_grad=trainable, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class TapeNode:
    __slots__ = ("op", "inputs", "backward_fn", "output", "tape", "index")

    def __init__(self, op: str, inputs, backward_fn: BackwardFn, output, tape, index):
        self.op = op
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn
        self.output = output
        self.tape = tape
        self.index = index


class Tape:
    """Ordered record of the ops of one forward pass."""

    def __init__(self) -> None:
        self.nodes: list[TapeNode] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self.nodes)


class _State(threading.local):
    def __init__(self) -> None:
        self.tape = Tape()
        self.enabled = True


_state = _State()


def active_tape() -> Tape:
    return _state.tape


def grad_enabled() -> bool:
    return _state.enabled


@contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording them (inference, finite differences)."""
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def record(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap ``out`` as a Tensor and put it on the tape if any input needs grad.

    ``backward_fn`` maps the upstream gradient to one gradient (or None) per
    input, in order.
    """
    result = Tensor._wrap(out)
    if _state.enabled and any(t.requires_grad for t in inputs):
        tape = _state.tape
        node = TapeNode(op, inputs, backward_fn, result, tape, len(tape.nodes))
        tape.nodes.append(node)
        result.requires_grad = True
        result._node = node
    return result


def backward(loss: Tensor) -> None:
    """Back-propagate from a scalar ``loss`` and retire the active tape.

    Gradients accumulate into ``.grad`` of every reachable leaf (including
    all trainable Parameters).
    """
    if loss.size != 1:
        raise AutogradError(f"backward needs a scalar loss, got shape {loss.shape}")
    node = loss._node
    tape = _state.tape
    if node is None or node.tape is not tape or tape.consumed:
        raise AutogradError("loss was not produced by the active tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for n in reversed(tape.nodes[: node.index + 1]):
        g = grads.pop(id(n.output), None)
        if g is None:
            continue
        for inp, gi in zip(n.inputs, n.backward_fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp._node is None:
                if inp.grad is None:
                    inp.grad = np.array(gi, dtype=inp.data.dtype)
                else:
                    inp.grad += gi
            else:
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi

    tape.consumed = True
    tape.nodes.clear()
    _state.tape = Tape()
