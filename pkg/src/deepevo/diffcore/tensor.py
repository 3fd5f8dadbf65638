"""Dense float64 tensors and a recording tape for reverse-mode gradients.

Operations record themselves on the innermost active :class:`Tape` when any
input requires a gradient. Outside a tape (or inside :func:`no_grad`) they run
as plain numpy arithmetic, which is what the evolutionary loops use for
inference.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_TAPES: list["Tape"] = []
_GRAD_ENABLED = [True]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class DomainError(ValueError):
    """Raised when an input lies outside an operation's domain."""


class BackwardError(RuntimeError):
    """Raised on an invalid backward request."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "_index")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None
        self._index = -1

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.name = None
        t._tape = None
        t._index = -1
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def values(self) -> list[float]:
        """Row-major flat copy of the values."""
        return self.data.ravel().tolist()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar; the functions live in ``ops``
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
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, key):
        from . import ops
        return ops.getitem(self, key)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=np.float64))


class _Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of operations with their backward rules.

    Use as a context manager; every op executed inside appends a node. One
    tape supports exactly one :meth:`backward` call, after which the recorded
    graph is released.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, inputs: Sequence[Tensor], output: Tensor, backward: Callable) -> None:
        output._tape = self
        output._index = len(self.nodes)
        output.requires_grad = True
        self.nodes.append(_Node(tuple(inputs), output, backward))

    def leaves(self) -> list[Tensor]:
        seen: dict[int, Tensor] = {}
        for node in self.nodes:
            for t in node.inputs:
                if t.requires_grad and t._tape is not self:
                    seen.setdefault(id(t), t)
        return list(seen.values())

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise BackwardError("backward already ran on this tape; record a new one")
        if loss.data.size != 1:
            raise BackwardError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise BackwardError("loss was not produced on this tape")
        self.consumed = True
        for leaf in self.leaves():
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes[: loss._index + 1]):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if t._tape is self:
                    prev = grads.get(id(t))
                    grads[id(t)] = gi if prev is None else prev + gi
                else:
                    t.grad += gi
        # drop the graph: nodes and outputs reference each other, and waiting
        # for the cycle collector keeps large intermediates alive
        self.nodes.clear()


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf that reaches ``loss``."""
    if loss._tape is None:
        raise BackwardError("loss was not recorded on any tape")
    loss._tape.backward(loss)


def active_tape() -> Tape | None:
    if not _TAPES or not _GRAD_ENABLED[-1]:
        return None
    return _TAPES[-1]


@contextlib.contextmanager
def no_grad():
    """Suspend recording; ops become plain numpy evaluations."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = np.zeros_like(p.data)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)
