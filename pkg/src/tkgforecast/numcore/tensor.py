"""Dense float64 tensors with a define-by-run reverse-mode tape.

Operations only record onto a tape while one is active (``with Tape() as
tape``).  Outside a tape every op is a plain numpy evaluation, which is what
inference and finite-difference probing use.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, NonFiniteError

CHECK_FINITE = True

_active_tapes: list["Tape"] = []


def _as_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = data if isinstance(data, np.ndarray) and data.dtype == np.float64 else _as_array(data)
        self.requires_grad = requires_grad
        self.name = name
        self._node: _Node | None = None
        self.grad = np.zeros_like(self.data) if requires_grad else None

    # -- introspection -------------------------------------------------
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
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # -- operator sugar; implementations live in ops -------------------
    def __add__(self, other):
        return _ops.add(self, other)

    def __radd__(self, other):
        return _ops.add(other, self)

    def __sub__(self, other):
        return _ops.sub(self, other)

    def __rsub__(self, other):
        return _ops.sub(other, self)

    def __mul__(self, other):
        return _ops.mul(self, other)

    def __rmul__(self, other):
        return _ops.mul(other, self)

    def __truediv__(self, other):
        return _ops.div(self, other)

    def __rtruediv__(self, other):
        return _ops.div(other, self)

    def __neg__(self):
        return _ops.neg(self)

    def __matmul__(self, other):
        return _ops.matmul(self, other)

    def __getitem__(self, key):
        return _ops.getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return _ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return _ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops.reshape(self, shape)

    def transpose(self, *axes):
        return _ops.transpose(self, axes or None)

    @property
    def T(self):
        return _ops.transpose(self, None)


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out: Tensor, parents: Sequence[Tensor], backward: Callable):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations for one backward pass.

    A tape is single use: after :meth:`backward` it is cleared and any
    further backward call raises :class:`ContractError`.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.used = False

    def __enter__(self) -> "Tape":
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tapes.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def active_tape() -> Tape | None:
    return _active_tapes[-1] if _active_tapes else None


def make_output(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Wrap an op result, recording it on the active tape when needed.

    ``backward_fn(g)`` must return one gradient (or ``None``) per parent.
    """
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        node = _Node(out, parents, backward_fn)
        out._node = node
        tape.nodes.append(node)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Propagate d(loss)/d(.) into ``grad`` of every tensor that requires it.

    Leaf gradients accumulate (call ``zero_grad`` between steps); gradients
    of recorded intermediates are overwritten.
    """
    if tape.used:
        raise ContractError("tape already consumed by a previous backward pass")
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape.used = True
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node.out), None)
        if g is None:
            continue
        node.out.grad = g
        for parent, pg in zip(node.parents, node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._node is None:
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += pg
            else:
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg
    if loss.is_leaf and loss.requires_grad:
        loss.grad = loss.grad + 1.0
    # release the recorded graph so surviving outputs do not pin every intermediate
    for node in tape.nodes:
        node.parents = ()
        node.backward = None
    tape.nodes = []


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


from . import ops as _ops  # noqa: E402
