"""Tensor type and the recording tape behind reverse-mode differentiation."""

import threading
from contextlib import contextmanager
from typing import Any, Optional, Sequence, Tuple

import numpy as np


class TapeError(RuntimeError):
    """Raised on misuse of the tape (replay, foreign tensors)."""


class Tape:
    """Ordered record of differentiable operations.

    Each record is ``(function, parents, node_id)``. Records are appended in
    execution order, so parents always precede their consumers.
    """

    def __init__(self) -> None:
        self.records: list = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self.records)

    def record(self, fn: "Function", parents: Sequence["Tensor"], out: "Tensor") -> None:
        if self.consumed:
            raise TapeError("cannot record onto a consumed tape")
        for p in parents:
            if p._tape is not None and p._tape is not self:
                raise TapeError("input tensor belongs to a different (possibly consumed) tape")
        out.node_id = len(self.records)
        out._tape = self
        self.records.append((fn, tuple(parents), out.node_id))


class _State(threading.local):
    def __init__(self) -> None:
        self.tape: Optional[Tape] = None
        self.enabled = True


_state = _State()


def current_tape() -> Tape:
    """Return the thread's active tape, starting a fresh one when needed."""
    if _state.tape is None or _state.tape.consumed:
        _state.tape = Tape()
    return _state.tape


def reset_tape() -> Tape:
    """Discard whatever has been recorded and start an empty tape."""
    _state.tape = Tape()
    return _state.tape


def grad_enabled() -> bool:
    return _state.enabled


@contextmanager
def no_grad():
    """Disable recording inside the block (evaluation, parameter updates)."""
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """An n-dimensional float64 array that can take part in differentiation.

    Leaf tensors (parameters, inputs) are created directly; every tensor
    produced by an operation while recording is enabled is attached to the
    current tape through ``node_id``.
    """

    __array_priority__ = 100

    def __init__(self, data: Any, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor data must be finite (NaN/Inf rejected)")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.node_id: Optional[int] = None
        self._tape: Optional[Tape] = None

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        # internal path: op outputs skip the finiteness scan
        t = cls.__new__(cls)
        t.data = np.asarray(data, dtype=np.float64)
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        t.node_id = None
        t._tape = None
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
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        return ops.transpose(self, axes or None)

    @property
    def T(self):
        return self.transpose()


def as_tensor(x: Any) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Function:
    """Base class for a differentiable primitive.

    Subclasses implement ``forward`` on raw arrays and ``backward`` returning
    one gradient (or ``None``) per input. State needed by ``backward`` is
    stashed on ``self`` during ``forward``.
    """

    needs_input_grad: Tuple[bool, ...] = ()

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Any, **kwargs: Any) -> Tensor:
        tensors = tuple(as_tensor(x) for x in inputs)
        fn = cls()
        fn.needs_input_grad = tuple(t.requires_grad for t in tensors)
        out_data = fn.forward(*(t.data for t in tensors), **kwargs)
        requires = _state.enabled and any(fn.needs_input_grad)
        out = Tensor._wrap(out_data, requires)
        if requires:
            current_tape().record(fn, tensors, out)
        return out


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf that requires it, then consume the tape.

    Gradients from multiple consumers are summed. Leaf gradients accumulate
    onto any existing ``.grad``.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        if loss.requires_grad:
            seed = np.ones_like(loss.data)
            loss.grad = seed if loss.grad is None else loss.grad + seed
        return
    if tape.consumed:
        raise TapeError("tape already replayed; re-run the forward pass")

    grads = {loss.node_id: np.ones_like(loss.data)}
    for fn, parents, node_id in reversed(tape.records):
        g = grads.pop(node_id, None)
        if g is None:
            continue
        in_grads = fn.backward(g)
        for parent, pg in zip(parents, in_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._tape is None:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            elif parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + pg
            else:
                grads[parent.node_id] = pg
    tape.consumed = True
    tape.records.clear()
