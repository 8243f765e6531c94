"""Differentiable primitives: elementwise math, reductions, shape ops, matmul, softmax."""

from typing import Optional, Sequence

import numpy as np

from .tensor import Function, Tensor, as_tensor, unbroadcast

EPS_ACOS = 1e-7
EPS_LOG = 1e-12


def _broadcast_shape(a: np.ndarray, b: np.ndarray):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"shape mismatch: {a.shape} and {b.shape} are not broadcastable") from None


# ---------------------------------------------------------------------------
# binary elementwise
# ---------------------------------------------------------------------------


class Add(Function):
    def forward(self, a, b):
        _broadcast_shape(a, b)
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        sa, sb = self.shapes
        return unbroadcast(grad, sa), unbroadcast(grad, sb)


class Sub(Function):
    def forward(self, a, b):
        _broadcast_shape(a, b)
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        sa, sb = self.shapes
        return unbroadcast(grad, sa), unbroadcast(-grad, sb)


class Mul(Function):
    def forward(self, a, b):
        _broadcast_shape(a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        ga = unbroadcast(grad * self.b, self.a.shape) if self.needs_input_grad[0] else None
        gb = unbroadcast(grad * self.a, self.b.shape) if self.needs_input_grad[1] else None
        return ga, gb


class Div(Function):
    def forward(self, a, b):
        _broadcast_shape(a, b)
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        ga = unbroadcast(grad / self.b, self.a.shape) if self.needs_input_grad[0] else None
        gb = None
        if self.needs_input_grad[1]:
            gb = unbroadcast(-grad * self.a / (self.b * self.b), self.b.shape)
        return ga, gb


# ---------------------------------------------------------------------------
# unary elementwise
# ---------------------------------------------------------------------------


class Scale(Function):
    def forward(self, a, constant=1.0):
        self.c = float(constant)
        return a * self.c

    def backward(self, grad):
        return (grad * self.c,)


class Sigmoid(Function):
    def forward(self, a):
        # tanh form is overflow-free and gives exactly 0.5 at 0
        self.y = 0.5 * (1.0 + np.tanh(0.5 * a))
        return self.y

    def backward(self, grad):
        return (grad * self.y * (1.0 - self.y),)


class Tanh(Function):
    def forward(self, a):
        self.y = np.tanh(a)
        return self.y

    def backward(self, grad):
        return (grad * (1.0 - self.y * self.y),)


class Relu(Function):
    def forward(self, a):
        self.mask = a > 0
        return np.where(self.mask, a, 0.0)

    def backward(self, grad):
        return (grad * self.mask,)


class Sin(Function):
    def forward(self, a):
        self.a = a
        return np.sin(a)

    def backward(self, grad):
        return (grad * np.cos(self.a),)


class Cos(Function):
    def forward(self, a):
        self.a = a
        return np.cos(a)

    def backward(self, grad):
        return (-grad * np.sin(self.a),)


class ArccosClamped(Function):
    """arccos with a finite derivative everywhere.

    The value is clamped to ``1 - eps`` at the top so identical directions
    give a small positive angle. At the bottom the value is exact (antipodal
    directions give pi) while the derivative is evaluated at ``-1 + eps``.
    """

    def forward(self, a, eps=EPS_ACOS):
        hi = 1.0 - eps
        self.saturated_hi = a > hi
        self.x = np.clip(a, -1.0 + eps, hi)
        return np.arccos(np.clip(a, -1.0, hi))

    def backward(self, grad):
        d = -1.0 / np.sqrt(1.0 - self.x * self.x)
        return (np.where(self.saturated_hi, 0.0, grad * d),)


class LogClamped(Function):
    def forward(self, a, eps=EPS_LOG):
        self.a = a
        self.live = a > eps
        return np.log(np.maximum(a, eps))

    def backward(self, grad):
        return (np.where(self.live, grad / np.where(self.live, self.a, 1.0), 0.0),)


class Exp(Function):
    def forward(self, a):
        self.y = np.exp(a)
        return self.y

    def backward(self, grad):
        return (grad * self.y,)


# ---------------------------------------------------------------------------
# linear algebra, reductions, shape manipulation
# ---------------------------------------------------------------------------


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError("matmul operands must be at least 2-D")
        if a.shape[-1] != b.shape[-2]:
            raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        ga = gb = None
        if self.needs_input_grad[0]:
            ga = unbroadcast(np.matmul(grad, np.swapaxes(self.b, -1, -2)), self.a.shape)
        if self.needs_input_grad[1]:
            gb = unbroadcast(np.matmul(np.swapaxes(self.a, -1, -2), grad), self.b.shape)
        return ga, gb


class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.shape = a.shape
        self.axis = axis
        self.keepdims = keepdims
        return np.sum(a, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


class Reshape(Function):
    def forward(self, a, shape=()):
        self.shape = a.shape
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, a, axes=None):
        self.axes = axes
        return np.transpose(a, axes)

    def backward(self, grad):
        if self.axes is None:
            return (np.transpose(grad),)
        return (np.transpose(grad, np.argsort(self.axes)),)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


class GetItem(Function):
    def forward(self, a, index=None):
        self.shape = a.shape
        self.index = index
        self.basic = _is_basic_index(index)
        return np.array(a[index], dtype=np.float64)

    def backward(self, grad):
        out = np.zeros(self.shape)
        if self.basic:
            out[self.index] = grad  # basic indexing never repeats an element
        else:
            np.add.at(out, self.index, grad)
        return (out,)


class TakeAlongAxis(Function):
    def forward(self, a, indices=None, axis=-1):
        self.shape = a.shape
        self.indices = indices
        self.axis = axis
        return np.take_along_axis(a, indices, axis=axis)

    def backward(self, grad):
        out = np.zeros(self.shape)
        idx = np.broadcast_to(self.indices, grad.shape)
        # scatter-add; duplicate indices along the axis accumulate
        ax = self.axis % len(self.shape)
        moved_out = np.moveaxis(out, ax, -1)
        moved_idx = np.moveaxis(idx, ax, -1)
        moved_g = np.moveaxis(grad, ax, -1)
        flat_out = moved_out.reshape(-1, moved_out.shape[-1])
        rows = np.repeat(np.arange(flat_out.shape[0]), moved_idx.shape[-1])
        np.add.at(flat_out, (rows, moved_idx.reshape(-1)), moved_g.reshape(-1))
        out = np.moveaxis(flat_out.reshape(moved_out.shape), -1, ax)
        return (out,)


class Concat(Function):
    def forward(self, *parts, axis=0):
        if not parts:
            raise ValueError("concat needs at least one part")
        nd = parts[0].ndim
        ax = axis % nd
        ref = tuple(s for i, s in enumerate(parts[0].shape) if i != ax)
        for p in parts[1:]:
            if p.ndim != nd or tuple(s for i, s in enumerate(p.shape) if i != ax) != ref:
                raise ValueError("concat parts disagree outside the concatenation axis")
        self.axis = ax
        self.splits = np.cumsum([p.shape[ax] for p in parts])[:-1]
        return np.concatenate(parts, axis=ax)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


class Stack(Function):
    def forward(self, *parts, axis=0):
        self.axis = axis
        return np.stack(parts, axis=axis)

    def backward(self, grad):
        n = grad.shape[self.axis]
        return tuple(np.take(grad, i, axis=self.axis) for i in range(n))


class Softmax(Function):
    def forward(self, a, axis=-1):
        self.axis = axis
        e = np.exp(a - a.max(axis=axis, keepdims=True))
        self.y = e / e.sum(axis=axis, keepdims=True)
        return self.y

    def backward(self, grad):
        y = self.y
        return (y * (grad - (grad * y).sum(axis=self.axis, keepdims=True)),)


# ---------------------------------------------------------------------------
# functional surface
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    return Add.apply(a, b)


def sub(a, b) -> Tensor:
    return Sub.apply(a, b)


def mul(a, b) -> Tensor:
    return Mul.apply(a, b)


def div(a, b) -> Tensor:
    return Div.apply(a, b)


def scale(a, constant: float) -> Tensor:
    return Scale.apply(a, constant=constant)


def sigmoid(a) -> Tensor:
    return Sigmoid.apply(a)


def tanh(a) -> Tensor:
    return Tanh.apply(a)


def relu(a) -> Tensor:
    return Relu.apply(a)


def sin(a) -> Tensor:
    return Sin.apply(a)


def cos(a) -> Tensor:
    return Cos.apply(a)


def arccos_clamped(a, eps: float = EPS_ACOS) -> Tensor:
    return ArccosClamped.apply(a, eps=eps)


def log_clamped(a, eps: float = EPS_LOG) -> Tensor:
    return LogClamped.apply(a, eps=eps)


def exp(a) -> Tensor:
    return Exp.apply(a)


_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}
_UNARY = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "sin": sin,
    "cos": cos,
    "arccos-clamped": arccos_clamped,
    "log-clamped": log_clamped,
    "exp": exp,
}
ELEMENTWISE_KINDS = tuple(_BINARY) + tuple(_UNARY) + ("scale-by-constant",)


def elementwise(kind: str, a, b=None, constant: Optional[float] = None) -> Tensor:
    """Dispatch an elementwise primitive by name."""
    if kind in _BINARY:
        if b is None:
            raise ValueError(f"{kind} needs two operands")
        return _BINARY[kind](a, b)
    if kind in _UNARY:
        return _UNARY[kind](a)
    if kind == "scale-by-constant":
        if constant is None:
            raise ValueError("scale-by-constant needs a constant")
        return scale(a, constant)
    raise ValueError(f"unknown elementwise kind {kind!r}")


def matmul(a, b) -> Tensor:
    return MatMul.apply(a, b)


def sum(a, axis=None, keepdims=False) -> Tensor:
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a, axes=None) -> Tensor:
    return Transpose.apply(a, axes=None if axes is None else tuple(axes))


def getitem(a, index) -> Tensor:
    return GetItem.apply(a, index=index)


def take_along_axis(a, indices: np.ndarray, axis: int = -1) -> Tensor:
    return TakeAlongAxis.apply(a, indices=np.asarray(indices), axis=axis)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    if len(parts) == 1:
        return as_tensor(parts[0])
    return Concat.apply(*parts, axis=axis)


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    return Stack.apply(*parts, axis=axis)


def softmax(a, axis: int = -1) -> Tensor:
    return Softmax.apply(a, axis=axis)
