"""Dense tensor with reverse-mode automatic differentiation over numpy arrays"""

from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

_state = threading.local()


def _get(name: str, default):
    return getattr(_state, name, default)


def default_dtype() -> np.dtype:
    """Floating dtype used for new tensors in the current thread"""
    return _get("dtype", np.dtype(np.float32))


def grad_enabled() -> bool:
    return _get("grad_enabled", True)


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Switch new-tensor dtype (float32 for training, float64 for gradient checks)"""
    previous = default_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = previous


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording a graph (inference)"""
    previous = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` after numpy broadcasting"""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """
    N-d float array that records the ops producing it.

    `data` is a numpy array; `grad`, once `backward()` ran, has the same shape.
    Leaves created with `requires_grad=True` are the trainable parameters.
    """

    __array_priority__ = 100

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _op: str = "",
    ):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype.kind != "f" or (not _op and arr.dtype != default_dtype()):
            arr = arr.astype(default_dtype())
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] = lambda g: None
        self._op = _op

    # ------------------------------------------------------------------ basics

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
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def detach(self) -> "Tensor":
        """Same values, cut from the graph (stop-gradient)"""
        return Tensor(self.data, _parents=(), _op="detach")

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        grad = _unbroadcast(grad, self.shape)
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.dtype, copy=True)
        else:
            self.grad = self.grad + grad

    @staticmethod
    def _make(
        data: np.ndarray,
        parents: tuple["Tensor", ...],
        op: str,
        backward: Callable[[np.ndarray], None],
    ) -> "Tensor":
        needs = grad_enabled() and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=needs, _parents=parents if needs else (), _op=op)
        if needs:
            out._backward = backward
        return out

    def _topological_order(self) -> list["Tensor"]:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's `.grad`"""
        if not self.requires_grad:
            return
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.dtype)
        order = self._topological_order()
        # interior grads are per-call scratch; leaves keep accumulating
        for node in order:
            if node._parents:
                node.grad = None
        self._accumulate(seed)
        for node in reversed(order):
            if node._parents and node.grad is not None:
                node._backward(node.grad)

    def _send(self, grad: np.ndarray) -> None:
        """Route an upstream gradient to this node"""
        if self.requires_grad:
            self._accumulate(grad)

    # -------------------------------------------------------------- arithmetic

    def __add__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)

        def backward(g: np.ndarray) -> None:
            self._send(g)
            other._send(g)

        return Tensor._make(self.data + other.data, (self, other), "add", backward)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), "neg", lambda g: self._send(-g))

    def __sub__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)

        def backward(g: np.ndarray) -> None:
            self._send(g)
            other._send(-g)

        return Tensor._make(self.data - other.data, (self, other), "sub", backward)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return as_tensor(other) - self

    def __mul__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)

        def backward(g: np.ndarray) -> None:
            self._send(g * other.data)
            other._send(g * self.data)

        return Tensor._make(self.data * other.data, (self, other), "mul", backward)

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)

        def backward(g: np.ndarray) -> None:
            self._send(g / other.data)
            other._send(-g * self.data / (other.data * other.data))

        return Tensor._make(self.data / other.data, (self, other), "div", backward)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return as_tensor(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        out = self.data ** exponent

        def backward(g: np.ndarray) -> None:
            self._send(g * exponent * self.data ** (exponent - 1))

        return Tensor._make(out, (self,), "pow", backward)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data

        def backward(g: np.ndarray) -> None:
            if self.requires_grad:
                ga = g @ np.swapaxes(b, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b)
                self._send(ga)
            if other.requires_grad:
                gb = np.swapaxes(a, -1, -2) @ g if a.ndim > 1 else np.multiply.outer(a, g)
                other._send(gb)

        return Tensor._make(a @ b, (self, other), "matmul", backward)

    # ------------------------------------------------------------- reductions

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g: np.ndarray) -> None:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._send(np.broadcast_to(g, shape))

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum", backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / max(count, 1))

    def max(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = self.data.max(axis=axis, keepdims=True)
        mask = (self.data == out).astype(self.dtype)
        mask = mask / mask.sum(axis=axis, keepdims=True)

        def backward(g: np.ndarray) -> None:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._send(mask * g)

        value = out if keepdims else (out.reshape(()) if axis is None else np.squeeze(out, axis))
        return Tensor._make(value, (self,), "max", backward)

    # ------------------------------------------------------------ shape ops

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        return Tensor._make(
            self.data.reshape(shape), (self,), "reshape", lambda g: self._send(g.reshape(original))
        )

    def transpose(self, *axes) -> "Tensor":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = tuple(np.argsort(axes))
        return Tensor._make(
            self.data.transpose(axes), (self,), "transpose",
            lambda g: self._send(g.transpose(inverse)),
        )

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(tuple(axes))

    def __getitem__(self, key) -> "Tensor":
        if isinstance(key, Tensor):
            key = key.data.astype(np.int64)
        shape, dtype = self.shape, self.dtype

        def backward(g: np.ndarray) -> None:
            full = np.zeros(shape, dtype=dtype)
            np.add.at(full, key, g)
            self._send(full)

        return Tensor._make(self.data[key], (self,), "index", backward)

    # ------------------------------------------------------------ elementwise

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._make(out, (self,), "exp", lambda g: self._send(g * out))

    def log(self) -> "Tensor":
        return Tensor._make(np.log(self.data), (self,), "log", lambda g: self._send(g / self.data))

    def sqrt(self) -> "Tensor":
        out = np.sqrt(self.data)
        return Tensor._make(out, (self,), "sqrt", lambda g: self._send(g * 0.5 / out))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return Tensor._make(out, (self,), "tanh", lambda g: self._send(g * (1.0 - out * out)))

    def relu(self) -> "Tensor":
        mask = (self.data > 0).astype(self.dtype)
        return Tensor._make(self.data * mask, (self,), "relu", lambda g: self._send(g * mask))

    def sigmoid(self) -> "Tensor":
        out = 1.0 / (1.0 + np.exp(-self.data))
        return Tensor._make(out, (self,), "sigmoid", lambda g: self._send(g * out * (1.0 - out)))

    def gelu(self) -> "Tensor":
        """tanh approximation of GELU"""
        x = self.data
        c = math.sqrt(2.0 / math.pi)
        t = np.tanh(c * (x + 0.044715 * x ** 3))
        out = 0.5 * x * (1.0 + t)

        def backward(g: np.ndarray) -> None:
            d_inner = c * (1.0 + 3 * 0.044715 * x * x)
            self._send(g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner))

        return Tensor._make(out, (self,), "gelu", backward)


def as_tensor(value: ArrayLike) -> Tensor:
    """Wrap constants; tensors pass through unchanged"""
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=default_dtype()))


def parameter(data: np.ndarray) -> Tensor:
    """Trainable leaf tensor"""
    return Tensor(np.asarray(data), requires_grad=True)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray) -> None:
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._send(piece)

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._make(data, tuple(tensors), "concat", backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return concat([as_tensor(t).reshape(_insert_axis(as_tensor(t).shape, axis)) for t in tensors], axis)


def _insert_axis(shape: tuple[int, ...], axis: int) -> tuple[int, ...]:
    axis = axis if axis >= 0 else len(shape) + 1 + axis
    return shape[:axis] + (1,) + shape[axis:]


def where(condition: np.ndarray, a: ArrayLike, b: ArrayLike) -> Tensor:
    """Select from `a` where condition holds, else from `b` (condition is constant)"""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(condition, dtype=bool)

    def backward(g: np.ndarray) -> None:
        a._send(np.where(cond, g, 0.0))
        b._send(np.where(cond, 0.0, g))

    return Tensor._make(np.where(cond, a.data, b.data), (a, b), "where", backward)
