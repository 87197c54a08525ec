"""Reverse-mode automatic differentiation on a dynamically built tape.

Every forward pass builds a fresh graph of ``Node`` objects. Leaves created
through a ``ParamSet`` require gradients; everything else is a constant.
``backward`` walks the graph once in reverse topological order and *adds*
the adjoints into ``Node.grad``; callers reset with ``ParamSet.zero_grad``
(``adam_step`` does so after updating).
"""

from __future__ import annotations

from collections.abc import Callable, Iterator
import logging

import numpy as np

from ..exceptions import ContractViolation, DivergedError

_LOGGER = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


class Node:
    """A value on the tape plus the rule that maps its adjoint to its inputs."""

    __slots__ = ("value", "parents", "requires_grad", "name", "_backward", "_grad")

    # make ndarray-on-the-left arithmetic defer to the reflected Node operators
    __array_ufunc__ = None

    def __init__(
        self,
        value,
        parents: tuple[Node, ...] = (),
        backward: BackwardFn | None = None,
        requires_grad: bool = False,
        name: str | None = None,
    ) -> None:
        self.value = np.asarray(value)
        self.parents = parents
        self.requires_grad = requires_grad
        self.name = name
        self._backward = backward
        self._grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros(self.value.shape, dtype=np.float64)
        return self._grad

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        return float(self.value.item())

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"<Node{label} shape={self.shape} requires_grad={self.requires_grad}>"

    # Operator sugar; the right-hand side may be a plain array or scalar.
    def __add__(self, other) -> Node:
        return add(self, other)

    def __radd__(self, other) -> Node:
        return add(other, self)

    def __sub__(self, other) -> Node:
        return sub(self, other)

    def __rsub__(self, other) -> Node:
        return sub(other, self)

    def __mul__(self, other) -> Node:
        return mul(self, other)

    def __rmul__(self, other) -> Node:
        return mul(other, self)

    def __neg__(self) -> Node:
        return neg(self)

    def __matmul__(self, other) -> Node:
        return matmul(self, other)

    def __rmatmul__(self, other) -> Node:
        return matmul(other, self)

    def __getitem__(self, index) -> Node:
        return take(self, index)


def constant(value) -> Node:
    return value if isinstance(value, Node) else Node(np.asarray(value, dtype=np.float64))


def detach(x: Node) -> Node:
    """Same value, no gradient path."""
    return Node(x.value)


def _make(value, parents: tuple[Node, ...], backward: BackwardFn) -> Node:
    if any(p.requires_grad for p in parents):
        return Node(value, parents, backward, requires_grad=True)
    return Node(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast adjoint back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Node, b: Node, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as err:
        raise ContractViolation(f"{op}: incompatible shapes {a.shape} and {b.shape}") from err


# ── binary ops ───────────────────────────────────────────────────────

def add(a, b) -> Node:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b, "add")
    return _make(
        a.value + b.value, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Node:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b, "sub")
    return _make(
        a.value - b.value, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Node:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b, "mul")
    return _make(
        a.value * b.value, (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def matmul(a, b) -> Node:
    a, b = constant(a), constant(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _make(
        a.value @ b.value, (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
    )


# ── unary ops ────────────────────────────────────────────────────────

def neg(x) -> Node:
    x = constant(x)
    return _make(-x.value, (x,), lambda g: (-g,))


def exp(x) -> Node:
    x = constant(x)
    out = np.exp(x.value)
    return _make(out, (x,), lambda g: (g * out,))


def log(x) -> Node:
    """Natural log; the documented domain is x > 0."""
    x = constant(x)
    return _make(np.log(x.value), (x,), lambda g: (g / x.value,))


def tanh(x) -> Node:
    x = constant(x)
    out = np.tanh(x.value)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x) -> Node:
    x = constant(x)
    mask = x.value > 0
    return _make(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def softplus(x) -> Node:
    x = constant(x)
    sigmoid = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return _make(np.logaddexp(0.0, x.value), (x,), lambda g: (g * sigmoid,))


def square(x) -> Node:
    x = constant(x)
    return _make(x.value * x.value, (x,), lambda g: (2.0 * g * x.value,))


def _softmax_values(v: np.ndarray) -> np.ndarray:
    shifted = v - np.max(v, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax(x) -> Node:
    """Softmax over the last axis."""
    x = constant(x)
    out = _softmax_values(x.value)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)

    return _make(out, (x,), backward)


def log_sum_exp(x, keepdims: bool = False) -> Node:
    """log(sum(exp(x))) over the last axis, shifted by the row maximum."""
    x = constant(x)
    peak = np.max(x.value, axis=-1, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    out = peak + np.log(np.sum(np.exp(x.value - peak), axis=-1, keepdims=True))
    weights = _softmax_values(x.value)
    if not keepdims:
        out = out[..., 0]

    def backward(g):
        g = g if keepdims else g[..., None]
        return (g * weights,)

    return _make(out, (x,), backward)


def sum(x, axis: int | None = None, keepdims: bool = False) -> Node:  # noqa: A001
    x = constant(x)
    out = np.sum(x.value, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), backward)


def mean(x, axis: int | None = None, keepdims: bool = False) -> Node:
    x = constant(x)
    count = x.value.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def promote(x) -> Node:
    """float64 copy of the value; identity on the gradient."""
    x = constant(x)
    return _make(x.value.astype(np.float64), (x,), lambda g: (g,))


def reshape(x, shape: tuple[int, ...]) -> Node:
    x = constant(x)
    return _make(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def take(x, index) -> Node:
    """Basic and fancy indexing with scatter-add backward."""
    x = constant(x)

    def backward(g):
        full = np.zeros(x.shape, dtype=np.float64)
        np.add.at(full, index, g)
        return (full,)

    return _make(x.value[index], (x,), backward)


# ── backward pass ────────────────────────────────────────────────────

def _topological_order(root: Node) -> list[Node]:
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(node) into ``grad`` of every reachable node."""
    if loss.value.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    adjoints: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=np.float64)}
    for node in reversed(_topological_order(loss)):
        g = adjoints.pop(id(node), None)
        if g is None:
            continue
        node._grad = g.copy() if node._grad is None else node._grad + g
        if node._backward is None:
            continue
        for parent, parent_grad in zip(node.parents, node._backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            adjoints[key] = adjoints[key] + parent_grad if key in adjoints else parent_grad


# ── parameters and Adam ──────────────────────────────────────────────

class ParamSet:
    """Named trainable leaves plus their Adam moment accumulators."""

    def __init__(self, dtype=np.float32) -> None:
        self.dtype = np.dtype(dtype)
        self.step = 0
        self._params: dict[str, Node] = {}
        self._first: dict[str, np.ndarray] = {}
        self._second: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> Node:
        if name in self._params:
            raise ContractViolation(f"Parameter {name!r} already exists")
        node = Node(np.array(value, dtype=self.dtype), requires_grad=True, name=name)
        self._params[name] = node
        self._first[name] = np.zeros(node.shape, dtype=np.float64)
        self._second[name] = np.zeros(node.shape, dtype=np.float64)
        return node

    def __getitem__(self, name: str) -> Node:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def moments(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return self._first[name], self._second[name]

    def zero_grad(self) -> None:
        for node in self._params.values():
            node.zero_grad()

    def arrays(self) -> dict[str, np.ndarray]:
        """Copies of the current parameter values, in insertion order."""
        return {name: node.value.copy() for name, node in self._params.items()}

    def assign(self, name: str, value) -> None:
        node = self._params[name]
        value = np.asarray(value)
        if value.shape != node.shape:
            raise ContractViolation(f"Parameter {name!r} expects shape {node.shape}, got {value.shape}")
        node.value = value.astype(self.dtype)


def adam_step(
    params: ParamSet,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, then zero the gradients.

    A non-finite gradient aborts the step before anything is modified.
    """
    for name, node in params.items():
        if not np.all(np.isfinite(node.grad)):
            _LOGGER.error("Non-finite gradient for parameter %s", name)
            raise DivergedError(f"gradient of {name}")

    params.step += 1
    correction1 = 1.0 - beta1 ** params.step
    correction2 = 1.0 - beta2 ** params.step
    for name, node in params.items():
        g = node.grad
        first, second = params.moments(name)
        first *= beta1
        first += (1.0 - beta1) * g
        second *= beta2
        second += (1.0 - beta2) * (g * g)
        update = lr * (first / correction1) / (np.sqrt(second / correction2) + eps)
        node.value = (node.value.astype(np.float64) - update).astype(params.dtype)
    params.zero_grad()
