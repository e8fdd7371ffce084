"""Reverse-mode differentiation over dense 2-D float64 arrays.

Graphs are built per forward pass (define-by-run). Every value is a
:class:`DiffNode` holding a ``(rows, cols)`` array, a gradient array of
the same shape, and the operation and parent nodes that produced it.
Calling :func:`backward` on a 1x1 node accumulates gradients into every
node that requires them, visiting each node once in reverse
topological order.

Binary arithmetic broadcasts row vectors ``(1, m)``, column vectors
``(n, 1)``, and scalars ``(1, 1)``; gradients are summed back down to
the operand's shape.

"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np

from .exc import ContractError, DimensionError, NumericDomainError


__all__ = [
    "ELEMENTWISE_RULES",
    "DiffNode",
    "Parameter",
    "add",
    "affine",
    "as_matrix",
    "backward",
    "clamp",
    "constant",
    "digamma_values",
    "div",
    "elementwise",
    "lgamma",
    "lgamma_values",
    "log_softmax",
    "mul",
    "reduce",
    "reset",
    "sub",
]


log = logging.getLogger(__name__)


Shape = Tuple[int, int]

AXES = ("rows", "cols", "all")
"""Reduction axes.

- rows: reduce across rows, giving a ``(1, cols)`` row vector
- cols: reduce across columns, giving a ``(rows, 1)`` column vector
- all: reduce everything to ``(1, 1)``

"""


class DiffNode:

    """A value in the computation graph.

    Args:
        values: Array-like; scalars become ``(1, 1)`` and 1-D arrays
            become ``(1, n)`` row vectors.
        parents: The input nodes of the producing operation.
        op: Name of the producing operation.
        backward_fn: Maps the gradient w.r.t. this node to a tuple of
            gradients w.r.t. ``parents`` (``None`` for a parent that
            doesn't need one).

    """

    # Makes ``ndarray <op> node`` defer to the node's reflected operators
    __array_ufunc__ = None

    def __init__(
        self,
        values,
        parents: Iterable["DiffNode"] = (),
        op: str = "constant",
        backward_fn: Optional[Callable] = None,
        requires_grad: Optional[bool] = None,
    ):
        self.values = as_matrix(values)
        self.grad = np.zeros_like(self.values)
        self.parents: Tuple[DiffNode, ...] = tuple(parents)
        self.op = op
        self.backward_fn = backward_fn
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self.backpropagated = False

    def __repr__(self):
        return f"<{self.__class__.__name__} {self.op} {self.shape}>"

    @property
    def shape(self) -> Shape:
        return self.values.shape  # type: ignore

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 node; got {self.shape}")
        return float(self.values[0, 0])

    def backward(self):
        backward(self)

    # Arithmetic

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return elementwise("neg", self)

    # Shortcuts

    def exp(self):
        return elementwise("exp", self)

    def log(self):
        return elementwise("log", self)

    def sum(self, axis="all"):
        return reduce("sum", self, axis)

    def mean(self, axis="all"):
        return reduce("mean", self, axis)


class Parameter(DiffNode):

    """A trainable node plus its optimizer state.

    ``first_moment`` and ``second_moment`` are the two Adam moment
    arrays; they always have the same shape as the values.

    """

    def __init__(self, name: str, values):
        super().__init__(values, op="parameter", requires_grad=True)
        self.name = name
        self.first_moment = np.zeros_like(self.values)
        self.second_moment = np.zeros_like(self.values)

    def __repr__(self):
        return f"<Parameter {self.name} {self.shape}>"

    def zero_grad(self):
        self.grad[...] = 0


def as_matrix(values) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    if array.ndim == 0:
        return array.reshape(1, 1)
    if array.ndim == 1:
        return array.reshape(1, -1)
    if array.ndim != 2:
        raise DimensionError(f"Expected at most 2 dimensions; got {array.ndim}")
    return array


def constant(values) -> DiffNode:
    """Wrap values as a node that never receives gradients."""
    if isinstance(values, DiffNode):
        return values
    return DiffNode(values, requires_grad=False)


def _check_domain(op, x, mask):
    if not mask.all():
        index = tuple(int(i) for i in np.argwhere(~mask)[0])
        raise NumericDomainError(op, index, float(x[index]))


# Special functions ----------------------------------------------------

LANCZOS_G = 7

LANCZOS_COEFFICIENTS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)

HALF_LOG_TWO_PI = 0.5 * math.log(2 * math.pi)


def _lanczos_lgamma(x: np.ndarray) -> np.ndarray:
    # Valid for x >= 0.5
    x = x - 1.0
    series = np.full_like(x, LANCZOS_COEFFICIENTS[0])
    for i, coefficient in enumerate(LANCZOS_COEFFICIENTS[1:], 1):
        series += coefficient / (x + i)
    t = x + LANCZOS_G + 0.5
    return HALF_LOG_TWO_PI + (x + 0.5) * np.log(t) - t + np.log(series)


def lgamma_values(x) -> np.ndarray:
    """log Gamma(x) for x > 0 via the Lanczos approximation (g=7, n=9).

    Arguments below 0.5 go through the reflection formula.

    """
    x = np.asarray(x, dtype=np.float64)
    _check_domain("lgamma", x, x > 0)
    out = np.empty_like(x)
    small = x < 0.5
    if small.any():
        xs = x[small]
        out[small] = np.log(np.pi / np.abs(np.sin(np.pi * xs))) - _lanczos_lgamma(
            1.0 - xs
        )
    out[~small] = _lanczos_lgamma(x[~small])
    return out


DIGAMMA_SHIFT = 8.5


def digamma_values(x) -> np.ndarray:
    """The digamma function (derivative of log Gamma) for x > 0.

    Arguments are shifted above 8.5 with ``psi(x) = psi(x + 1) - 1/x``
    and then evaluated with the asymptotic series.

    """
    x = np.array(x, dtype=np.float64)
    _check_domain("digamma", x, x > 0)
    out = np.zeros_like(x)
    small = x < DIGAMMA_SHIFT
    while small.any():
        out[small] -= 1.0 / x[small]
        x[small] += 1.0
        small = x < DIGAMMA_SHIFT
    r = 1.0 / x
    r2 = r * r
    series = r2 * (
        1.0 / 12 - r2 * (1.0 / 120 - r2 * (1.0 / 252 - r2 * (1.0 / 240 - r2 / 132)))
    )
    return out + np.log(x) - 0.5 * r - series


def _sigmoid(x):
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    e = np.exp(x[~positive])
    out[~positive] = e / (1.0 + e)
    return out


# Elementwise operations -----------------------------------------------


@dataclass(frozen=True)
class ElementwiseRule:

    """Forward function, derivative, and domain of an elementwise op.

    ``derivative`` receives the input and the output arrays and returns
    d(output)/d(input). ``domain`` returns a mask of valid inputs.

    """

    forward: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray, np.ndarray], np.ndarray]
    domain: Optional[Callable[[np.ndarray], np.ndarray]] = None


ELEMENTWISE_RULES: Dict[str, ElementwiseRule] = {
    "exp": ElementwiseRule(np.exp, lambda x, y: y),
    "log": ElementwiseRule(np.log, lambda x, y: 1.0 / x, lambda x: x > 0),
    "sigmoid": ElementwiseRule(_sigmoid, lambda x, y: y * (1.0 - y)),
    "softplus": ElementwiseRule(
        lambda x: np.logaddexp(0.0, x), lambda x, y: _sigmoid(x)
    ),
    "tanh": ElementwiseRule(np.tanh, lambda x, y: 1.0 - y * y),
    "sqrt": ElementwiseRule(np.sqrt, lambda x, y: 0.5 / y, lambda x: x > 0),
    "neg": ElementwiseRule(np.negative, lambda x, y: np.full_like(x, -1.0)),
    "square": ElementwiseRule(np.square, lambda x, y: 2.0 * x),
    # log(1 - exp(x)) for x < 0
    "log1mexp": ElementwiseRule(
        lambda x: np.log(-np.expm1(x)),
        lambda x, y: -1.0 / np.expm1(-x),
        lambda x: x < 0,
    ),
    "lgamma": ElementwiseRule(
        lgamma_values, lambda x, y: digamma_values(x), lambda x: x > 0
    ),
}
"""Elementwise ops by tag.

Looked up on every call, so replacing an entry changes the behavior of
subsequently built graphs (the gradient checker relies on this).

"""


def elementwise(op_tag: str, x: DiffNode) -> DiffNode:
    """Apply an elementwise op from :data:`ELEMENTWISE_RULES`.

    Raises:
        NumericDomainError: An input lies outside the op's domain; the
            error names the op and the first offending index.

    """
    try:
        rule = ELEMENTWISE_RULES[op_tag]
    except KeyError:
        raise ContractError(f"Unknown elementwise op: {op_tag}")
    x = constant(x)
    if rule.domain is not None:
        _check_domain(op_tag, x.values, rule.domain(x.values))
    y = rule.forward(x.values)

    def backward_fn(grad):
        return (grad * rule.derivative(x.values, y),)

    return DiffNode(y, (x,), op_tag, backward_fn)


def lgamma(x: DiffNode) -> DiffNode:
    """log Gamma(x); its backward rule multiplies by digamma(x)."""
    return elementwise("lgamma", x)


def clamp(x: DiffNode, lower=-np.inf, upper=np.inf) -> DiffNode:
    """Clip values; the gradient is zero where clipping happened."""
    x = constant(x)
    y = np.clip(x.values, lower, upper)
    inside = (x.values >= lower) & (x.values <= upper)

    def backward_fn(grad):
        return (grad * inside,)

    return DiffNode(y, (x,), "clamp", backward_fn)


# Binary arithmetic ----------------------------------------------------


def _broadcast(op, a, b) -> Shape:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"Cannot {op} shapes {a.shape} and {b.shape}")


def _unbroadcast(grad: np.ndarray, shape: Shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    rows, cols = shape
    if rows == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if cols == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def add(a, b) -> DiffNode:
    a, b = constant(a), constant(b)
    _broadcast("add", a, b)
    return DiffNode(a.values + b.values, (a, b), "add", lambda g: (g, g))


def sub(a, b) -> DiffNode:
    a, b = constant(a), constant(b)
    _broadcast("subtract", a, b)
    return DiffNode(a.values - b.values, (a, b), "sub", lambda g: (g, -g))


def mul(a, b) -> DiffNode:
    a, b = constant(a), constant(b)
    _broadcast("multiply", a, b)

    def backward_fn(grad):
        return (
            grad * b.values if a.requires_grad else None,
            grad * a.values if b.requires_grad else None,
        )

    return DiffNode(a.values * b.values, (a, b), "mul", backward_fn)


def div(a, b) -> DiffNode:
    a, b = constant(a), constant(b)
    _broadcast("divide", a, b)
    y = a.values / b.values

    def backward_fn(grad):
        return (
            grad / b.values if a.requires_grad else None,
            -grad * y / b.values if b.requires_grad else None,
        )

    return DiffNode(y, (a, b), "div", backward_fn)


# Linear algebra & reductions ------------------------------------------


def affine(x: DiffNode, W: DiffNode, b: DiffNode) -> DiffNode:
    """Compute ``x @ W + b`` with ``b`` added to every row.

    Shapes: x (n, a), W (a, m), b (1, m) -> (n, m).

    """
    x = constant(x)
    if x.shape[1] != W.shape[0]:
        raise DimensionError(f"Cannot multiply {x.shape} by {W.shape}")
    if b.shape != (1, W.shape[1]):
        raise DimensionError(f"Bias shape {b.shape} doesn't match {(1, W.shape[1])}")

    def backward_fn(grad):
        return (
            grad @ W.values.T if x.requires_grad else None,
            x.values.T @ grad,
            grad.sum(axis=0, keepdims=True),
        )

    return DiffNode(x.values @ W.values + b.values, (x, W, b), "affine", backward_fn)


def reduce(op_tag: str, x: DiffNode, axis: str = "all") -> DiffNode:
    """Sum or average over rows, columns, or everything (see :data:`AXES`)."""
    if op_tag not in ("sum", "mean"):
        raise ContractError(f"Unknown reduction: {op_tag}")
    if axis not in AXES:
        raise ContractError(f"Unknown reduction axis: {axis}")
    x = constant(x)
    rows, cols = x.shape
    numpy_axis = {"rows": 0, "cols": 1, "all": None}[axis]
    count = {"rows": rows, "cols": cols, "all": rows * cols}[axis]
    y = x.values.sum(axis=numpy_axis, keepdims=True)
    if op_tag == "mean":
        y = y / count
    scale = 1.0 / count if op_tag == "mean" else 1.0

    def backward_fn(grad):
        return (np.broadcast_to(grad * scale, x.shape),)

    return DiffNode(y, (x,), f"{op_tag}[{axis}]", backward_fn)


def log_softmax(x: DiffNode) -> DiffNode:
    """Row-wise log softmax."""
    x = constant(x)
    shifted = x.values - x.values.max(axis=1, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def backward_fn(grad):
        return (grad - np.exp(y) * grad.sum(axis=1, keepdims=True),)

    return DiffNode(y, (x,), "log_softmax", backward_fn)


# Backpropagation ------------------------------------------------------


def _topological_order(root: DiffNode) -> List[DiffNode]:
    order: List[DiffNode] = []
    visited = set()
    stack = [(root, False)]
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


def backward(loss: DiffNode):
    """Accumulate d(loss)/d(node) into every node that requires it.

    Raises:
        ContractError: ``loss`` isn't 1x1, or this graph was already
            backpropagated and hasn't been :func:`reset`.

    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward() needs a 1x1 loss; got {loss.shape}")
    if loss.backpropagated:
        raise ContractError("backward() was already called on this graph")
    loss.backpropagated = True
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    loss.grad += 1.0
    for node in reversed(order):
        if node.backward_fn is None:
            continue
        grads = node.backward_fn(node.grad)
        for parent, grad in zip(node.parents, grads):
            if grad is not None and parent.requires_grad:
                parent.grad += _unbroadcast(grad, parent.shape)


def reset(loss: DiffNode):
    """Zero the gradients of a graph's intermediate nodes.

    Parameter gradients are left alone; zero those with
    :meth:`Parameter.zero_grad`.

    """
    for node in _topological_order(loss):
        if not isinstance(node, Parameter):
            node.grad[...] = 0
    loss.backpropagated = False
