"""Dense float64 tensors and a small reverse-mode autodiff graph.

The primitive set covers exactly what an MLP with batch normalization,
normalized-logit cross-entropy, and gradient-based input perturbation
need. Every primitive carries an analytic vector-Jacobian product, so
gradients of any composed scalar (including gradients with respect to
network inputs) are exact up to float64 rounding.

Graphs are immutable: a node's parents and value are fixed at
construction, which makes the graph acyclic by construction and every
evaluation repeatable.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

__all__ = [
    "Tensor",
    "GraphNode",
    "apply",
    "backward",
    "leaf",
    "as_node",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "relu",
    "exp",
    "ln",
    "square",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "l2norm",
    "logsumexp",
    "concat",
    "sqrt",
    "floor_at",
]


class Tensor:
    """Immutable float64 array. Construction rejects NaN and infinity."""

    __slots__ = ("_array",)

    def __init__(self, values) -> None:
        arr = np.array(values, dtype=np.float64, order="C")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite values in tensor of shape {arr.shape}")
        arr.setflags(write=False)
        self._array = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal fast path: trusts finiteness was already checked.
        if arr.dtype != np.float64 or not arr.flags.c_contiguous or not arr.flags.owndata:
            # np.array (not ascontiguousarray) so 0-d scalars keep their shape.
            arr = np.array(arr, dtype=np.float64, order="C")
        obj = object.__new__(cls)
        arr.setflags(write=False)
        obj._array = arr
        return obj

    @classmethod
    def zeros(cls, shape) -> "Tensor":
        return cls._wrap(np.zeros(shape, dtype=np.float64))

    @classmethod
    def full(cls, shape, value: float) -> "Tensor":
        return cls(np.full(shape, value, dtype=np.float64))

    @property
    def array(self) -> np.ndarray:
        """Read-only view of the underlying float64 data."""
        return self._array

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def ndim(self) -> int:
        return self._array.ndim

    @property
    def size(self) -> int:
        return self._array.size

    def item(self) -> float:
        if self._array.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self._array.reshape(()))

    def tolist(self):
        return self._array.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


class GraphNode:
    """One value in an acyclic computation graph.

    ``op`` is the primitive name ("leaf" for inputs), ``parents`` the input
    nodes, ``value`` the forward result. Nodes hash by identity, so the same
    tensor used twice creates two distinct leaves unless the node object
    itself is reused.
    """

    __slots__ = ("op", "parents", "value", "attrs")

    def __init__(self, op: str, parents: tuple["GraphNode", ...], value: Tensor, attrs: dict | None = None) -> None:
        self.op = op
        self.parents = parents
        self.value = value
        self.attrs = attrs or {}

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def array(self) -> np.ndarray:
        return self.value.array

    def item(self) -> float:
        return self.value.item()

    def __repr__(self) -> str:
        return f"GraphNode(op={self.op!r}, shape={self.shape})"

    # Operator sugar; non-node operands become constant leaves.
    def __add__(self, other):
        return add(self, as_node(other))

    def __radd__(self, other):
        return add(as_node(other), self)

    def __sub__(self, other):
        return sub(self, as_node(other))

    def __rsub__(self, other):
        return sub(as_node(other), self)

    def __mul__(self, other):
        return mul(self, as_node(other))

    def __rmul__(self, other):
        return mul(as_node(other), self)

    def __truediv__(self, other):
        return div(self, as_node(other))

    def __rtruediv__(self, other):
        return div(as_node(other), self)

    def __neg__(self):
        return scale(self, -1.0)


def leaf(values) -> GraphNode:
    """Wrap values in a graph leaf (an input with no parents)."""
    tensor = values if isinstance(values, Tensor) else Tensor(values)
    return GraphNode("leaf", (), tensor)


def as_node(x) -> GraphNode:
    if isinstance(x, GraphNode):
        return x
    return leaf(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _expand_reduced(grad: np.ndarray, in_shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    """Broadcast a reduction's output gradient back to the input shape."""
    if axis is not None and not keepdims:
        grad = np.expand_dims(grad, axis)
    elif axis is None and not keepdims:
        grad = grad.reshape((1,) * len(in_shape))
    return np.broadcast_to(grad, in_shape)


def _rowwise_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # einsum's default (non-optimized) path reduces each output element in a
    # fixed order independent of the other rows, so a row's result does not
    # change with batch size. BLAS gemm does not give that guarantee.
    return np.einsum("ik,kj->ij", a, b, optimize=False)


def _check_binary_shapes(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _fw_matmul(values, attrs):
    a, b = values
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions disagree ({a.shape} @ {b.shape})")
    return _rowwise_matmul(a, b)


def _vjp_matmul(g, values, out, attrs):
    a, b = values
    return _rowwise_matmul(g, b.T), _rowwise_matmul(a.T, g)


def _fw_add(values, attrs):
    a, b = values
    _check_binary_shapes("add", a, b)
    return a + b


def _vjp_add(g, values, out, attrs):
    a, b = values
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _fw_sub(values, attrs):
    a, b = values
    _check_binary_shapes("sub", a, b)
    return a - b


def _vjp_sub(g, values, out, attrs):
    a, b = values
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _fw_mul(values, attrs):
    a, b = values
    _check_binary_shapes("mul", a, b)
    return a * b


def _vjp_mul(g, values, out, attrs):
    a, b = values
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _fw_div(values, attrs):
    a, b = values
    _check_binary_shapes("div", a, b)
    if np.any(b == 0.0):
        raise ValueError("div: divisor contains zero")
    return a / b


def _vjp_div(g, values, out, attrs):
    a, b = values
    return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)


def _fw_scale(values, attrs):
    c = attrs.get("constant")
    if c is None:
        raise ValueError("scale requires a constant")
    c = float(c)
    if not np.isfinite(c):
        raise ValueError("scale constant must be finite")
    attrs["constant"] = c
    return values[0] * c


def _vjp_scale(g, values, out, attrs):
    return (g * attrs["constant"],)


def _fw_relu(values, attrs):
    return np.maximum(values[0], 0.0)


def _vjp_relu(g, values, out, attrs):
    # Subgradient 0 at exactly 0.
    return (g * (values[0] > 0.0),)


def _fw_exp(values, attrs):
    return np.exp(values[0])


def _vjp_exp(g, values, out, attrs):
    return (g * out,)


def _fw_ln(values, attrs):
    a = values[0]
    if np.any(a <= 0.0):
        raise ValueError("ln requires strictly positive input")
    return np.log(a)


def _vjp_ln(g, values, out, attrs):
    return (g / values[0],)


def _fw_square(values, attrs):
    a = values[0]
    return a * a


def _vjp_square(g, values, out, attrs):
    return (2.0 * g * values[0],)


def _resolve_axis(a: np.ndarray, axis) -> int | None:
    if axis is None:
        return None
    axis = int(axis)
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"axis {axis} out of range for shape {a.shape}")
    return axis % a.ndim if a.ndim else 0


def _fw_sum(values, attrs):
    a = values[0]
    attrs["axis"] = _resolve_axis(a, attrs.get("axis"))
    return np.sum(a, axis=attrs["axis"], keepdims=attrs.get("keepdims", False))


def _vjp_sum(g, values, out, attrs):
    a = values[0]
    return (_expand_reduced(g, a.shape, attrs["axis"], attrs.get("keepdims", False)).copy(),)


def _fw_mean(values, attrs):
    a = values[0]
    attrs["axis"] = _resolve_axis(a, attrs.get("axis"))
    return np.mean(a, axis=attrs["axis"], keepdims=attrs.get("keepdims", False))


def _vjp_mean(g, values, out, attrs):
    a = values[0]
    axis = attrs["axis"]
    n = a.size if axis is None else a.shape[axis]
    return (_expand_reduced(g, a.shape, axis, attrs.get("keepdims", False)) / n,)


def _fw_max(values, attrs):
    a = values[0]
    attrs["axis"] = _resolve_axis(a, attrs.get("axis"))
    return np.max(a, axis=attrs["axis"], keepdims=attrs.get("keepdims", False))


def _vjp_max(g, values, out, attrs):
    a = values[0]
    axis = attrs["axis"]
    keepdims = attrs.get("keepdims", False)
    out_full = _expand_reduced(out, a.shape, axis, keepdims)
    g_full = _expand_reduced(g, a.shape, axis, keepdims)
    mask = a == out_full
    # Ties split the gradient evenly among the maximizers.
    counts = mask.sum(axis=axis, keepdims=True) if axis is not None else mask.sum()
    return (g_full * mask / counts,)


def _fw_l2norm(values, attrs):
    a = values[0]
    attrs["axis"] = _resolve_axis(a, attrs.get("axis"))
    return np.sqrt(np.sum(a * a, axis=attrs["axis"], keepdims=attrs.get("keepdims", False)))


def _vjp_l2norm(g, values, out, attrs):
    a = values[0]
    axis = attrs["axis"]
    keepdims = attrs.get("keepdims", False)
    out_full = _expand_reduced(out, a.shape, axis, keepdims)
    g_full = _expand_reduced(g, a.shape, axis, keepdims)
    # Zero vectors get zero gradient (subgradient of the norm at 0).
    direction = np.divide(a, out_full, out=np.zeros_like(a), where=out_full > 0.0)
    return (g_full * direction,)


def _fw_logsumexp(values, attrs):
    a = values[0]
    axis = _resolve_axis(a, attrs.get("axis"))
    attrs["axis"] = axis
    keepdims = attrs.get("keepdims", False)
    m = np.max(a, axis=axis, keepdims=True)
    shifted = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    result = m + shifted
    if not keepdims:
        result = np.squeeze(result, axis=axis) if axis is not None else result.reshape(())
    return result


def _vjp_logsumexp(g, values, out, attrs):
    a = values[0]
    axis = attrs["axis"]
    keepdims = attrs.get("keepdims", False)
    out_full = _expand_reduced(out, a.shape, axis, keepdims)
    g_full = _expand_reduced(g, a.shape, axis, keepdims)
    return (g_full * np.exp(a - out_full),)


def _fw_concat(values, attrs):
    a, b = values
    axis = attrs.get("axis")
    axis = 0 if axis is None else int(axis)
    if a.ndim != b.ndim:
        raise ValueError(f"concat: rank mismatch ({a.shape} vs {b.shape})")
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"concat: axis {axis} out of range for shape {a.shape}")
    axis %= a.ndim
    attrs["axis"] = axis
    for d in range(a.ndim):
        if d != axis and a.shape[d] != b.shape[d]:
            raise ValueError(f"concat: shapes {a.shape} and {b.shape} disagree off axis {axis}")
    return np.concatenate([a, b], axis=axis)


def _vjp_concat(g, values, out, attrs):
    a, b = values
    axis = attrs["axis"]
    ga, gb = np.split(g, [a.shape[axis]], axis=axis)
    return ga, gb


class _Primitive(NamedTuple):
    n_inputs: int
    forward: Callable
    vjp: Callable


PRIMITIVES: dict[str, _Primitive] = {
    "matmul": _Primitive(2, _fw_matmul, _vjp_matmul),
    "add": _Primitive(2, _fw_add, _vjp_add),
    "sub": _Primitive(2, _fw_sub, _vjp_sub),
    "mul": _Primitive(2, _fw_mul, _vjp_mul),
    "div": _Primitive(2, _fw_div, _vjp_div),
    "scale": _Primitive(1, _fw_scale, _vjp_scale),
    "relu": _Primitive(1, _fw_relu, _vjp_relu),
    "exp": _Primitive(1, _fw_exp, _vjp_exp),
    "ln": _Primitive(1, _fw_ln, _vjp_ln),
    "square": _Primitive(1, _fw_square, _vjp_square),
    "sum": _Primitive(1, _fw_sum, _vjp_sum),
    "mean": _Primitive(1, _fw_mean, _vjp_mean),
    "max": _Primitive(1, _fw_max, _vjp_max),
    "l2norm": _Primitive(1, _fw_l2norm, _vjp_l2norm),
    "logsumexp": _Primitive(1, _fw_logsumexp, _vjp_logsumexp),
    "concat": _Primitive(2, _fw_concat, _vjp_concat),
}


def apply(op: str, *inputs, axis=None, keepdims: bool = False, constant: float | None = None) -> GraphNode:
    """Apply a named primitive to graph nodes (or values, which become leaves).

    Raises ValueError for an unknown primitive name, a wrong input count, or
    operand shapes the primitive rejects; FloatingPointError if the result is
    non-finite (overflow or an invalid operation).
    """
    prim = PRIMITIVES.get(op)
    if prim is None:
        known = ", ".join(sorted(PRIMITIVES))
        raise ValueError(f"unknown primitive {op!r} (known: {known})")
    if len(inputs) != prim.n_inputs:
        raise ValueError(f"{op} takes {prim.n_inputs} input(s), got {len(inputs)}")
    nodes = tuple(as_node(x) for x in inputs)
    attrs = {"axis": axis, "keepdims": keepdims, "constant": constant}
    # Overflow is detected by the finiteness check below, so numpy's own
    # warning would be redundant noise.
    with np.errstate(over="ignore"):
        out = prim.forward(tuple(n.value.array for n in nodes), attrs)
    out = np.asarray(out, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"{op} produced non-finite values")
    return GraphNode(op, nodes, Tensor._wrap(out), attrs)


def backward(loss: GraphNode) -> dict[GraphNode, Tensor]:
    """Reverse-mode gradients of a scalar node with respect to every node
    in its graph.

    Returns a dict keyed by node identity; a node consumed several times
    accumulates the contributions from each use. Nodes outside the graph are
    simply absent from the result.
    """
    if loss.value.shape != ():
        raise ValueError(f"backward requires a scalar node, got shape {loss.value.shape}")

    order: list[GraphNode] = []
    seen: set[int] = set()
    stack: list[tuple[GraphNode, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            stack.append((parent, False))

    grads: dict[GraphNode, np.ndarray] = {loss: np.ones(())}
    for node in reversed(order):
        g = grads.get(node)
        if g is None or not node.parents:
            continue
        parent_values = tuple(p.value.array for p in node.parents)
        contributions = PRIMITIVES[node.op].vjp(g, parent_values, node.value.array, node.attrs)
        for parent, contribution in zip(node.parents, contributions):
            if contribution.shape != parent.value.shape:
                raise AssertionError(
                    f"{node.op} vjp produced shape {contribution.shape} for parent of shape {parent.value.shape}"
                )
            held = grads.get(parent)
            grads[parent] = contribution if held is None else held + contribution
    return {node: Tensor._wrap(np.array(g, dtype=np.float64)) for node, g in grads.items()}


def matmul(a, b) -> GraphNode:
    return apply("matmul", a, b)


def add(a, b) -> GraphNode:
    return apply("add", a, b)


def sub(a, b) -> GraphNode:
    return apply("sub", a, b)


def mul(a, b) -> GraphNode:
    return apply("mul", a, b)


def div(a, b) -> GraphNode:
    return apply("div", a, b)


def scale(a, constant: float) -> GraphNode:
    return apply("scale", a, constant=constant)


def relu(a) -> GraphNode:
    return apply("relu", a)


def exp(a) -> GraphNode:
    return apply("exp", a)


def ln(a) -> GraphNode:
    return apply("ln", a)


def square(a) -> GraphNode:
    return apply("square", a)


def reduce_sum(a, axis=None, keepdims: bool = False) -> GraphNode:
    return apply("sum", a, axis=axis, keepdims=keepdims)


def reduce_mean(a, axis=None, keepdims: bool = False) -> GraphNode:
    return apply("mean", a, axis=axis, keepdims=keepdims)


def reduce_max(a, axis=None, keepdims: bool = False) -> GraphNode:
    return apply("max", a, axis=axis, keepdims=keepdims)


def l2norm(a, axis=None, keepdims: bool = False) -> GraphNode:
    return apply("l2norm", a, axis=axis, keepdims=keepdims)


def logsumexp(a, axis=None, keepdims: bool = False) -> GraphNode:
    return apply("logsumexp", a, axis=axis, keepdims=keepdims)


def concat(a, b, axis: int = 0) -> GraphNode:
    return apply("concat", a, b, axis=axis)


def sqrt(a) -> GraphNode:
    """Square root of a strictly positive node, composed as exp(ln(a)/2)."""
    return exp(scale(ln(a), 0.5))


def floor_at(a, floor: float) -> GraphNode:
    """Elementwise max(a, floor), composed as relu(a - floor) + floor."""
    return add(relu(sub(a, as_node(floor))), as_node(floor))
