"""Dense 2-D arrays with reverse-mode automatic differentiation.

Every value is a float64 matrix (rows = batch, cols = features). Operations
record their parents and a local backward rule; :func:`backward` walks the
graph in reverse topological order and accumulates gradients into every node
that requires them.

Broadcasting is limited to operands of shape ``(1, n)``, ``(m, 1)`` or
``(1, 1)`` against an ``(m, n)`` partner, which covers bias rows, per-row
log-determinants and scalars.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, DomainError, EvaluationError

__all__ = [
    "Node",
    "as_node",
    "constant",
    "parameter",
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "exp",
    "log",
    "sqrt",
    "square",
    "arctan",
    "tanh",
    "concat_cols",
    "split_even_odd",
    "interleave_cols",
    "slice_cols",
    "reduce_sum",
    "reduce_mean",
    "reduce_var",
    "backward",
    "zero_grad",
    "finite_diff_check",
]


def _as_array2(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


class Node:
    """A value in the computation graph.

    Leaves created with ``requires_grad=True`` are parameters: their ``grad``
    accumulates across :func:`backward` calls until :func:`zero_grad`.
    """

    __slots__ = ("value", "_grad", "parents", "requires_grad", "op", "name", "_backward")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False, op="leaf", name=None):
        if type(value) is np.ndarray and value.ndim == 2 and value.dtype == np.float64:
            self.value = value
        else:
            self.value = _as_array2(value)
        self.parents = tuple(parents)
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in self.parents)
        self.op = op
        self.name = name
        self._backward = backward_fn
        self._grad = np.zeros_like(self.value) if self.requires_grad and not self.parents else None

    @property
    def grad(self) -> np.ndarray:
        """d(output)/d(self); zeros until a backward pass reaches this node."""
        if self._grad is None:
            return np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g) -> None:
        self._grad = g

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def _accum(self, g: np.ndarray) -> None:
        # never in place: upstream gradient arrays may be shared between parents
        if self.requires_grad:
            g = _unbroadcast(g, self.value.shape)
            self._grad = g if self._grad is None else self._grad + g

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(op={self.op}, shape={self.shape})"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self):
        return transpose(self)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def constant(value, name=None) -> Node:
    return Node(value, name=name)


def parameter(value, name=None) -> Node:
    return Node(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _broadcast_shape(a: Node, b: Node, op: str) -> tuple[int, int]:
    out = []
    for da, db in zip(a.shape, b.shape):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")
    return tuple(out)


# --- linear algebra -------------------------------------------------------


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accum(g @ b.value.T)
        if b.requires_grad:
            b._accum(a.value.T @ g)

    return Node(a.value @ b.value, (a, b), bw, op="matmul")


def transpose(a) -> Node:
    a = as_node(a)
    return Node(a.value.T.copy(), (a,), lambda g: a._accum(g.T), op="transpose")


# --- elementwise ----------------------------------------------------------


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        a._accum(g)
        b._accum(g)

    return Node(a.value + b.value, (a, b), bw, op="add")


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        a._accum(g)
        b._accum(-g)

    return Node(a.value - b.value, (a, b), bw, op="sub")


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            a._accum(g * b.value)
        if b.requires_grad:
            b._accum(g * a.value)

    return Node(a.value * b.value, (a, b), bw, op="mul")


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "div")
    if np.any(b.value == 0):
        raise DomainError("div: denominator contains zeros")
    out_value = a.value / b.value

    def bw(g):
        if a.requires_grad:
            a._accum(g / b.value)
        if b.requires_grad:
            b._accum(-g * out_value / b.value)

    return Node(out_value, (a, b), bw, op="div")


def neg(a) -> Node:
    a = as_node(a)
    return Node(-a.value, (a,), lambda g: a._accum(-g), op="neg")


def scale(a, factor: float) -> Node:
    a = as_node(a)
    factor = float(factor)
    return Node(a.value * factor, (a,), lambda g: a._accum(g * factor), op="scale")


def exp(a) -> Node:
    a = as_node(a)
    out_value = np.exp(a.value)
    return Node(out_value, (a,), lambda g: a._accum(g * out_value), op="exp")


def log(a) -> Node:
    a = as_node(a)
    if np.any(a.value <= 0):
        raise DomainError("log: operand must be strictly positive")
    return Node(np.log(a.value), (a,), lambda g: a._accum(g / a.value), op="log")


def sqrt(a) -> Node:
    a = as_node(a)
    if np.any(a.value <= 0):
        raise DomainError("sqrt: operand must be strictly positive")
    out_value = np.sqrt(a.value)
    return Node(out_value, (a,), lambda g: a._accum(0.5 * g / out_value), op="sqrt")


def square(a) -> Node:
    a = as_node(a)
    return Node(a.value * a.value, (a,), lambda g: a._accum(2.0 * g * a.value), op="square")


def arctan(a) -> Node:
    a = as_node(a)
    return Node(np.arctan(a.value), (a,), lambda g: a._accum(g / (1.0 + a.value**2)), op="arctan")


def tanh(a) -> Node:
    a = as_node(a)
    out_value = np.tanh(a.value)
    return Node(out_value, (a,), lambda g: a._accum(g * (1.0 - out_value**2)), op="tanh")


# --- structure ------------------------------------------------------------


def concat_cols(*nodes) -> Node:
    nodes = [as_node(n) for n in nodes]
    rows = {n.shape[0] for n in nodes}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ {sorted(rows)}")
    bounds = np.cumsum([0] + [n.shape[1] for n in nodes])

    def bw(g):
        for n, lo, hi in zip(nodes, bounds[:-1], bounds[1:]):
            n._accum(g[:, lo:hi])

    return Node(np.concatenate([n.value for n in nodes], axis=1), nodes, bw, op="concat_cols")


def split_even_odd(x) -> tuple[Node, Node]:
    """Columns 0, 2, 4, ... and columns 1, 3, 5, ...; the first half gets ceil(n/2)."""
    x = as_node(x)
    if x.shape[1] < 2:
        raise DimensionError(f"split_even_odd: need at least 2 columns, got {x.shape[1]}")
    even = Node(x.value[:, 0::2].copy(), (x,), None, op="split_even")
    odd = Node(x.value[:, 1::2].copy(), (x,), None, op="split_odd")

    def bw_even(g):
        full = np.zeros_like(x.value)
        full[:, 0::2] = g
        x._accum(full)

    def bw_odd(g):
        full = np.zeros_like(x.value)
        full[:, 1::2] = g
        x._accum(full)

    even._backward = bw_even
    odd._backward = bw_odd
    return even, odd


def interleave_cols(even, odd) -> Node:
    """Inverse of :func:`split_even_odd`."""
    even, odd = as_node(even), as_node(odd)
    ne, no = even.shape[1], odd.shape[1]
    if even.shape[0] != odd.shape[0] or ne - no not in (0, 1):
        raise DimensionError(f"interleave_cols: cannot interleave {even.shape} with {odd.shape}")
    out_value = np.empty((even.shape[0], ne + no))
    out_value[:, 0::2] = even.value
    out_value[:, 1::2] = odd.value

    def bw(g):
        even._accum(g[:, 0::2])
        odd._accum(g[:, 1::2])

    return Node(out_value, (even, odd), bw, op="interleave_cols")


def slice_cols(x, start: int, stop: int) -> Node:
    x = as_node(x)
    if not 0 <= start <= stop <= x.shape[1]:
        raise DimensionError(f"slice_cols: [{start}:{stop}] out of range for {x.shape[1]} columns")

    def bw(g):
        full = np.zeros_like(x.value)
        full[:, start:stop] = g
        x._accum(full)

    return Node(x.value[:, start:stop].copy(), (x,), bw, op="slice_cols")


def _keep(value: np.ndarray, axis) -> np.ndarray:
    if axis is None:
        return value.reshape(1, 1)
    return value


def reduce_sum(x, axis=None) -> Node:
    """Sum over everything (1x1 result), rows (``axis=0``) or columns (``axis=1``)."""
    x = as_node(x)
    out_value = _keep(np.sum(x.value, axis=axis, keepdims=axis is not None), axis)
    return Node(out_value, (x,), lambda g: x._accum(np.broadcast_to(g, x.shape)), op="reduce_sum")


def reduce_mean(x, axis=None) -> Node:
    x = as_node(x)
    count = x.value.size if axis is None else x.shape[axis]
    out_value = _keep(np.mean(x.value, axis=axis, keepdims=axis is not None), axis)
    return Node(out_value, (x,), lambda g: x._accum(np.broadcast_to(g / count, x.shape)), op="reduce_mean")


def reduce_var(x, axis=None) -> Node:
    """Biased (population) variance."""
    x = as_node(x)
    count = x.value.size if axis is None else x.shape[axis]
    mean = np.mean(x.value, axis=axis, keepdims=True)
    centred = x.value - mean
    out_value = _keep(np.mean(centred**2, axis=axis, keepdims=axis is not None), axis)
    return Node(out_value, (x,), lambda g: x._accum(2.0 * centred * g / count), op="reduce_var")


# --- gradients ------------------------------------------------------------


def _topological(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(out: Node) -> None:
    """Populate ``grad`` of every node reachable from the scalar ``out``.

    Leaf gradients accumulate across calls; intermediate gradients are reset.
    """
    if out.shape != (1, 1):
        raise ContractError(f"backward needs a 1x1 scalar output, got {out.shape}")
    if not out.requires_grad:
        return
    order = _topological(out)
    for node in order:
        if not node.is_leaf:
            node._grad = None
    out._grad = np.ones((1, 1))
    for node in reversed(order):
        if node._backward is not None and node._grad is not None:
            node._backward(node._grad)


def zero_grad(params) -> None:
    for p in params:
        p.grad = np.zeros_like(p.value)


def finite_diff_check(f, params, step: float = 1e-5, grads=None) -> float:
    """Largest ``|analytic - central| / max(1, |central|)`` over all parameter entries.

    ``f`` takes no arguments and reads the current parameter values; it may
    return a 1x1 :class:`Node` or a float. When ``grads`` is omitted the
    analytic gradient comes from :func:`backward` on ``f()``.
    """
    if step <= 0:
        raise ContractError("finite_diff_check: step must be positive")
    params = list(params)

    def evaluate() -> float:
        out = f()
        val = float(out.value[0, 0]) if isinstance(out, Node) else float(out)
        if not np.isfinite(val):
            raise EvaluationError("finite_diff_check: objective is not finite at a probe point")
        return val

    if grads is None:
        zero_grad(params)
        out = f()
        if not isinstance(out, Node):
            raise ContractError("finite_diff_check: f must return a Node when grads are not given")
        backward(out)
        grads = [p.grad.copy() for p in params]
    worst = 0.0
    for p, g in zip(params, grads):
        g = np.asarray(g, dtype=np.float64).reshape(p.value.shape)
        flat = p.value.reshape(-1)  # view, so perturbations are seen by f
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = evaluate()
            flat[i] = orig - step
            lo = evaluate()
            flat[i] = orig
            central = (hi - lo) / (2.0 * step)
            worst = max(worst, abs(gflat[i] - central) / max(1.0, abs(central)))
    return worst
