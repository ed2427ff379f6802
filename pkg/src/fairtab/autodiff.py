"""Reverse-mode automatic differentiation over dense float64 arrays.

Every operation records its parents and a vector-Jacobian product written in
terms of the same operations, so a gradient computed with
``create_graph=True`` is itself a graph that can be differentiated again.
That is what the critic's gradient penalty needs.

    >>> x = parameter(np.array(3.0))
    >>> (g,) = grad(square(x), [x])
    >>> float(g.value)
    6.0
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "DomainError",
    "GradientContractError",
    "Node",
    "constant",
    "parameter",
    "no_grad",
    "apply",
    "OPS",
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "neg",
    "relu",
    "leaky_relu",
    "softmax",
    "log",
    "exp",
    "square",
    "sqrt",
    "sigmoid",
    "softplus",
    "concat",
    "take",
    "reshape",
    "broadcast_to",
    "sum_to",
    "sum",
    "mean",
    "row_l2_norm",
    "grad",
    "backward",
    "AdamState",
    "adam_step",
    "Adam",
    "gumbel_noise",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ValueError):
    """An operand lies outside the mathematical domain of an operation."""


class GradientContractError(RuntimeError):
    """backward/grad was called on something other than a scalar root."""


class _GradMode(threading.local):
    recording = True


_mode = _GradMode()


@contextlib.contextmanager
def no_grad():
    """Evaluate operations without recording parents or backward closures."""
    previous = _mode.recording
    _mode.recording = False
    try:
        yield
    finally:
        _mode.recording = previous


@contextlib.contextmanager
def _recording(flag: bool):
    previous = _mode.recording
    _mode.recording = flag
    try:
        yield
    finally:
        _mode.recording = previous


VJP = Callable[["Node", "Node"], Sequence["Node | None"]]


class Node:
    """A value in a computation graph.

    ``vjp(g, out)`` maps the upstream gradient ``g`` (and this node itself,
    passed back in by the engine so closures never hold a reference cycle) to
    one gradient per parent.
    """

    __slots__ = ("value", "op", "parents", "vjp", "requires_grad", "name", "grad", "__weakref__")

    def __init__(
        self,
        value,
        op: str = "leaf",
        parents: tuple[Node, ...] = (),
        vjp: VJP | None = None,
        requires_grad: bool = False,
        name: str | None = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.op = op
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.name = name
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    @property
    def T(self) -> Node:
        return transpose(self)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node({self.op}{label}, shape={self.shape})"

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


def constant(value, name: str | None = None) -> Node:
    return Node(value, name=name)


def parameter(value, name: str | None = None) -> Node:
    """A leaf that gradients are taken with respect to."""
    return Node(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _make(value: np.ndarray, op: str, parents: tuple[Node, ...], vjp: VJP) -> Node:
    if _mode.recording and any(p.requires_grad for p in parents):
        return Node(value, op, parents, vjp, requires_grad=True)
    if _mode.recording:
        return Node(value, op, parents)
    return Node(value, op)


def _broadcast_shape(a: Node, b: Node, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def vjp(g, out):
        return matmul(g, transpose(b)), matmul(transpose(a), g)

    return _make(a.value @ b.value, "matmul", (a, b), vjp)


def transpose(a) -> Node:
    a = _as_node(a)
    if a.value.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got shape {a.shape}")
    return _make(a.value.T, "transpose", (a,), lambda g, out: (transpose(g),))


# ---------------------------------------------------------------------------
# Elementwise arithmetic (numpy broadcasting, reduced back in the vjp)
# ---------------------------------------------------------------------------


def add(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _broadcast_shape(a, b, "add")

    def vjp(g, out):
        return sum_to(g, a.shape), sum_to(g, b.shape)

    return _make(a.value + b.value, "add", (a, b), vjp)


def sub(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _broadcast_shape(a, b, "sub")

    def vjp(g, out):
        return sum_to(g, a.shape), neg(sum_to(g, b.shape))

    return _make(a.value - b.value, "sub", (a, b), vjp)


def mul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _broadcast_shape(a, b, "mul")

    def vjp(g, out):
        return sum_to(mul(g, b), a.shape), sum_to(mul(g, a), b.shape)

    return _make(a.value * b.value, "mul", (a, b), vjp)


def div(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _broadcast_shape(a, b, "div")
    if np.any(b.value == 0):
        raise DomainError("div: division by zero")

    def vjp(g, out):
        ga = div(g, b)
        return sum_to(ga, a.shape), sum_to(neg(mul(ga, out)), b.shape)

    return _make(a.value / b.value, "div", (a, b), vjp)


def scale(a, c: float) -> Node:
    """Multiply by a Python scalar that is not itself differentiated."""
    a = _as_node(a)
    c = float(c)
    return _make(a.value * c, "scale", (a,), lambda g, out: (scale(g, c),))


def neg(a) -> Node:
    return scale(a, -1.0)


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------


def relu(a) -> Node:
    a = _as_node(a)
    mask = (a.value > 0).astype(np.float64)
    return _make(a.value * mask, "relu", (a,), lambda g, out: (mul(g, Node(mask)),))


def leaky_relu(a, slope: float = 0.01) -> Node:
    # Input exactly 0 takes the negative-slope branch; second derivative is 0.
    a = _as_node(a)
    slopes = np.where(a.value > 0, 1.0, float(slope))
    return _make(a.value * slopes, "leaky_relu", (a,), lambda g, out: (mul(g, Node(slopes)),))


def softmax(a, tau: float = 1.0) -> Node:
    """Row-wise softmax of ``a / tau`` over the last axis of a matrix.

    Callers select a categorical block with :func:`take` first.
    """
    a = _as_node(a)
    if tau <= 0:
        raise DomainError(f"softmax: temperature must be positive, got {tau}")
    if a.value.ndim != 2:
        raise DimensionError(f"softmax: expected a matrix, got shape {a.shape}")
    z = a.value / tau
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g, out):
        inner = sub(g, sum(mul(g, out), axis=1, keepdims=True))
        return (scale(mul(out, inner), 1.0 / tau),)

    return _make(y, "softmax", (a,), vjp)


def log(a) -> Node:
    a = _as_node(a)
    if np.any(a.value <= 0):
        raise DomainError("log: argument must be strictly positive")
    return _make(np.log(a.value), "log", (a,), lambda g, out: (div(g, a),))


def exp(a) -> Node:
    a = _as_node(a)
    return _make(np.exp(a.value), "exp", (a,), lambda g, out: (mul(g, out),))


def square(a) -> Node:
    a = _as_node(a)
    return _make(a.value * a.value, "square", (a,), lambda g, out: (mul(g, scale(a, 2.0)),))


def sqrt(a) -> Node:
    a = _as_node(a)
    if np.any(a.value < 0):
        raise DomainError("sqrt: argument must be non-negative")
    return _make(np.sqrt(a.value), "sqrt", (a,), lambda g, out: (div(g, scale(out, 2.0)),))


def sigmoid(a) -> Node:
    a = _as_node(a)
    x = a.value
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _make(y, "sigmoid", (a,), lambda g, out: (mul(g, sub(out, square(out))),))


def softplus(a) -> Node:
    """log(1 + exp(a)), evaluated without overflow."""
    a = _as_node(a)
    return _make(np.logaddexp(0.0, a.value), "softplus", (a,), lambda g, out: (mul(g, sigmoid(a)),))


# ---------------------------------------------------------------------------
# Shape manipulation
# ---------------------------------------------------------------------------


def concat(nodes: Sequence, axis: int = 1) -> Node:
    nodes = tuple(_as_node(n) for n in nodes)
    if not nodes:
        raise DimensionError("concat: nothing to concatenate")
    try:
        value = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([0] + [n.shape[axis] for n in nodes])

    def vjp(g, out):
        return tuple(take(g, axis, int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _make(value, "concat", nodes, vjp)


def take(a, axis: int, start: int, stop: int) -> Node:
    """The half-open range ``[start, stop)`` along ``axis``."""
    a = _as_node(a)
    size = a.shape[axis]
    if not 0 <= start <= stop <= size:
        raise DimensionError(f"take: range [{start}, {stop}) outside axis of size {size}")
    index = [slice(None)] * a.value.ndim
    index[axis] = slice(start, stop)
    value = a.value[tuple(index)]

    def vjp(g, out):
        parts = []
        if start > 0:
            shape = list(a.shape)
            shape[axis] = start
            parts.append(Node(np.zeros(shape)))
        parts.append(g)
        if stop < size:
            shape = list(a.shape)
            shape[axis] = size - stop
            parts.append(Node(np.zeros(shape)))
        return (concat(parts, axis=axis) if len(parts) > 1 else g,)

    return _make(value, "slice", (a,), vjp)


def reshape(a, shape: tuple[int, ...]) -> Node:
    a = _as_node(a)
    try:
        value = a.value.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _make(value, "reshape", (a,), lambda g, out: (reshape(g, a.shape),))


def broadcast_to(a, shape: tuple[int, ...]) -> Node:
    a = _as_node(a)
    shape = tuple(shape)
    try:
        value = np.broadcast_to(a.value, shape).copy()
    except ValueError:
        raise DimensionError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from None
    return _make(value, "broadcast_to", (a,), lambda g, out: (sum_to(g, a.shape),))


def _sum_to_array(x: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    lead = x.ndim - len(shape)
    if lead:
        x = x.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and x.shape[i] != 1)
    if axes:
        x = x.sum(axis=axes, keepdims=True)
    return x


def sum_to(a, shape: tuple[int, ...]) -> Node:
    """Sum over broadcast dimensions so the result has ``shape``."""
    a = _as_node(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    value = _sum_to_array(a.value, shape)
    if value.shape != shape:
        raise DimensionError(f"sum_to: cannot reduce {a.shape} to {shape}")
    return _make(value, "sum_to", (a,), lambda g, out: (broadcast_to(g, a.shape),))


def _kept_shape(shape: tuple[int, ...], axis) -> tuple[int, ...]:
    if axis is None:
        return (1,) * len(shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(shape) for ax in axes)
    return tuple(1 if i in axes else n for i, n in enumerate(shape))


def sum(a, axis=None, keepdims: bool = False) -> Node:  # noqa: A001 - mirrors numpy
    a = _as_node(a)
    value = a.value.sum(axis=axis, keepdims=keepdims)
    kept = _kept_shape(a.shape, axis)

    def vjp(g, out):
        return (broadcast_to(reshape(g, kept), a.shape),)

    return _make(np.asarray(value), "sum", (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Node:
    a = _as_node(a)
    value = a.value.mean(axis=axis, keepdims=keepdims)
    kept = _kept_shape(a.shape, axis)
    count = a.value.size // max(int(np.prod(kept)), 1)

    def vjp(g, out):
        return (broadcast_to(reshape(scale(g, 1.0 / count), kept), a.shape),)

    return _make(np.asarray(value), "mean", (a,), vjp)


def row_l2_norm(a) -> Node:
    """Euclidean norm of each row, shape ``(n, 1)``.

    The gradient at a zero row is taken to be zero.
    """
    a = _as_node(a)
    if a.value.ndim != 2:
        raise DimensionError(f"row_l2_norm: expected a matrix, got shape {a.shape}")
    value = np.sqrt(np.sum(a.value * a.value, axis=1, keepdims=True))

    def vjp(g, out):
        guard = Node((out.value == 0).astype(np.float64))
        return (div(mul(g, a), add(out, guard)),)

    return _make(value, "row_l2_norm", (a,), vjp)


OPS: dict[str, Callable[..., Node]] = {
    "matmul": matmul,
    "transpose": transpose,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "scale": scale,
    "neg": neg,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "softmax": softmax,
    "log": log,
    "exp": exp,
    "square": square,
    "sqrt": sqrt,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "concat": lambda *nodes, axis=1: concat(nodes, axis=axis),
    "slice": take,
    "reshape": reshape,
    "broadcast_to": broadcast_to,
    "sum_to": sum_to,
    "sum": sum,
    "mean": mean,
    "row_l2_norm": row_l2_norm,
}


def apply(op_kind: str, inputs: Sequence, **attrs) -> Node:
    """Dispatch by op name, e.g. ``apply("leaky_relu", [x], slope=0.01)``."""
    try:
        fn = OPS[op_kind]
    except KeyError:
        raise ValueError(f"unknown op_kind {op_kind!r}") from None
    return fn(*inputs, **attrs)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def _topological(root: Node) -> list[Node]:
    """Nodes that require grad, ordered so every node precedes its parents."""
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node.parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def _accumulate(root: Node, targets: Iterable[Node] | None, create_graph: bool) -> dict[int, Node]:
    if root.value.size != 1:
        raise GradientContractError(f"gradient root must be scalar, got shape {root.shape}")
    order = _topological(root)

    if targets is None:
        useful = {id(n) for n in order}
    else:
        # Only propagate into nodes from which some target is reachable.
        wanted = {id(t) for t in targets}
        useful = set()
        for node in reversed(order):
            if id(node) in wanted or any(id(p) in useful for p in node.parents):
                useful.add(id(node))

    grads: dict[int, Node] = {}
    if id(root) not in useful:
        return grads
    grads[id(root)] = Node(np.ones_like(root.value))
    with _recording(create_graph):
        for node in order:
            g = grads.get(id(node))
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g, node)):
                if pg is None or not parent.requires_grad or id(parent) not in useful:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else add(prev, pg)
    return grads


def grad(root: Node, wrt: Sequence[Node], create_graph: bool = False) -> list[Node]:
    """Gradients of scalar ``root`` with respect to each node in ``wrt``.

    Nodes ``root`` does not depend on get an all-zero gradient. With
    ``create_graph`` the returned nodes are differentiable functions of the
    graph's leaves.
    """
    grads = _accumulate(root, wrt, create_graph)
    out = []
    for w in wrt:
        g = grads.get(id(w))
        out.append(g if g is not None else Node(np.zeros_like(w.value)))
    return out


def backward(root: Node, create_graph: bool = False) -> dict[Node, Node]:
    """Gradients of ``root`` for every reachable leaf that requires grad.

    Also stores each leaf's gradient array on ``leaf.grad``.
    """
    grads = _accumulate(root, None, create_graph)
    result: dict[Node, Node] = {}
    for node in _topological(root):
        if node.is_leaf and id(node) in grads:
            g = grads[id(node)]
            node.grad = g.value
            result[node] = g
    return result


# ---------------------------------------------------------------------------
# Optimisation and noise
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    alpha: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Node], **hyper) -> AdamState:
        return cls(
            first_moment=[np.zeros_like(p.value) for p in params],
            second_moment=[np.zeros_like(p.value) for p in params],
            **hyper,
        )


def adam_step(params: Sequence[Node], grads: Sequence, state: AdamState) -> None:
    """One bias-corrected Adam update; replaces each ``param.value``.

    Values are replaced rather than written into, so graphs built before the
    step keep seeing the old arrays.
    """
    if not (len(params) == len(grads) == len(state.first_moment) == len(state.second_moment)):
        raise DimensionError("adam_step: params, grads and moments differ in length")
    grads = [g.value if isinstance(g, Node) else np.asarray(g, dtype=np.float64) for g in grads]
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"adam_step: shape mismatch {p.shape} / {g.shape} / {m.shape}")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        m = b1 * state.first_moment[i] + (1.0 - b1) * g
        v = b2 * state.second_moment[i] + (1.0 - b2) * (g * g)
        state.first_moment[i] = m
        state.second_moment[i] = v
        p.value = p.value - state.alpha * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    """Adam bound to a fixed list of parameters."""

    def __init__(self, params: Sequence[Node], alpha=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState.for_params(self.params, alpha=alpha, beta1=beta1, beta2=beta2, eps=eps)

    def step(self, grads: Sequence) -> None:
        adam_step(self.params, grads, self.state)


_U_FLOOR = 1e-12


def gumbel_noise(shape, rng: np.random.Generator) -> np.ndarray:
    """Standard Gumbel samples ``-log(-log(u))`` with ``u`` kept off 0 and 1."""
    u = np.clip(rng.random(shape), _U_FLOOR, 1.0 - _U_FLOOR)
    return -np.log(-np.log(u))
