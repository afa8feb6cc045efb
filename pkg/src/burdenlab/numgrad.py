"""Small reverse-mode differentiation engine over numpy arrays.

A :class:`Graph` records operations on rank-0/1/2 float64 arrays. Leaves are
either named inputs (bound at :meth:`Graph.forward` time) or constants. The
graph is evaluated in creation order, which is always a valid topological
order because a node can only reference nodes that already exist.

Batched recurrent rollouts keep one sequence per column, so a hidden state for
a batch of ``B`` sequences is an ``(n, B)`` matrix. There is no implicit
broadcasting: column-wise combinations go through the explicit ``add_col`` and
``mul_cols`` operations.

Kink convention: every piecewise-linear operation (``relu``, ``floor``,
``maximum``) and the Euclidean norm at the origin use a zero subgradient on
the inactive side of the kink, so a hinge sitting exactly on its threshold
contributes nothing to the gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

__all__ = [
    "Graph",
    "Node",
    "ShapeError",
    "NonFiniteError",
    "GraphStateError",
    "GradCheckReport",
    "grad_check",
]


class ShapeError(ValueError):
    """Operand shapes are inconsistent for the requested operation."""


class NonFiniteError(FloatingPointError):
    """A forward or backward value became NaN or infinite."""


class GraphStateError(RuntimeError):
    """The graph was used out of order (e.g. backward before forward)."""


class Node:
    __slots__ = ("id", "op", "inputs", "attrs", "value", "name")

    def __init__(self, id: int, op: str, inputs: tuple, attrs: Optional[dict] = None,
                 name: Optional[str] = None):
        self.id = id
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.value = None
        self.name = name

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node({self.id}, {self.op}{label})"


# ---------------------------------------------------------------------------
# forward / backward kernels
#
# Each entry maps an op name to (forward, backward). ``forward(vals, attrs)``
# returns the node value. ``backward(g, vals, out, attrs)`` returns one
# adjoint per input (``None`` for inputs that receive no gradient).
# ---------------------------------------------------------------------------


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _f_add(v, at):
    _same_shape("add", v[0], v[1])
    return v[0] + v[1]


def _f_sub(v, at):
    _same_shape("sub", v[0], v[1])
    return v[0] - v[1]


def _f_mul(v, at):
    _same_shape("mul", v[0], v[1])
    return v[0] * v[1]


def _f_div(v, at):
    _same_shape("div", v[0], v[1])
    return v[0] / v[1]


def _f_add_n(v, at):
    out = v[0].copy()
    for x in v[1:]:
        _same_shape("add_n", out, x)
        out += x
    return out


def _f_matmul(v, at):
    a, b = v
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _b_matmul(g, v, out, at):
    a, b = v
    if b.ndim == 1:
        return np.outer(g, b), a.T @ g
    return g @ b.T, a.T @ g


def _f_add_col(v, at):
    m, c = v
    if m.ndim == 1:
        _same_shape("add_col", m, c)
        return m + c
    if c.ndim != 1 or c.shape[0] != m.shape[0]:
        raise ShapeError(f"add_col: column {c.shape} does not fit matrix {m.shape}")
    return m + c[:, None]


def _b_add_col(g, v, out, at):
    if g.ndim == 1:
        return g, g
    return g, g.sum(axis=1)


def _f_mul_cols(v, at):
    m, s = v
    if m.ndim == 1:
        if s.ndim != 0:
            raise ShapeError(f"mul_cols: vector needs a scalar factor, got {s.shape}")
        return m * s
    if s.ndim != 1 or s.shape[0] != m.shape[1]:
        raise ShapeError(f"mul_cols: factors {s.shape} do not fit matrix {m.shape}")
    return m * s[None, :]


def _b_mul_cols(g, v, out, at):
    m, s = v
    if m.ndim == 1:
        return g * s, np.asarray(np.dot(g, m))
    return g * s[None, :], (g * m).sum(axis=0)


def _f_take_cols(v, at):
    (e,) = v
    idx = at["index"]
    if e.ndim != 2:
        raise ShapeError("take_cols: table must be a matrix")
    if at["lo"] < 0 or at["hi"] >= e.shape[1]:
        raise IndexError("take_cols: index out of range")
    return e[:, idx]


def _b_take_cols(g, v, out, at):
    (e,) = v
    idx = at["index"]
    ge = np.zeros_like(e)
    if np.ndim(idx) == 0:
        ge[:, idx] = g
    else:
        onehot = np.zeros((idx.shape[0], e.shape[1]))
        onehot[np.arange(idx.shape[0]), idx] = 1.0
        ge = g @ onehot
    return (ge,)


def _f_gate_mix(v, at):
    z, h, c = v
    _same_shape("gate_mix", z, h)
    _same_shape("gate_mix", z, c)
    return (1.0 - z) * h + z * c


def _b_gate_mix(g, v, out, at):
    z, h, c = v
    return g * (c - h), g * (1.0 - z), g * z


def _f_col_sqnorm(v, at):
    (m,) = v
    if m.ndim == 1:
        return np.asarray(np.dot(m, m))
    return np.einsum("ij,ij->j", m, m)


def _b_col_sqnorm(g, v, out, at):
    (m,) = v
    if m.ndim == 1:
        return (2.0 * g * m,)
    return (2.0 * m * g[None, :],)


def _f_col_norm(v, at):
    return np.sqrt(_f_col_sqnorm(v, at))


def _b_col_norm(g, v, out, at):
    (m,) = v
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(out > 0.0, 1.0 / out, 0.0)
    if m.ndim == 1:
        return (m * (g * inv),)
    return (m * (g * inv)[None, :],)


def _softmax(x, axis=0):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _log_softmax(x, axis=0):
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def _f_logsumexp(v, at):
    (x,) = v
    m = x.max(axis=0)
    return m + np.log(np.exp(x - m).sum(axis=0))


def _b_logsumexp(g, v, out, at):
    (x,) = v
    return (_softmax(x) * g,)


def _labels_fit(logits, labels):
    if logits.ndim == 1:
        if np.ndim(labels) != 0:
            raise ShapeError("xent: a single logit vector takes one label")
    elif np.shape(labels) != (logits.shape[1],):
        raise ShapeError(f"xent: {np.shape(labels)} labels for logits {logits.shape}")
    if np.any(np.asarray(labels) < 0) or np.any(np.asarray(labels) >= logits.shape[0]):
        raise IndexError("xent: label out of range")


def _f_xent(v, at):
    (x,) = v
    labels = at["labels"]
    _labels_fit(x, labels)
    lse = _f_logsumexp(v, at)
    if x.ndim == 1:
        return np.asarray(lse - x[labels])
    return lse - x[labels, np.arange(x.shape[1])]


def _b_xent(g, v, out, at):
    (x,) = v
    labels = at["labels"]
    p = _softmax(x)
    if x.ndim == 1:
        p[labels] -= 1.0
        return (p * g,)
    p[labels, np.arange(x.shape[1])] -= 1.0
    return (p * g[None, :],)


def _f_kl(v, at):
    s, t = v
    _same_shape("kl_softmax", s, t)
    temp = at["temperature"]
    lp = _log_softmax(t / temp)
    lq = _log_softmax(s / temp)
    return (np.exp(lp) * (lp - lq)).sum(axis=0)


def _b_kl(g, v, out, at):
    s, t = v
    temp = at["temperature"]
    lp = _log_softmax(t / temp)
    lq = _log_softmax(s / temp)
    p = np.exp(lp)
    q = np.exp(lq)
    gs = (q - p) / temp * g
    gt = p * ((lp - lq) - out) / temp * g
    return gs, gt


_KERNELS: Dict[str, tuple] = {
    "add": (_f_add, lambda g, v, o, a: (g, g)),
    "sub": (_f_sub, lambda g, v, o, a: (g, -g)),
    "mul": (_f_mul, lambda g, v, o, a: (g * v[1], g * v[0])),
    "div": (_f_div, lambda g, v, o, a: (g / v[1], -g * o / v[1])),
    "add_n": (_f_add_n, lambda g, v, o, a: tuple(g for _ in v)),
    "scale": (lambda v, a: v[0] * a["c"], lambda g, v, o, a: (g * a["c"],)),
    "add_const": (lambda v, a: v[0] + a["c"], lambda g, v, o, a: (g,)),
    "matmul": (_f_matmul, _b_matmul),
    "add_col": (_f_add_col, _b_add_col),
    "mul_cols": (_f_mul_cols, _b_mul_cols),
    "take_cols": (_f_take_cols, _b_take_cols),
    "tanh": (lambda v, a: np.tanh(v[0]), lambda g, v, o, a: (g * (1.0 - o * o),)),
    "sigmoid": (lambda v, a: 0.5 * (1.0 + np.tanh(0.5 * v[0])),
                lambda g, v, o, a: (g * o * (1.0 - o),)),
    "exp": (lambda v, a: np.exp(v[0]), lambda g, v, o, a: (g * o,)),
    "square": (lambda v, a: v[0] * v[0], lambda g, v, o, a: (2.0 * g * v[0],)),
    "relu": (lambda v, a: np.maximum(v[0], 0.0), lambda g, v, o, a: (g * (v[0] > 0.0),)),
    "floor": (lambda v, a: np.maximum(v[0], a["c"]),
              lambda g, v, o, a: (g * (v[0] > a["c"]),)),
    "maximum": (lambda v, a: np.maximum(v[0], v[1]),
                lambda g, v, o, a: (g * (v[0] > v[1]), g * (v[0] <= v[1]))),
    "gate_mix": (_f_gate_mix, _b_gate_mix),
    "sum": (lambda v, a: np.asarray(v[0].sum()), lambda g, v, o, a: (np.full_like(v[0], g),)),
    "mean": (lambda v, a: np.asarray(v[0].mean()),
             lambda g, v, o, a: (np.full_like(v[0], g / v[0].size),)),
    "col_sqnorm": (_f_col_sqnorm, _b_col_sqnorm),
    "col_norm": (_f_col_norm, _b_col_norm),
    "logsumexp": (_f_logsumexp, _b_logsumexp),
    "xent": (_f_xent, _b_xent),
    "kl_softmax": (_f_kl, _b_kl),
}

# Ops with a kink and the function returning each entry's distance to it.
_KINKS: Dict[str, Callable] = {
    "relu": lambda v, a: np.abs(v[0]),
    "floor": lambda v, a: np.abs(v[0] - a["c"]),
    "maximum": lambda v, a: np.abs(v[0] - v[1]),
    "col_norm": lambda v, a: np.sqrt(_f_col_sqnorm(v, a)),
}


def _as_array(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim > 2:
        raise ShapeError(f"rank {arr.ndim} arrays are not supported")
    return arr


class Graph:
    """A recorded computation with a single scalar output.

    Build the graph by calling the op methods, mark the result with
    :meth:`set_output` (or pass it to :meth:`forward`), then call
    :meth:`forward` with bindings for every named input and
    :meth:`backward` for the adjoints.

    >>> g = Graph()
    >>> x = g.input("x")
    >>> _ = g.set_output(g.mul(x, x))
    >>> g.forward({"x": 3.0})
    9.0
    >>> float(g.grads()["x"])
    6.0
    """

    def __init__(self, check_finite: bool = True):
        self.nodes: List[Node] = []
        self.inputs: Dict[str, Node] = {}
        self.output: Optional[Node] = None
        self.check_finite = check_finite
        self._evaluated = False
        self._adjoints: Optional[List[Optional[np.ndarray]]] = None
        self._plan_cache = None

    # -- leaves ------------------------------------------------------------

    def _new(self, op, inputs=(), attrs=None, name=None) -> Node:
        nodes = self.nodes
        for x in inputs:
            if x.__class__ is not Node or x.id >= len(nodes) or nodes[x.id] is not x:
                raise GraphStateError(f"{op}: operand does not belong to this graph")
        node = Node(len(nodes), op, inputs, attrs, name)
        nodes.append(node)
        self._evaluated = False
        return node

    def input(self, name: str) -> Node:
        if name in self.inputs:
            raise ValueError(f"input {name!r} already declared")
        node = self._new("input", name=name)
        self.inputs[name] = node
        return node

    def const(self, value) -> Node:
        return self._new("const", attrs={"value": _as_array(value)})

    # -- elementwise / linear ops -------------------------------------------

    def add(self, a, b): return self._new("add", (a, b))
    def sub(self, a, b): return self._new("sub", (a, b))
    def mul(self, a, b): return self._new("mul", (a, b))
    def div(self, a, b): return self._new("div", (a, b))
    def scale(self, a, c: float): return self._new("scale", (a,), {"c": float(c)})
    def add_const(self, a, c: float): return self._new("add_const", (a,), {"c": float(c)})
    def matmul(self, a, b): return self._new("matmul", (a, b))
    def add_col(self, m, c): return self._new("add_col", (m, c))
    def mul_cols(self, m, s): return self._new("mul_cols", (m, s))
    def tanh(self, a): return self._new("tanh", (a,))
    def sigmoid(self, a): return self._new("sigmoid", (a,))
    def exp(self, a): return self._new("exp", (a,))
    def square(self, a): return self._new("square", (a,))
    def relu(self, a): return self._new("relu", (a,))
    def maximum(self, a, b): return self._new("maximum", (a, b))
    def gate_mix(self, z, h, c): return self._new("gate_mix", (z, h, c))
    def sum(self, a): return self._new("sum", (a,))
    def mean(self, a): return self._new("mean", (a,))
    def col_sqnorm(self, a): return self._new("col_sqnorm", (a,))
    def col_norm(self, a): return self._new("col_norm", (a,))
    def logsumexp(self, a): return self._new("logsumexp", (a,))

    def add_n(self, items: Sequence[Node]) -> Node:
        items = list(items)
        if not items:
            raise ValueError("add_n needs at least one operand")
        if len(items) == 1:
            return items[0]
        return self._new("add_n", tuple(items))

    def hinge(self, a, threshold: float = 0.0) -> Node:
        """``max{0, a - threshold}`` elementwise."""
        if threshold:
            a = self.add_const(a, -threshold)
        return self.relu(a)

    def floor(self, a, c: float) -> Node:
        """``max{a, c}`` elementwise with a constant floor."""
        return self._new("floor", (a,), {"c": float(c)})

    def take_cols(self, table, index) -> Node:
        """Columns ``table[:, index]``; ``index`` is a constant int or int array."""
        idx = np.asarray(index, dtype=np.intp)
        lo, hi = (int(idx.min()), int(idx.max())) if idx.size else (0, -1)
        return self._new("take_cols", (table,), {"index": idx, "lo": lo, "hi": hi})

    def xent(self, logits, labels) -> Node:
        """Softmax cross-entropy per column (or for a single logit vector)."""
        return self._new("xent", (logits,), {"labels": np.asarray(labels, dtype=np.intp)})

    def kl_softmax(self, student, teacher, temperature: float = 1.0) -> Node:
        """KL(softmax(teacher/T) || softmax(student/T)) per column."""
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        return self._new("kl_softmax", (student, teacher), {"temperature": float(temperature)})

    # -- evaluation --------------------------------------------------------

    def _plan(self):
        # (node, forward kernel or None for leaves, operands), rebuilt when nodes are added
        if self._plan_cache is None or len(self._plan_cache) != len(self.nodes):
            self._plan_cache = [(n, None if n.op in ("input", "const") else _KERNELS[n.op][0],
                                 n.inputs) for n in self.nodes]
        return self._plan_cache

    def set_output(self, node: Node) -> Node:
        if node.id >= len(self.nodes) or self.nodes[node.id] is not node:
            raise GraphStateError("output node does not belong to this graph")
        self.output = node
        return node

    def forward(self, bindings: Optional[Mapping[str, object]] = None,
                output: Optional[Node] = None) -> float:
        """Evaluate every node; return the scalar output value."""
        if output is not None:
            self.set_output(output)
        if self.output is None:
            raise GraphStateError("no output node set")
        bindings = dict(bindings or {})
        missing = set(self.inputs) - set(bindings)
        if missing:
            raise GraphStateError(f"unbound inputs: {sorted(missing)}")
        unknown = set(bindings) - set(self.inputs)
        if unknown:
            raise GraphStateError(f"bindings for undeclared inputs: {sorted(unknown)}")
        check = self.check_finite
        isfinite = np.isfinite
        for node, fwd, args in self._plan():
            if fwd is None:
                val = _as_array(bindings[node.name]) if node.op == "input" else node.attrs["value"]
            else:
                val = fwd([x.value for x in args], node.attrs)
            if check and not isfinite(val).all():
                raise NonFiniteError(f"non-finite value at node {node.id} ({node.op})")
            node.value = val
        if self.output.value.shape != ():
            raise ShapeError(f"output must be a scalar, got shape {self.output.value.shape}")
        self._evaluated = True
        self._adjoints = None
        return float(self.output.value)

    def _backward(self) -> List[Optional[np.ndarray]]:
        if not self._evaluated:
            raise GraphStateError("backward called before forward")
        if self._adjoints is not None:
            return self._adjoints
        nodes = self.nodes
        adj: List[Optional[np.ndarray]] = [None] * len(nodes)
        adj[self.output.id] = np.ones((), dtype=np.float64)
        for node in reversed(nodes[: self.output.id + 1]):
            g = adj[node.id]
            if g is None or not node.inputs:
                continue
            grads = _KERNELS[node.op][1](g, [x.value for x in node.inputs], node.value, node.attrs)
            for x, gx in zip(node.inputs, grads):
                if gx is None:
                    continue
                # Kernels never mutate their arguments, so aliasing is safe.
                prev = adj[x.id]
                adj[x.id] = gx if prev is None else prev + gx
        if self.check_finite:
            for node, a in zip(nodes, adj):
                if a is not None and not np.all(np.isfinite(a)):
                    raise NonFiniteError(f"non-finite adjoint at node {node.id} ({node.op})")
        self._adjoints = adj
        return adj

    def _adjoint(self, node: Node) -> np.ndarray:
        a = self._backward()[node.id]
        if a is None:
            return np.zeros_like(node.value)
        return np.asarray(a, dtype=np.float64).reshape(np.shape(node.value))

    def backward(self) -> Dict[int, np.ndarray]:
        """Adjoint of the output with respect to every node, keyed by node id.

        Nodes the output does not depend on get an exact zero adjoint.
        """
        self._backward()
        return {node.id: self._adjoint(node) for node in self.nodes}

    def grads(self) -> Dict[str, np.ndarray]:
        """Adjoints of the named inputs."""
        return {name: self._adjoint(node) for name, node in self.inputs.items()}

    def kink_distance(self) -> float:
        """Smallest distance of any kinked op's argument from its kink."""
        if not self._evaluated:
            raise GraphStateError("kink_distance needs a forward pass")
        best = np.inf
        for node in self.nodes:
            fn = _KINKS.get(node.op)
            if fn is None:
                continue
            dist = fn([x.value for x in node.inputs], node.attrs)
            if np.size(dist):
                best = min(best, float(np.min(dist)))
        return best

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass
class GradCheckReport:
    """Per-input worst relative error between analytic and numeric gradients."""

    errors: Dict[str, float]
    tolerance: float
    step: float
    analytic: Dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    numeric: Dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def relative_error(g, g_hat) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    g_hat = np.asarray(g_hat, dtype=np.float64)
    return np.abs(g - g_hat) / np.maximum(1e-8, np.abs(g) + np.abs(g_hat))


def grad_check(graph: Graph, bindings: Mapping[str, object], step: float = 1e-5,
               tolerance: float = 1e-4, wrt: Optional[Iterable[str]] = None) -> GradCheckReport:
    """Compare backward gradients against central finite differences.

    Every entry of every input named in ``wrt`` (default: all inputs) is
    perturbed by ``±step``. The graph is left evaluated at ``bindings``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    base = {k: _as_array(v).copy() for k, v in bindings.items()}
    graph.forward(base)
    analytic = {k: v.copy() for k, v in graph.grads().items()}
    for name, a in analytic.items():
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"non-finite gradient for input {name!r}")
    names = list(wrt) if wrt is not None else list(graph.inputs)
    # the unperturbed pass above already checked every node; a non-finite
    # perturbed output still surfaces as a non-finite numeric estimate
    check, graph.check_finite = graph.check_finite, False
    try:
        numeric: Dict[str, np.ndarray] = {}
        errors: Dict[str, float] = {}
        for name in names:
            x = base[name]
            est = np.zeros_like(x)
            flat = x.reshape(-1)
            est_flat = est.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = graph.forward(base)
                flat[i] = orig - step
                down = graph.forward(base)
                flat[i] = orig
                est_flat[i] = (up - down) / (2.0 * step)
            numeric[name] = est
            err = relative_error(analytic[name], est)
            errors[name] = float(err.max()) if err.size else 0.0
    finally:
        graph.check_finite = check
    graph.forward(base)
    return GradCheckReport(errors, tolerance, step, analytic, numeric)
