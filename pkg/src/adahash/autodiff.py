"""Minimal reverse-mode automatic differentiation over dense float64 matrices.

Every value in the computation graph is a 2-D ``numpy.float64`` array wrapped
in a :class:`Node`. Graphs are built define-by-run: each training step creates
fresh op nodes on top of persistent leaf nodes (the trainable parameters).
``backward`` walks the graph once in reverse topological order and accumulates
gradients with ``+=`` so that shared subgraphs (e.g. one encoder feeding
several losses) receive the sum of all downstream contributions.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

# Floor applied inside log() so that probabilities that underflow to zero
# yield a large-but-finite loss instead of -inf.
LOG_FLOOR = 1e-12


def _as_matrix(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64, order="C")
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ValueError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


class Node:
    """One vertex of the computation graph.

    ``value`` and ``grad`` always have identical shapes. ``parents`` is empty
    for leaves (parameters and constants); ``op`` is a tag naming the rule
    that produced the node.
    """

    __slots__ = ("value", "grad", "parents", "op", "_rule")

    def __init__(self, value: np.ndarray, parents: tuple = (), op: str = "leaf",
                 rule: Callable[[np.ndarray], None] | None = None):
        self.value = value
        self.grad = np.zeros_like(value)
        self.parents = parents
        self.op = op
        self._rule = rule

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, shape={self.value.shape})"


def leaf(value) -> Node:
    """Wrap an array (or nested list) as a graph leaf.

    Used both for trainable parameters and for constants; only the caller
    distinguishes the two by deciding whose ``grad`` to read.
    """
    return Node(_as_matrix(value))


def _binary_same_shape(a: Node, b: Node, op: str) -> None:
    if a.value.shape != b.value.shape:
        raise ValueError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}")


def add(a: Node, b: Node) -> Node:
    _binary_same_shape(a, b, "add")
    out = Node(a.value + b.value, (a, b), "add")

    def rule(g):
        a.grad += g
        b.grad += g

    out._rule = rule
    return out


def subtract(a: Node, b: Node) -> Node:
    _binary_same_shape(a, b, "subtract")
    out = Node(a.value - b.value, (a, b), "subtract")

    def rule(g):
        a.grad += g
        b.grad -= g

    out._rule = rule
    return out


def multiply(a: Node, b: Node) -> Node:
    """Elementwise product."""
    _binary_same_shape(a, b, "multiply")
    out = Node(a.value * b.value, (a, b), "multiply")

    def rule(g):
        a.grad += g * b.value
        b.grad += g * a.value

    out._rule = rule
    return out


def scale(a: Node, c: float) -> Node:
    """Multiply by a python scalar (not a graph node)."""
    c = float(c)
    out = Node(a.value * c, (a,), "scale")

    def rule(g):
        a.grad += g * c

    out._rule = rule
    return out


def matmul(a: Node, b: Node) -> Node:
    if a.value.shape[1] != b.value.shape[0]:
        raise ValueError(
            f"matmul: inner dimensions do not match, {a.value.shape} vs {b.value.shape}")
    out = Node(a.value @ b.value, (a, b), "matmul")

    def rule(g):
        a.grad += g @ b.value.T
        b.grad += a.value.T @ g

    out._rule = rule
    return out


def transpose(a: Node) -> Node:
    out = Node(np.ascontiguousarray(a.value.T), (a,), "transpose")

    def rule(g):
        a.grad += g.T

    out._rule = rule
    return out


def add_bias(a: Node, b: Node) -> Node:
    """Broadcast a (1, m) bias row over the rows of an (n, m) matrix."""
    if b.value.shape != (1, a.value.shape[1]):
        raise ValueError(
            f"add_bias: bias shape {b.value.shape} does not broadcast over {a.value.shape}")
    out = Node(a.value + b.value, (a, b), "add_bias")

    def rule(g):
        a.grad += g
        b.grad += g.sum(axis=0, keepdims=True)

    out._rule = rule
    return out


def tanh(a: Node) -> Node:
    t = np.tanh(a.value)
    out = Node(t, (a,), "tanh")

    def rule(g):
        a.grad += g * (1.0 - t * t)

    out._rule = rule
    return out


def leaky_relu(a: Node, slope: float = 0.2) -> Node:
    pos = a.value >= 0
    out = Node(np.where(pos, a.value, slope * a.value), (a,), "leaky_relu")

    def rule(g):
        a.grad += g * np.where(pos, 1.0, slope)

    out._rule = rule
    return out


def softmax_rows(a: Node) -> Node:
    """Row-wise softmax, stabilised by max subtraction."""
    if a.value.shape[1] < 2:
        raise ValueError(f"softmax_rows: need at least 2 columns, got {a.value.shape}")
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    out = Node(s, (a,), "softmax_rows")

    def rule(g):
        a.grad += s * (g - (g * s).sum(axis=1, keepdims=True))

    out._rule = rule
    return out


def log(a: Node) -> Node:
    """Natural log, floored at LOG_FLOOR; the gradient is zero below the floor."""
    above = a.value >= LOG_FLOOR
    out = Node(np.log(np.maximum(a.value, LOG_FLOOR)), (a,), "log")

    def rule(g):
        a.grad += np.where(above, g / np.maximum(a.value, LOG_FLOOR), 0.0)

    out._rule = rule
    return out


def square(a: Node) -> Node:
    out = Node(a.value * a.value, (a,), "square")

    def rule(g):
        a.grad += g * 2.0 * a.value

    out._rule = rule
    return out


def absolute(a: Node) -> Node:
    """Elementwise |x| with subgradient 0 at x == 0."""
    out = Node(np.abs(a.value), (a,), "absolute")

    def rule(g):
        a.grad += g * np.sign(a.value)

    out._rule = rule
    return out


def sum_all(a: Node) -> Node:
    """Sum of all entries, as a (1, 1) node."""
    out = Node(np.array([[a.value.sum()]]), (a,), "sum_all")

    def rule(g):
        a.grad += g[0, 0]

    out._rule = rule
    return out


def mean_all(a: Node) -> Node:
    n = a.value.size
    out = Node(np.array([[a.value.sum() / n]]), (a,), "mean_all")

    def rule(g):
        a.grad += g[0, 0] / n

    out._rule = rule
    return out


def concat_rows(a: Node, b: Node) -> Node:
    if a.value.shape[1] != b.value.shape[1]:
        raise ValueError(
            f"concat_rows: column counts differ, {a.value.shape} vs {b.value.shape}")
    na = a.value.shape[0]
    out = Node(np.concatenate([a.value, b.value], axis=0), (a, b), "concat_rows")

    def rule(g):
        a.grad += g[:na]
        b.grad += g[na:]

    out._rule = rule
    return out


def _topo_order(root: Node) -> list[Node]:
    # Iterative post-order DFS; parents always precede their consumers.
    order: list[Node] = []
    visited = {id(root)}
    stack: list[tuple[Node, iter]] = [(root, iter(root.parents))]
    while stack:
        node, parents = stack[-1]
        pushed = False
        for p in parents:
            if id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p.parents)))
                pushed = True
                break
        if not pushed:
            order.append(node)
            stack.pop()
    return order


def backward(root: Node) -> None:
    """Fill ``grad`` on every node reachable from a scalar root.

    Grads of reachable nodes are reset first, so repeated calls on the same
    graph are bitwise reproducible. Leaves not reachable from the root are
    untouched (their grads stay zero from construction).
    """
    if root.value.size != 1:
        raise ValueError(f"backward: root must be scalar, got shape {root.value.shape}")
    order = _topo_order(root)
    for node in order:
        node.grad = np.zeros_like(node.value)
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._rule is not None:
            node._rule(node.grad)


def grad_check(f: Callable[[], Node], params: Sequence[Node], step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must rebuild its graph from scratch on every call (define-by-run)
    and return a scalar node; ``params`` are the leaves to check. The error
    for one coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    if step <= 0:
        raise ValueError(f"grad_check: step must be positive, got {step}")
    root = f()
    backward(root)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.value.reshape(-1)
        an_flat = an.reshape(-1)
        for j in range(flat.size):
            saved = flat[j]
            flat[j] = saved + step
            f_plus = float(f().value[0, 0])
            flat[j] = saved - step
            f_minus = float(f().value[0, 0])
            flat[j] = saved
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = abs(an_flat[j] - numeric) / max(1.0, abs(an_flat[j]), abs(numeric))
            worst = max(worst, err)
    return worst
