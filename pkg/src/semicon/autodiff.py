"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tape`` records one forward computation as an append-only list of
primitive ops (define-by-run); ``backward`` replays it in reverse to
accumulate gradients. Tensors are plain ``numpy.float64`` arrays, so the
cached forward value of every node is available eagerly.

The tape is rebuilt on every training step and confined to a single
thread; apart from ``sgd_step`` (which mutates its own parameter arrays
in place) everything here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

Array = np.ndarray


def as_f64(data) -> Array:
    return np.asarray(data, dtype=np.float64)


@dataclass
class _Node:
    op: str
    parents: tuple[int, ...]
    value: Array
    # maps the gradient at this node to gradients of the parents;
    # None for leaves
    vjp: Callable[[Array], tuple[Array, ...]] | None


class Var:
    """Handle to one node on a tape."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def data(self) -> Array:
        return self.tape.nodes[self.idx].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        node = self.tape.nodes[self.idx]
        return f"Var(#{self.idx} {node.op} shape={self.data.shape})"


class Tape:
    """Append-only record of one forward pass.

    Parent ids always precede a node, so node order is already
    topological and the backward sweep visits each node exactly once.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def _append(self, node: _Node) -> Var:
        self.nodes.append(node)
        return Var(self, len(self.nodes) - 1)

    def param(self, data) -> Var:
        """Record a trainable leaf."""
        return self._append(_Node("param", (), as_f64(data), None))

    def const(self, data) -> Var:
        """Record a non-trainable leaf (inputs, masks)."""
        return self._append(_Node("const", (), as_f64(data), None))


def _record(op: str, parents: Sequence[Var], value: Array, vjp) -> Var:
    tape = parents[0].tape
    for p in parents[1:]:
        if p.tape is not tape:
            raise ShapeError(f"{op}: operands recorded on different tapes")
    return tape._append(_Node(op, tuple(p.idx for p in parents), value, vjp))


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _require_2d(op: str, x: Var) -> None:
    if x.data.ndim != 2:
        raise ShapeError(f"{op}: expected a 2-D tensor, got shape {x.shape}")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Var, b: Var) -> Var:
    _require_2d("matmul", a)
    _require_2d("matmul", b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.data, b.data
    out = av @ bv

    def vjp(g: Array):
        return g @ bv.T, av.T @ g

    return _record("matmul", (a, b), out, vjp)


def add(a: Var, b: Var) -> Var:
    ash, bsh = a.shape, b.shape
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {ash} and {bsh} do not broadcast") from None

    def vjp(g: Array):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _record("add", (a, b), out, vjp)


def mul(a: Var, b: Var) -> Var:
    """Elementwise product; used with constant 0/1 masks for selection."""
    ash, bsh = a.shape, b.shape
    av, bv = a.data, b.data
    try:
        out = av * bv
    except ValueError:
        raise ShapeError(f"mul: shapes {ash} and {bsh} do not broadcast") from None

    def vjp(g: Array):
        return _unbroadcast(g * bv, ash), _unbroadcast(g * av, bsh)

    return _record("mul", (a, b), out, vjp)


def scale(a: Var, c: float) -> Var:
    c = float(c)
    return _record("scale", (a,), a.data * c, lambda g: (g * c,))


def exp(a: Var) -> Var:
    out = np.exp(a.data)
    return _record("exp", (a,), out, lambda g: (g * out,))


def log(a: Var) -> Var:
    av = a.data
    return _record("log", (a,), np.log(av), lambda g: (g / av,))


def relu(a: Var) -> Var:
    av = a.data
    return _record("relu", (a,), np.maximum(av, 0.0), lambda g: (g * (av > 0.0),))


def row_sum(a: Var) -> Var:
    _require_2d("row_sum", a)
    out = a.data.sum(axis=1, keepdims=True)

    def vjp(g: Array):
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record("row_sum", (a,), out, vjp)


def row_max(a: Var) -> Var:
    _require_2d("row_max", a)
    av = a.data
    out = av.max(axis=1, keepdims=True)
    arg = av.argmax(axis=1)

    def vjp(g: Array):
        ga = np.zeros_like(av)
        ga[np.arange(av.shape[0]), arg] = g[:, 0]
        return (ga,)

    return _record("row_max", (a,), out, vjp)


def l2_normalize_rows(a: Var) -> Var:
    """Scale each row to unit L2 norm; zero rows pass through unchanged."""
    _require_2d("l2_normalize_rows", a)
    av = a.data
    norms = np.linalg.norm(av, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    out = av / safe

    def vjp(g: Array):
        # d(x/r)/dx applied to g: (g - y * <g, y>) / r, identity on zero rows
        inner = (g * out).sum(axis=1, keepdims=True)
        return ((g - out * inner) / safe,)

    return _record("l2_normalize_rows", (a,), out, vjp)


def gram(a: Var) -> Var:
    """Pairwise dot-product matrix A @ A.T."""
    _require_2d("gram", a)
    av = a.data
    return _record("gram", (a,), av @ av.T, lambda g: ((g + g.T) @ av,))


def gather(a: Var, indices: Array) -> Var:
    """Select entries of `a` by flat index; output has the indices' shape."""
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError("gather: indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.size):
        raise ShapeError(
            f"gather: index out of range for tensor of size {a.data.size}"
        )
    av = a.data

    def vjp(g: Array):
        ga = np.zeros(av.size)
        np.add.at(ga, idx.ravel(), g.ravel())
        return (ga.reshape(av.shape),)

    return _record("gather", (a,), av.ravel()[idx], vjp)


def reshape(a: Var, shape: tuple[int, ...]) -> Var:
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    old = a.shape
    return _record("reshape", (a,), a.data.reshape(shape),
                   lambda g: (g.reshape(old),))


def total_sum(a: Var) -> Var:
    out = np.asarray(a.data.sum())
    return _record("total_sum", (a,), out,
                   lambda g: (np.full(a.shape, float(g)),))


def mean(a: Var) -> Var:
    n = a.data.size
    out = np.asarray(a.data.mean())
    return _record("mean", (a,), out,
                   lambda g: (np.full(a.shape, float(g) / n),))


# ---------------------------------------------------------------------------
# backward pass, SGD, gradient checking
# ---------------------------------------------------------------------------

def backward(root: Var) -> dict[int, Array]:
    """Gradients of a scalar root with respect to every reachable node.

    Returns a map node-id -> gradient array (same shape as the node's
    value). Leaves the tape untouched; raises on a non-scalar root.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    nodes = root.tape.nodes
    grads: dict[int, Array] = {root.idx: np.ones_like(nodes[root.idx].value)}
    for i in range(root.idx, -1, -1):
        g = grads.get(i)
        if g is None:
            continue
        node = nodes[i]
        if node.vjp is None:
            continue
        for pid, pg in zip(node.parents, node.vjp(g)):
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
    return grads


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")


def sgd_step(params: Sequence[Array], grads: Sequence[Array],
             cfg: SgdConfig) -> Sequence[Array]:
    """Vanilla steepest descent: p <- p - lr * g, in place.

    No momentum, no weight decay.
    """
    if len(params) != len(grads):
        raise ShapeError(
            f"sgd_step: {len(params)} params vs {len(grads)} grads"
        )
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(
                f"sgd_step: param shape {p.shape} vs grad shape {g.shape}"
            )
        p -= cfg.learning_rate * g
    return params


def grads_for(grad_map: dict[int, Array], vars: Sequence[Var]) -> list[Array]:
    """Pull gradients for specific nodes, zeros where none flowed."""
    return [grad_map.get(v.idx, np.zeros(v.shape)) for v in vars]


def finite_diff_check(f: Callable[[list[Var]], Var],
                      params: Sequence[Array],
                      step: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central differences.

    `f` receives the parameters as tape leaves and must return a scalar
    Var; it is re-evaluated on a fresh tape for every perturbation.
    Error metric per coordinate: |g_ad - g_fd| / max(1, |g_fd|).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params = [as_f64(p).copy() for p in params]

    def evaluate(ps: list[Array]) -> float:
        tape = Tape()
        root = f([tape.param(p) for p in ps])
        val = float(root.data)
        if not np.isfinite(val):
            raise NumericError(f"finite_diff_check: f evaluated to {val}")
        return val

    tape = Tape()
    pvars = [tape.param(p) for p in params]
    root = f(pvars)
    if not np.isfinite(root.data).all():
        raise NumericError("finite_diff_check: non-finite forward value")
    analytic = grads_for(backward(root), pvars)

    worst = 0.0
    for k, p in enumerate(params):
        flat_ad = analytic[k].ravel()
        for j in range(p.size):
            orig = p.flat[j]
            p.flat[j] = orig + step
            f_plus = evaluate(params)
            p.flat[j] = orig - step
            f_minus = evaluate(params)
            p.flat[j] = orig
            g_fd = (f_plus - f_minus) / (2.0 * step)
            err = abs(flat_ad[j] - g_fd) / max(1.0, abs(g_fd))
            worst = max(worst, err)
    return worst
