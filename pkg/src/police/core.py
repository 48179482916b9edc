"""Dense float64 matrix helpers and a small reverse-mode differentiation tape.

Every operation accepts either plain arrays or :class:`Node` objects.  With
plain arrays the result is a plain ``numpy`` array; as soon as one operand is a
node the operation is recorded on that node's tape.  The same model code thus
serves for fast inference and for training.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError, ValidationError

ACTIVATIONS = ("relu", "leaky_relu", "abs", "identity")
DEFAULT_LEAKY_ALPHA = 0.01


def as_matrix(x, name="matrix") -> np.ndarray:
    a = np.array(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise DimensionError(f"{name}: expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name}: entries must be finite")
    return a


def as_vector(x, name="vector") -> np.ndarray:
    a = np.array(x, dtype=np.float64)
    if a.ndim != 1:
        raise DimensionError(f"{name}: expected a 1-D vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name}: entries must be finite")
    return a


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.float64)


@dataclass(frozen=True)
class Activation:
    """Pointwise continuous piecewise-affine nonlinearity."""

    kind: str = "relu"
    alpha: float = DEFAULT_LEAKY_ALPHA

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.kind!r}")
        if self.kind == "leaky_relu" and not (0.0 < self.alpha < 1.0):
            raise ConfigurationError(f"leaky_relu alpha must lie in (0, 1), got {self.alpha}")

    @property
    def nonlinear(self) -> bool:
        return self.kind != "identity"

    def branch_slopes(self) -> tuple[float, float]:
        """(negative-side slope, positive-side slope)."""
        return {
            "relu": (0.0, 1.0),
            "leaky_relu": (self.alpha, 1.0),
            "abs": (-1.0, 1.0),
            "identity": (1.0, 1.0),
        }[self.kind]

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "relu":
            return np.maximum(x, 0.0)
        if self.kind == "leaky_relu":
            return np.where(x > 0, x, self.alpha * x)
        if self.kind == "abs":
            return np.abs(x)
        return x

    def slope(self, x: np.ndarray, zero_branch: str = "negative") -> np.ndarray:
        neg, pos = self.branch_slopes()
        positive = x > 0 if zero_branch == "negative" else x >= 0
        return np.where(positive, pos, neg)

    def to_dict(self) -> dict:
        d = {"act": self.kind}
        if self.kind == "leaky_relu":
            d["alpha"] = self.alpha
        return d


def as_activation(kind) -> Activation:
    if isinstance(kind, Activation):
        return kind
    if isinstance(kind, tuple):
        return Activation(*kind)
    return Activation(str(kind))


class Node:
    __slots__ = ("tape", "id", "value", "parents", "is_param")

    def __init__(self, tape, id, value, parents, is_param=False):
        self.tape = tape
        self.id = id
        self.value = value
        self.parents = parents
        self.is_param = is_param

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(id={self.id}, shape={self.value.shape}, param={self.is_param})"


class Tape:
    """Append-only record of operations; single writer."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._rules: list[Sequence[tuple[Node, Callable]]] = []

    def param(self, value) -> Node:
        return self._append(np.array(value, dtype=np.float64), (), is_param=True)

    def constant(self, value) -> Node:
        return self._append(np.array(value, dtype=np.float64), ())

    def _append(self, value, rules, is_param=False) -> Node:
        node = Node(self, len(self.nodes), value, tuple(p.id for p, _ in rules), is_param)
        self.nodes.append(node)
        self._rules.append(rules)
        return node

    @property
    def params(self) -> list[Node]:
        return [n for n in self.nodes if n.is_param]

    def clear(self) -> None:
        """Drop the record; nodes point back at the tape, so this frees memory without a gc pass."""
        self.nodes = []
        self._rules = []

    def backward(self, loss: Node) -> dict[int, np.ndarray]:
        """Gradients of a scalar ``loss`` for every parameter node, keyed by node id."""
        if not isinstance(loss, Node) or loss.tape is not self:
            raise ContractError("loss must be a node recorded on this tape")
        if loss.value.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
        adj: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
        keep = {n.id for n in self.nodes if n.is_param}
        for i in range(loss.id, -1, -1):
            g = adj.get(i) if i in keep else adj.pop(i, None)
            if g is None:
                continue
            for parent, rule in self._rules[i]:
                contrib = rule(g)
                if parent.id in adj:
                    adj[parent.id] = adj[parent.id] + contrib
                else:
                    adj[parent.id] = contrib
        return {
            n.id: adj[n.id] if n.id in adj else np.zeros_like(n.value)
            for n in self.nodes
            if n.is_param
        }


def value(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    return None


def _result(out, operands):
    """Record ``out`` if any operand is a node. ``operands`` pairs each input with its adjoint rule."""
    tape = _tape_of(*(x for x, _ in operands))
    if tape is None:
        return out
    rules = []
    for x, rule in operands:
        if isinstance(x, Node):
            if x.tape is not tape:
                raise ContractError("operands recorded on different tapes")
            rules.append((x, rule))
    return tape._append(out, tuple(rules))


# Kink monitoring: gradcheck needs to know when a perturbation changes a
# discrete choice (activation branch, argmax row).
_monitor = threading.local()


def _monitors():
    return getattr(_monitor, "stack", None)


class KinkMonitor:
    def __init__(self):
        self.signature: list = []
        self.min_abs: float = np.inf

    def __enter__(self):
        if not hasattr(_monitor, "stack"):
            _monitor.stack = []
        _monitor.stack.append(self)
        return self

    def __exit__(self, *exc):
        _monitor.stack.pop()

    def record_branch(self, x: np.ndarray):
        self.signature.append(np.sign(x).astype(np.int8).tobytes())
        nz = np.abs(x[x != 0])
        if nz.size:
            self.min_abs = min(self.min_abs, float(nz.min()))

    def record_choice(self, idx: np.ndarray):
        self.signature.append(np.asarray(idx).tobytes())


def _notify_branch(x):
    stack = _monitors()
    if stack:
        stack[-1].record_branch(x)


def _notify_choice(idx):
    stack = _monitors()
    if stack:
        stack[-1].record_choice(idx)


def matmul(a, b):
    va, vb = value(a), value(b)
    if va.ndim != 2 or vb.ndim != 2 or va.shape[1] != vb.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {va.shape} by {vb.shape}")
    out = va @ vb
    return _result(out, [(a, lambda g: g @ vb.T), (b, lambda g: va.T @ g)])


def transpose(a):
    va = value(a)
    return _result(va.T, [(a, lambda g: g.T)])


def _same_shape(op, va, vb):
    if va.shape != vb.shape:
        raise DimensionError(f"{op}: shape mismatch {va.shape} vs {vb.shape}")


def add(a, b):
    va, vb = value(a), value(b)
    _same_shape("add", va, vb)
    return _result(va + vb, [(a, lambda g: g), (b, lambda g: g)])


def sub(a, b):
    va, vb = value(a), value(b)
    _same_shape("sub", va, vb)
    return _result(va - vb, [(a, lambda g: g), (b, lambda g: -g)])


def mul(a, b):
    va, vb = value(a), value(b)
    _same_shape("mul", va, vb)
    return _result(va * vb, [(a, lambda g: g * vb), (b, lambda g: g * va)])


def scale(a, k: float):
    va = value(a)
    return _result(va * k, [(a, lambda g: g * k)])


def neg(a):
    return scale(a, -1.0)


def add_row_broadcast(a, v):
    va, vv = value(a), value(v)
    if va.ndim != 2 or vv.size != va.shape[1] or vv.ndim > 2 or (vv.ndim == 2 and vv.shape[0] != 1):
        raise DimensionError(f"add_row_broadcast: row vector of shape {vv.shape} does not fit {va.shape}")
    out = va + vv.reshape(1, -1)
    return _result(out, [(a, lambda g: g), (v, lambda g: g.sum(axis=0).reshape(vv.shape))])


def activation(a, kind):
    act = as_activation(kind)
    va = value(a)
    if act.nonlinear:
        _notify_branch(va)
    out = act.apply(va)
    if not act.nonlinear:
        return _result(out, [(a, lambda g: g)])
    return _result(out, [(a, lambda g: g * act.slope(va, "negative"))])


def column_max_over_rows(a):
    va = value(a)
    if va.ndim != 2 or va.shape[0] < 1:
        raise DimensionError(f"column_max_over_rows: need at least one row, got shape {va.shape}")
    idx = np.argmax(va, axis=0)  # first occurrence on ties
    _notify_choice(idx)
    cols = np.arange(va.shape[1])
    out = va[idx, cols]

    def rule(g):
        grad = np.zeros_like(va)
        grad[idx, cols] = g
        return grad

    return _result(out, [(a, rule)])


def check_signs(s, n: int) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1 or s.size != n:
        raise DimensionError(f"sign vector of length {s.size} does not match {n} columns")
    if not np.all((s == 1.0) | (s == -1.0)):
        raise ConfigurationError("sign vector entries must be -1 or +1")
    return s


def scale_columns(a, s):
    """Multiply column k by the constant sign s_k. ``s`` never receives a gradient."""
    va = value(a)
    s = check_signs(value(s), va.shape[-1])
    _notify_choice(s.astype(np.int8))
    return _result(va * s, [(a, lambda g: g * s)])


def sum_all(a):
    va = value(a)
    return _result(np.asarray(va.sum()), [(a, lambda g: np.full(va.shape, float(g)))])


def mean_all(a):
    va = value(a)
    n = va.size
    return _result(np.asarray(va.mean()), [(a, lambda g: np.full(va.shape, float(g) / n))])


def square(a):
    va = value(a)
    return _result(va * va, [(a, lambda g: 2.0 * va * g)])


def softplus(a):
    """log(1 + exp(a)) without overflow."""
    va = value(a)
    out = np.maximum(va, 0.0) + np.log1p(np.exp(-np.abs(va)))
    sig = np.where(va >= 0, 1.0 / (1.0 + np.exp(-np.abs(va))), np.exp(-np.abs(va)) / (1.0 + np.exp(-np.abs(va))))
    return _result(out, [(a, lambda g: g * sig)])


def backward(tape: Tape, loss: Node) -> dict[int, np.ndarray]:
    return tape.backward(loss)


@dataclass
class GradcheckReport:
    max_rel_error: float
    checked: int
    skipped: list[tuple[int, int]] = field(default_factory=list)
    tol: float = 1e-5

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def _evaluate(f, params):
    with KinkMonitor() as mon:
        out = f(params)
    return float(value(out)), mon


def finite_diff_gradcheck(
    f: Callable, params: Sequence[np.ndarray], eps: float = 1e-5, tol: float = 1e-5, floor: float = 1e-4
) -> GradcheckReport:
    """Compare tape gradients of ``f`` with central differences.

    ``f`` maps a list of parameters (arrays or tape nodes) to a scalar.  A
    coordinate is skipped when the perturbation moves any activation input
    across a kink or changes an argmax/sign choice, or when a non-zero
    activation input lies within ``eps`` of a kink.  Relative error is
    ``|fd - tape| / max(|fd|, |tape|, floor)``.
    """
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    params = [np.array(p, dtype=np.float64) for p in params]
    tape = Tape()
    nodes = [tape.param(p) for p in params]
    loss = f(nodes)
    grads = tape.backward(loss)
    _, base = _evaluate(f, params)

    worst, checked, skipped = 0.0, 0, []
    for pi, p in enumerate(params):
        g = grads[nodes[pi].id].reshape(-1)
        for j in range(p.size):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[pi].reshape(-1)[j] += eps
            minus[pi].reshape(-1)[j] -= eps
            fp, mp = _evaluate(f, plus)
            fm, mm = _evaluate(f, minus)
            if (
                mp.signature != base.signature
                or mm.signature != base.signature
                or min(base.min_abs, mp.min_abs, mm.min_abs) < eps
            ):
                skipped.append((pi, j))
                continue
            fd = (fp - fm) / (2 * eps)
            err = abs(fd - g[j]) / max(abs(fd), abs(g[j]), floor)
            worst = max(worst, err)
            checked += 1
    return GradcheckReport(worst, checked, skipped, tol)
