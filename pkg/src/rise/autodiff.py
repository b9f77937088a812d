"""Dense float64 arrays with define-by-run reverse-mode differentiation.

Every op builds a fresh graph node holding its parents and a closure that
pushes the output gradient back into them. ``backward`` linearizes the graph
into a :class:`Tape` (a topological order) and replays it in reverse.

Shapes are checked explicitly. Binary elementwise ops accept equal shapes or
a single-element operand; anything else raises :class:`DimensionError`.
Row-wise bias broadcasting is only available through :func:`add_bias` and
:func:`linear`.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from scipy.special import expit

from rise.errors import ContractError, DimensionError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (evaluation, finite differences)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A float64 array that optionally tracks gradients.

    Args:
        data: Array-like payload, converted to float64.
        requires_grad: Whether gradients should be accumulated into ``grad``.
        name: Optional label used in error messages and parameter stores.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    def __len__(self) -> int:
        return len(self.data)

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


def _raise_item(t: Tensor) -> float:
    raise DimensionError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = np.broadcast_to(g, t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _grad_buffer(t: Tensor) -> np.ndarray:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    return t.grad


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def _is_scalar(t: Tensor) -> bool:
    return t.data.size == 1 and t.data.ndim <= 1


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or _is_scalar(a) or _is_scalar(b):
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum()).reshape(t.shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")

    def backward(g):
        _accumulate(a, _reduce_to(g, a))
        _accumulate(b, _reduce_to(g, b))

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")

    def backward(g):
        _accumulate(a, _reduce_to(g, a))
        _accumulate(b, _reduce_to(-g, b))

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _reduce_to(g * b.data, a))
        if b.requires_grad:
            _accumulate(b, _reduce_to(g * a.data, b))

    return _node(a.data * b.data, (a, b), backward, "mul")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: _accumulate(a, -g), "neg")


def max0(a) -> Tensor:
    """Elementwise ``max(0, a)``; the subgradient at exactly 0 is 0."""
    a = as_tensor(a)
    active = a.data > 0
    return _node(np.where(active, a.data, 0.0), (a,), lambda g: _accumulate(a, g * active), "max0")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: _accumulate(a, g * out), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: _accumulate(a, g / a.data), "log")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return _node(out, (a,), lambda g: _accumulate(a, g * out * (1.0 - out)), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: _accumulate(a, g * (1.0 - out * out)), "tanh")


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.sin(a.data), (a,), lambda g: _accumulate(a, g * np.cos(a.data)), "sin")


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.cos(a.data), (a,), lambda g: _accumulate(a, -g * np.sin(a.data)), "cos")


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "max0": max0,
    "exp": exp,
    "log": log,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "sin": sin,
    "cos": cos,
}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch one of the named elementwise ops (unary ops ignore ``b``)."""
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    if op in ("add", "sub", "mul"):
        if b is None:
            raise ContractError(f"{op} needs two operands")
        return fn(a, b)
    return fn(a)


def where(cond, a, b) -> Tensor:
    """Select ``a`` where ``cond`` holds and ``b`` elsewhere; no gradient leaks across."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    shape = np.broadcast_shapes(a.shape, b.shape)
    if not (a.shape == b.shape or _is_scalar(a) or _is_scalar(b)):
        raise DimensionError(f"where: incompatible shapes {a.shape} and {b.shape}")
    try:
        cond = np.broadcast_to(cond, shape)
    except ValueError:
        raise DimensionError(f"where: condition shape {cond.shape} does not fit {shape}") from None

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _reduce_to(np.where(cond, g, 0.0), a))
        if b.requires_grad:
            _accumulate(b, _reduce_to(np.where(cond, 0.0, g), b))

    return _node(np.where(cond, a.data, b.data), (a, b), backward, "where")


# ---------------------------------------------------------------------------
# linear algebra and shape ops
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {a.shape}")
    return _node(a.data.T, (a,), lambda g: _accumulate(a, g.T), "transpose")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _node(out, (a,), lambda g: _accumulate(a, g.reshape(a.shape)), "reshape")


def add_bias(x, b) -> Tensor:
    """Add vector ``b`` to every row of ``x`` (last axis must match)."""
    x, b = as_tensor(x), as_tensor(b)
    if b.ndim != 1 or x.shape[-1:] != b.shape:
        raise DimensionError(f"add_bias: bias {b.shape} does not fit {x.shape}")

    def backward(g):
        _accumulate(x, g)
        if b.requires_grad:
            _accumulate(b, g.reshape(-1, b.shape[0]).sum(axis=0))

    return _node(x.data + b.data, (x, b), backward, "add_bias")


def linear(x, weight, bias=None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for ``x`` of shape [k] or [n, k]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not fit weight {weight.shape}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"linear: bias {bias.shape} does not fit weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, weight.shape[0])
        x2 = x.data.reshape(-1, weight.shape[1])
        if x.requires_grad:
            _accumulate(x, (g2 @ weight.data).reshape(x.shape))
        if weight.requires_grad:
            _accumulate(weight, g2.T @ x2)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g2.sum(axis=0))

    return _node(out, parents, backward, "linear")


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat needs at least one part")
    ndim = parts[0].ndim
    for p in parts:
        if p.ndim != ndim:
            raise DimensionError(f"concat: rank mismatch {parts[0].shape} vs {p.shape}")
        other = [s for i, s in enumerate(p.shape) if i != axis % ndim]
        ref = [s for i, s in enumerate(parts[0].shape) if i != axis % ndim]
        if other != ref:
            raise DimensionError(f"concat: shapes {parts[0].shape} and {p.shape} disagree off axis {axis}")
    out = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                _accumulate(p, np.take(g, np.arange(lo, hi), axis=axis))

    return _node(out, parts, backward, "concat")


def index(a, key) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate in backward."""
    a = as_tensor(a)
    out = a.data[key]
    basic = isinstance(key, (int, slice)) or (
        isinstance(key, tuple) and all(isinstance(k, (int, slice)) for k in key)
    )

    def backward(g):
        buf = _grad_buffer(a)
        if basic:
            buf[key] += g
        else:
            np.add.at(buf, key, g)

    return _node(np.array(out, copy=True), (a,), backward, "index")


def take(a, indices, axis: int = 0) -> Tensor:
    """Gather slices along ``axis`` (embedding lookup); backward scatter-adds."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    out = np.take(a.data, indices, axis=axis)

    def backward(g):
        buf = _grad_buffer(a)
        moved = np.moveaxis(buf, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))

    return _node(out, (a,), backward, "take")


def sum(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    return _node(np.asarray(a.data.sum()), (a,), lambda g: _accumulate(a, np.broadcast_to(g, a.shape)), "sum")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits, target, weights=None) -> Tensor:
    """Negative log-likelihood of ``target`` under ``softmax(logits)``.

    ``logits`` is [n_classes] with an integer ``target``, or [n, n_classes]
    with an integer array of targets; rows are summed, optionally weighted.
    """
    logits = as_tensor(logits)
    single = logits.ndim == 1
    z = logits.data.reshape(1, -1) if single else logits.data
    if z.ndim != 2 or z.shape[1] < 2:
        raise DimensionError(f"softmax_cross_entropy needs >= 2 classes, got logits {logits.shape}")
    tgt = np.atleast_1d(np.asarray(target, dtype=np.intp))
    if tgt.shape != (z.shape[0],):
        raise DimensionError(f"softmax_cross_entropy: {tgt.shape[0]} targets for {z.shape[0]} rows")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= z.shape[1]):
        raise IndexError(f"target class out of range [0, {z.shape[1]})")
    w = np.ones(z.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape != (z.shape[0],):
        raise DimensionError(f"softmax_cross_entropy: {w.shape[0]} weights for {z.shape[0]} rows")

    shift = z.max(axis=1, keepdims=True)
    e = np.exp(z - shift)
    total = e.sum(axis=1, keepdims=True)
    log_norm = np.log(total) + shift
    rows = np.arange(z.shape[0])
    nll = log_norm[:, 0] - z[rows, tgt]
    # rows with zero weight must not contribute, even as 0 * inf
    loss = np.sum(np.where(w != 0, w * nll, 0.0))

    def backward(g):
        grad = e / total
        grad[rows, tgt] -= 1.0
        grad *= (w * g)[:, None]
        _accumulate(logits, grad.reshape(logits.shape))

    return _node(np.asarray(loss), (logits,), backward, "softmax_cross_entropy")


def squared_error(pred, target, weights=None) -> Tensor:
    """Weighted sum of squared residuals between ``pred`` and a constant target."""
    pred = as_tensor(pred)
    y = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    w = np.ones(pred.shape) if weights is None else np.asarray(weights, dtype=np.float64).reshape(pred.shape)
    r = np.where(w != 0, pred.data - np.where(w != 0, y, 0.0), 0.0)
    return _node(np.asarray(np.sum(w * r * r)), (pred,), lambda g: _accumulate(pred, 2.0 * g * w * r), "squared_error")


# ---------------------------------------------------------------------------
# tape and backward
# ---------------------------------------------------------------------------


class Tape:
    """Topologically ordered graph nodes reachable from an output tensor."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen and parent._parents:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def run(self, seed: np.ndarray) -> int:
        """Propagate ``seed`` from the last node backwards; returns nodes visited."""
        self.nodes[-1].grad = seed
        visited = 0
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                visited += 1
        return visited


def backward(loss: Tensor) -> Tape:
    """Populate ``grad`` on every tracked leaf reachable from a scalar ``loss``."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad or loss._backward is None:
        raise ContractError("loss was not produced on an active tape (no tracked inputs)")
    tape = Tape.from_output(loss)
    tape.run(np.ones_like(loss.data))
    return tape


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


class ParameterStore:
    """Ordered collection of named trainable tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(np.array(value, dtype=np.float64, copy=True), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def names(self) -> list[str]:
        return list(self._params)

    def n_values(self) -> int:
        return int(np.sum([p.size for p in self._params.values()]))

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self._params.items()}

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        if missing:
            raise KeyError(f"snapshot lacks parameters: {sorted(missing)}")
        for k, p in self._params.items():
            value = np.asarray(arrays[k], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"parameter {k!r}: stored shape {value.shape} != {p.shape}")
            p.data = value.copy()


def grad_check(
    f: Callable[[], Tensor],
    point: ParameterStore,
    h: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
    names: Iterable[str] | None = None,
) -> float:
    """Largest relative gap between backprop and central differences.

    The error for one coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    With ``max_entries`` set, each parameter array contributes a seeded random
    subset of that many coordinates instead of all of them.
    """
    point.zero_grad()
    backward(f())
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in point.items()}
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in names if names is not None else point.names():
        p = point[name]
        flat = p.data.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            picks = np.arange(flat.size)
        else:
            picks = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        for i in picks:
            original = flat[i]
            with no_grad():
                flat[i] = original + h
                up = f().item()
                flat[i] = original - h
                down = f().item()
            flat[i] = original
            numeric = (up - down) / (2.0 * h)
            a = analytic[name].reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    point.zero_grad()
    return worst


def xavier_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    # open interval keeps |w| < limit strictly
    return rng.uniform(-limit, limit, size=shape) * (1.0 - 1e-12)
