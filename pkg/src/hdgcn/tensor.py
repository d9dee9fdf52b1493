"""Dense 2-D tensors with a define-by-run reverse-mode tape.

Every value is a 2-D float array. Operations executed while a :class:`Tape`
is active are recorded on it; :func:`backward` replays the tape in reverse
and accumulates gradients into leaf tensors (parameters). Outside a tape the
same functions run as plain numpy arithmetic with no bookkeeping.

    with Tape():
        loss = cross_entropy_loss(matmul(x, w), labels)
    backward(loss)
    w.grad  # dloss/dw
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, DataError, UsageError

DTYPE = np.float64

_state = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_state, "tape", None)


def set_default_dtype(dtype) -> None:
    """Switch new tensors to float32 for speed. Gradient checks need float64."""
    global DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ConfigError(f"unsupported dtype {dtype}")
    DTYPE = dtype.type


class Tensor:
    """A 2-D value grid, optionally a node on the active tape."""

    __slots__ = ("values", "grad", "requires_grad", "tape_id", "name", "_tape")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(values, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got shape {arr.shape}")
        self.values = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tape_id: int | None = None
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        if self.values.size != 1:
            raise UsageError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.values[0, 0])

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.values)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # operator sugar
    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Parameter(Tensor):
    """A named trainable leaf tensor."""

    def __init__(self, name: str, values):
        if isinstance(values, Tensor):
            values = values.values
        super().__init__(np.array(values, dtype=DTYPE), requires_grad=True, name=name)

    @property
    def tensor(self) -> "Parameter":
        return self

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


@dataclass
class _Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of the operations of one forward pass.

    Use as a context manager; nested tapes are not supported.
    """

    nodes: list[_Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise UsageError("a tape is already active on this thread")
        _state.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _state.tape = None

    def leaves(self) -> list[Tensor]:
        seen: dict[int, Tensor] = {}
        for node in self.nodes:
            for t in node.inputs:
                if t.requires_grad and t.tape_id is None:
                    seen.setdefault(id(t), t)
        return list(seen.values())


def _tracked(t: Tensor, tape: Tape) -> bool:
    return t.requires_grad or t._tape is tape


def _record(op: str, inputs: tuple[Tensor, ...], out_values: np.ndarray, grad_fn) -> Tensor:
    _check_finite(out_values, op)
    out = Tensor.__new__(Tensor)
    out.values = out_values
    out.grad = None
    out.requires_grad = False
    out.tape_id = None
    out.name = None
    out._tape = None
    tape = _active_tape()
    if tape is not None and any(_tracked(t, tape) for t in inputs):
        out.tape_id = len(tape.nodes)
        out._tape = tape
        tape.nodes.append(_Node(op, inputs, out, grad_fn))
    return out


def _check_finite(values: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(f"{op} produced non-finite values")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    # only row/column broadcasting of size-1 axes is supported
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}")


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    av, bv = a.values, b.values

    def grad_fn(g):
        return g @ bv.T, av.T @ g

    return _record("matmul", (a, b), av @ bv, grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape

    def grad_fn(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _record("add", (a, b), a.values + b.values, grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape

    def grad_fn(g):
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)

    return _record("sub", (a, b), a.values - b.values, grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product with size-1 broadcasting."""
    _check_broadcast(a, b, "mul")
    av, bv = a.values, b.values

    def grad_fn(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _record("mul", (a, b), av * bv, grad_fn)


def scale(a: Tensor, c: float) -> Tensor:
    return _record("scale", (a,), a.values * c, lambda g: (g * c,))


def transpose(a: Tensor) -> Tensor:
    return _record("transpose", (a,), a.values.T.copy(), lambda g: (g.T,))


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise UsageError("add_n needs at least one tensor")
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise DimensionError(f"add_n: shapes {shape} and {t.shape} differ")
    total = np.sum([t.values for t in tensors], axis=0)
    return _record("add_n", tuple(tensors), total, lambda g: [g] * len(tensors))


def vstack(tensors: Sequence[Tensor]) -> Tensor:
    cols = {t.cols for t in tensors}
    if len(cols) != 1:
        raise DimensionError(f"vstack: column counts differ {sorted(cols)}")
    bounds = np.cumsum([0] + [t.rows for t in tensors])

    def grad_fn(g):
        return [g[bounds[i]:bounds[i + 1]] for i in range(len(tensors))]

    return _record("vstack", tuple(tensors), np.vstack([t.values for t in tensors]), grad_fn)


def select_rows(a: Tensor, index) -> Tensor:
    idx = np.asarray(index, dtype=np.int64)
    n = a.rows

    def grad_fn(g):
        out = np.zeros((n, g.shape[1]), dtype=g.dtype)
        np.add.at(out, idx, g)
        return (out,)

    return _record("select_rows", (a,), a.values[idx], grad_fn)


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _record("sum_all", (a,), a.values.sum().reshape(1, 1), lambda g: (np.full(shape, g[0, 0]),))


def sum_rows(a: Tensor) -> Tensor:
    """Column-wise sum over rows: n x d -> 1 x d."""
    n = a.rows
    return _record("sum_rows", (a,), a.values.sum(axis=0, keepdims=True), lambda g: (np.repeat(g, n, axis=0),))


def mean_rows(a: Tensor) -> Tensor:
    n = a.rows
    return _record(
        "mean_rows", (a,), a.values.mean(axis=0, keepdims=True), lambda g: (np.repeat(g, n, axis=0) / n,)
    )


def max_rows(a: Tensor) -> Tensor:
    """Column-wise max over rows. Ties route the gradient to the first argmax."""
    av = a.values
    arg = av.argmax(axis=0)
    cols = np.arange(av.shape[1])

    def grad_fn(g):
        out = np.zeros_like(av)
        out[arg, cols] = g[0]
        return (out,)

    return _record("max_rows", (a,), av[arg, cols].reshape(1, -1), grad_fn)


def linear_map(apply: Callable[[np.ndarray], np.ndarray], apply_t: Callable[[np.ndarray], np.ndarray], x: Tensor, op: str = "linear_map") -> Tensor:
    """Apply a constant linear operator given as a pair of callables (op, op^T)."""
    return _record(op, (x,), apply(x.values), lambda g: (apply_t(g),))


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _record("dropout", (x,), x.values * keep, lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# neural-network operations
# ---------------------------------------------------------------------------


def softmax_rows(x: Tensor, scale: float = 1.0) -> Tensor:
    """Row-wise softmax of ``x / scale`` stabilised by max subtraction."""
    if scale <= 0:
        raise ConfigError(f"softmax scale must be positive, got {scale}")
    z = x.values / scale
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def grad_fn(g):
        inner = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - inner) / scale,)

    return _record("softmax_rows", (x,), p, grad_fn)


def layer_norm_rows(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    gain_t, bias_t = gain, bias
    d = x.cols
    if gain_t.shape != (1, d) or bias_t.shape != (1, d):
        raise DimensionError(f"layer_norm: gain {gain_t.shape} / bias {bias_t.shape} must be (1, {d})")
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    xv = x.values
    mu = xv.mean(axis=1, keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gv, bv = gain_t.values, bias_t.values

    def grad_fn(g):
        gx = g * gv
        dx = inv * (gx - gx.mean(axis=1, keepdims=True) - xhat * (gx * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    return _record("layer_norm_rows", (x, gain_t, bias_t), xhat * gv + bv, grad_fn)


ACTIVATIONS = ("relu", "sigmoid", "tanh", "identity")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def apply_activation(x: Tensor, kind: str) -> Tensor:
    v = x.values
    if kind == "identity":
        return x
    if kind == "relu":
        mask = v > 0
        return _record("relu", (x,), v * mask, lambda g: (g * mask,))
    if kind == "sigmoid":
        s = _sigmoid(v)
        return _record("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))
    if kind == "tanh":
        t = np.tanh(v)
        return _record("tanh", (x,), t, lambda g: (g * (1.0 - t * t),))
    raise ConfigError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def log_softmax_rows(v: np.ndarray) -> np.ndarray:
    z = v - v.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under row-wise softmax."""
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, c = logits.shape
    if y.shape[0] != n:
        raise DataError(f"cross_entropy: {y.shape[0]} labels for {n} logit rows")
    bad = np.flatnonzero((y < 0) | (y >= c))
    if bad.size:
        raise DataError(f"cross_entropy: label {y[bad[0]]} at row {bad[0]} outside [0, {c})")
    logp = log_softmax_rows(logits.values)
    rows = np.arange(n)
    loss = -logp[rows, y].mean()

    def grad_fn(g):
        d = np.exp(logp)
        d[rows, y] -= 1.0
        return (d * (g[0, 0] / n),)

    return _record("cross_entropy", (logits,), np.array([[loss]], dtype=logits.values.dtype), grad_fn)


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------


def backward(loss: Tensor, params: Sequence[Tensor] = ()) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every tape leaf.

    ``params`` listed but unreachable from ``loss`` get a zero gradient.
    """
    if loss.shape != (1, 1):
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.values)
    tape = loss._tape
    if tape is None:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1), dtype=loss.values.dtype)}
    for node in reversed(tape.nodes[: loss.tape_id + 1]):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None:
                continue
            if inp._tape is tape:
                key = id(inp)
                grads[key] = grads[key] + gi if key in grads else gi
            elif inp.requires_grad:
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.values)
                inp.grad += gi


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    grad_scale: dict[str, float]
    tol: float
    abs_floor: float

    @property
    def passed(self) -> bool:
        return all(err < self.tol for err in self.max_rel_error.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def resolved(self) -> list[str]:
        """Parameters whose gradient is large enough to be checked relatively."""
        return [name for name, g in self.grad_scale.items() if g > self.abs_floor]


def grad_check(
    forward: Callable[[], Tensor],
    params: Sequence[Parameter],
    tol: float = 1e-6,
    h: float = 1e-5,
    abs_floor: float = 1e-6,
) -> GradCheckReport:
    """Compare tape gradients against central finite differences.

    A parameter's error is ``max|a - n| / max(max|a|, max|n|, abs_floor)``:
    the worst entry measured against that parameter's gradient scale.
    ``abs_floor`` keeps gradients that finite differences cannot resolve
    (round-off is about ``1e-16 * |loss| / h``) from counting as failures.
    """
    for p in params:
        p.grad = None
    with Tape():
        loss = forward()
    backward(loss, params)
    report, scales = {}, {}
    for p in params:
        analytic = p.grad.copy()
        vals = p.values
        numeric = np.zeros_like(vals)
        for idx in np.ndindex(vals.shape):
            orig = vals[idx]
            vals[idx] = orig + h
            fp = forward().item()
            vals[idx] = orig - h
            fm = forward().item()
            vals[idx] = orig
            numeric[idx] = (fp - fm) / (2 * h)
        scale_ = max(np.abs(analytic).max(), np.abs(numeric).max()) if vals.size else 0.0
        scales[p.name] = float(scale_)
        err = np.abs(analytic - numeric).max() if vals.size else 0.0
        report[p.name] = float(err / max(scale_, abs_floor))
    return GradCheckReport(report, scales, tol, abs_floor)
