"""Small dense-tensor library with tape-based reverse-mode differentiation.

Every operation is a plain function returning a new :class:`Tensor`.  When a
:class:`Tape` is active (``with Tape() as tape:``) and at least one operand
requires a gradient, the operation appends its local backward rule to the
tape.  :func:`backward` replays the tape in reverse order.  Outside a tape the
same functions run as plain numpy code, which is what evaluation uses.

Values are 64-bit floats.  Most operations act on the last axis and accept
arbitrary leading (batch) axes, so the same model code runs on a single
sequence or on a minibatch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DimensionError, EvaluationError

__all__ = [
    "Tensor", "Tape", "GradCheckReport", "tensor", "zeros", "constant",
    "add", "sub", "mul", "neg", "scale", "sigmoid", "tanh", "matmul",
    "linear", "concat_rows", "slice_rows", "softmax_row", "sum_all",
    "mean_all", "dot", "unsqueeze", "matvec", "vecmat", "cross_entropy",
    "elementwise", "backward", "grad_check", "record",
]

_TAPES: list["Tape"] = []


class Tensor:
    """Dense float64 array that can take part in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

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

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; tapes nest, and operations are recorded on the
    innermost active one.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._outputs: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, out: Tensor, parents: tuple[Tensor, ...], rule: Callable) -> None:
        self.records.append((out, parents, rule))
        self._outputs.add(id(out))

    def produced(self, t: Tensor) -> bool:
        return id(t) in self._outputs


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(*shape: int, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data)


def record(data: np.ndarray, parents: Sequence[Tensor], rule: Callable) -> Tensor:
    """Wrap ``data`` as an operation output and record ``rule`` if needed.

    ``rule(g)`` receives the output gradient and returns one gradient (or
    None) per parent.  Gradients may be broadcast-shaped; they are reduced to
    each parent's shape before accumulation.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = False
    if _TAPES:
        for p in parents:
            if p.requires_grad:
                out.requires_grad = True
                tape = _TAPES[-1]
                tape.records.append((out, tuple(parents), rule))
                tape._outputs.add(id(out))
                break
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape == b.data.shape:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    return record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    return record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return record(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    return record(a.data * c, (a,), lambda g: (g * c,))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # tanh form is overflow-free for large |x|
    s = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return record(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    t = np.tanh(a.data)
    return record(t, (a,), lambda g: (g * (1.0 - t * t),))


def concat_rows(*parts) -> Tensor:
    """Concatenate along the last axis; leading axes must agree."""
    ts = [_as_tensor(p) for p in parts]
    if not ts:
        raise DimensionError("concat_rows needs at least one operand")
    lead = ts[0].shape[:-1]
    for t in ts[1:]:
        if t.shape[:-1] != lead:
            raise DimensionError(
                f"concat_rows: leading shapes differ: {[t.shape for t in ts]}")
    widths = [t.shape[-1] for t in ts]
    bounds = np.cumsum([0] + widths)

    def rule(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(ts)))

    return record(np.concatenate([t.data for t in ts], axis=-1), ts, rule)


def slice_rows(a, start: int, stop: int) -> Tensor:
    """Elements ``start:stop`` of the last axis."""
    a = _as_tensor(a)
    n = a.shape[-1]
    if not 0 <= start < stop <= n:
        raise DimensionError(f"slice [{start}:{stop}] out of range for shape {a.shape}")
    shape = a.shape

    def rule(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return record(a.data[..., start:stop], (a,), rule)


def unsqueeze(a, axis: int) -> Tensor:
    a = _as_tensor(a)
    return record(np.expand_dims(a.data, axis), (a,), lambda g: (np.squeeze(g, axis),))


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "sigmoid": sigmoid, "tanh": tanh,
    "concat_rows": concat_rows, "slice": slice_rows,
}


def elementwise(op: str, *args, **kwargs) -> Tensor:
    """Dispatch one of the named elementwise/structural operations by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args, **kwargs)


# ------------------------------------------------------------------ reductions

def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    return record(np.array([a.data.sum()]), (a,), lambda g: (np.full(shape, g[0]),))


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    shape, n = a.shape, a.size
    return record(np.array([a.data.mean()]), (a,), lambda g: (np.full(shape, g[0] / n),))


def dot(a, b) -> Tensor:
    return sum_all(mul(a, b))


# -------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """Matrix product of rank-1/2 operands with numpy ``@`` semantics."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim > 2 or b.data.ndim > 2:
        raise DimensionError(f"matmul supports rank <= 2, got {a.shape} and {b.shape}")
    inner_a = a.shape[-1]
    inner_b = b.shape[0]
    if inner_a != inner_b:
        raise DimensionError(f"matmul: inner dimensions differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def rule(g):
        a2 = ad if ad.ndim == 2 else ad[None, :]
        b2 = bd if bd.ndim == 2 else bd[:, None]
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        ga = (g2 @ b2.T).reshape(ad.shape)
        gb = (a2.T @ g2).reshape(bd.shape)
        return ga, gb

    return record(ad @ bd, (a, b), rule)


def linear(x, weight, bias=None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` over the last axis of ``x``.

    ``weight`` is (out, in); ``x`` may carry any leading batch axes.
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    if weight.data.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    parents: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (wd.shape[0],):
            raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        out = out + bias.data
        parents = (x, weight, bias)

    def rule(g):
        g2 = g.reshape(-1, wd.shape[0])
        x2 = xd.reshape(-1, wd.shape[1])
        grads = [g @ wd, g2.T @ x2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return record(out, parents, rule)


def matvec(m, v) -> Tensor:
    """``out[..., i] = sum_j m[..., i, j] * v[..., j]`` (slot scores)."""
    m, v = _as_tensor(m), _as_tensor(v)
    if m.data.ndim < 2 or m.shape[-1] != v.shape[-1] or m.shape[:-2] != v.shape[:-1]:
        raise DimensionError(f"matvec: matrix {m.shape} incompatible with vector {v.shape}")
    md, vd = m.data, v.data
    out = np.einsum("...ij,...j->...i", md, vd)

    def rule(g):
        return (g[..., :, None] * vd[..., None, :],
                np.einsum("...i,...ij->...j", g, md))

    return record(out, (m, v), rule)


def vecmat(w, m) -> Tensor:
    """``out[..., j] = sum_i w[..., i] * m[..., i, j]`` (weighted slot read)."""
    w, m = _as_tensor(w), _as_tensor(m)
    if m.data.ndim < 2 or m.shape[-2] != w.shape[-1] or m.shape[:-2] != w.shape[:-1]:
        raise DimensionError(f"vecmat: weights {w.shape} incompatible with matrix {m.shape}")
    wd, md = w.data, m.data
    out = np.einsum("...i,...ij->...j", wd, md)

    def rule(g):
        return (np.einsum("...j,...ij->...i", g, md),
                wd[..., :, None] * g[..., None, :])

    return record(out, (w, m), rule)


# ------------------------------------------------------------ softmax and loss

def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_row(x) -> Tensor:
    """Max-shifted softmax over the last axis."""
    x = _as_tensor(x)
    if x.data.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError("softmax_row: empty input")
    s = _softmax(x.data)

    def rule(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return record(s, (x,), rule)


def cross_entropy(logits, targets) -> Tensor:
    """Per-row negative log-likelihood of integer ``targets`` under softmax(logits).

    The result has the leading shape of ``logits``; a single row gives a
    length-1 vector.
    """
    logits = _as_tensor(logits)
    ld = logits.data
    n = ld.shape[-1]
    idx = np.asarray(targets, dtype=np.int64)
    if idx.shape != ld.shape[:-1]:
        raise DimensionError(f"cross_entropy: targets {idx.shape} vs logits {ld.shape}")
    if np.any((idx < 0) | (idx >= n)):
        raise ContractError(f"cross_entropy: target outside [0, {n})")
    l2 = ld.reshape(-1, n)
    i2 = idx.reshape(-1)
    rows = np.arange(l2.shape[0])
    shifted = l2 - l2.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1))
    loss = logz - shifted[rows, i2]
    delta = np.exp(shifted - logz[:, None])
    delta[rows, i2] -= 1.0

    def rule(g):
        return ((delta * g.reshape(-1)[:, None]).reshape(ld.shape),)

    return record(loss.reshape(ld.shape[:-1] or (1,)), (logits,), rule)


# ---------------------------------------------------------------- differentiation

def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` of every requires-grad tensor that ``loss`` depends on.

    Leaf gradients accumulate across calls; clear them with ``zero_grad``.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.produced(loss):
        raise ContractError("loss was not produced through this tape")
    loss.grad = np.ones_like(loss.data)
    for out, parents, rule in reversed(tape.records):
        g = out.grad
        if g is None:
            continue
        grads = rule(g)
        for p, gp in zip(parents, grads):
            if gp is None or not p.requires_grad:
                continue
            if gp.shape != p.data.shape:
                gp = _unbroadcast(gp, p.data.shape)
            p.grad = gp if p.grad is None else p.grad + gp


@dataclass
class GradCheckReport:
    """Per-element relative errors between analytic and numeric gradients."""

    relative_errors: dict[str, np.ndarray]
    max_relative_error: float
    tolerance: float
    passed: bool = field(init=False)
    analytic: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    numeric: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    value: float = float("nan")
    step: float = float("nan")

    def __post_init__(self):
        self.passed = bool(self.max_relative_error < self.tolerance)

    def worst(self) -> tuple[str, float]:
        if not self.relative_errors:
            return "", 0.0
        name = max(self.relative_errors, key=lambda k: self.relative_errors[k].max(initial=0.0))
        return name, float(self.relative_errors[name].max(initial=0.0))

    def failures(self) -> dict[str, int]:
        """Number of elements at or above the tolerance, per parameter."""
        return {k: int((e >= self.tolerance).sum()) for k, e in self.relative_errors.items()
                if (e >= self.tolerance).any()}

    def roundoff_floor(self) -> float:
        """Rough absolute error of a central difference from rounding ``f`` alone.

        Each evaluation is rounded to within half an ulp of ``|f|``, so the
        difference quotient carries about ``ulp(f) / (2 h)`` of noise.
        Elements whose gradient is not well above this cannot meet a tight
        relative tolerance whatever the backward rules.
        """
        return float(np.spacing(abs(self.value)) / (2.0 * self.step))

    def largest_failing_gradient(self) -> float:
        out = 0.0
        for k, e in self.relative_errors.items():
            bad = e >= self.tolerance
            if bad.any() and k in self.analytic:
                out = max(out, float(np.abs(self.analytic[k][bad]).max()))
        return out


def _scalar(value: Tensor) -> float:
    v = value.item()
    if not np.isfinite(v):
        raise EvaluationError(f"function under check returned non-finite value {v}")
    return v


def grad_check(f: Callable[[], Tensor], params: Mapping[str, Tensor],
               h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare tape gradients of ``f()`` with central finite differences.

    ``f`` closes over ``params`` and must be deterministic.  Relative error
    per element is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if h <= 0:
        raise ContractError("finite-difference step must be positive")
    for p in params.values():
        p.data = np.ascontiguousarray(p.data)
        p.grad = None
        p.requires_grad = True
    with Tape() as tape:
        out = f()
    value = _scalar(out)
    if tape.produced(out):
        backward(out, tape)
    # otherwise f does not depend on any parameter and every gradient is zero
    del tape

    errors: dict[str, np.ndarray] = {}
    analytics: dict[str, np.ndarray] = {}
    numerics: dict[str, np.ndarray] = {}
    worst = 0.0
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = _scalar(f())
            flat[i] = keep - h
            down = _scalar(f())
            flat[i] = keep
            numeric[i] = (up - down) / (2.0 * h)
        a = analytic.reshape(-1)
        rel = np.abs(a - numeric) / np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        errors[name] = rel.reshape(p.shape)
        analytics[name] = a.reshape(p.shape).copy()
        numerics[name] = numeric.reshape(p.shape)
        worst = max(worst, float(rel.max(initial=0.0)))
    return GradCheckReport(errors, worst, tol, analytics, numerics, value, h)
