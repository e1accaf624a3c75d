"""Dense float64 tensors with reverse-mode automatic differentiation.

The op set is the minimum the encoder, scoring head, and loss need:
matmul, broadcast add/mul, tanh/gelu, softmax, layer norm, embedding
lookup, pairwise rotary rotation, log-sum-exp reductions, masked fill,
gathers, and sum/mean. Everything is float64; a computation graph is
recorded per forward pass and freed afterwards. Any op producing NaN or
Inf raises immediately instead of propagating.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping

import numpy as np
from scipy.special import erf

__all__ = [
    "NonFiniteError",
    "Tensor",
    "ParamStore",
    "FiniteDiffReport",
    "no_grad",
    "constant",
    "add",
    "mul",
    "scale",
    "neg",
    "matmul",
    "tanh",
    "gelu",
    "softmax",
    "layer_norm",
    "embedding",
    "rotary",
    "rotary_tables",
    "logsumexp",
    "log1p_sum_exp",
    "masked_log1p_sum_exp",
    "take",
    "masked_fill",
    "reshape",
    "transpose",
    "stack",
    "sum_all",
    "mean_all",
    "forward_backward",
    "finite_diff_check",
]


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""

    def __init__(self, op: str):
        super().__init__(f"non-finite values produced by op '{op}'")
        self.op = op


_GRAD_STACK = [True]


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward-only evaluation)."""
    _GRAD_STACK.append(False)
    try:
        yield
    finally:
        _GRAD_STACK.pop()


class Tensor:
    """A float64 array plus the bookkeeping for reverse accumulation."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Reverse-accumulate gradients from this scalar into the graph."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(constant(other)))

    def __rsub__(self, other):
        return add(constant(other), neg(self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (gdim, sdim) in enumerate(zip(g.shape, shape)):
        if sdim == 1 and gdim != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _op(name: str, out_data: np.ndarray, backward, *parents: Tensor) -> Tensor:
    if not np.isfinite(out_data).all():
        raise NonFiniteError(name)
    out = Tensor(out_data)
    if _GRAD_STACK[-1] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# primitive ops


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    out = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _op("add", out, backward, a, b)


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    out = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _op("mul", out, backward, a, b)


def scale(a, s: float) -> Tensor:
    a = constant(a)
    s = float(s)
    out = a.data * s

    def backward(g):
        _accum(a, g * s)

    return _op("scale", out, backward, a)


def neg(a) -> Tensor:
    return scale(a, -1.0)


def matmul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _op("matmul", out, backward, a, b)


def tanh(a) -> Tensor:
    a = constant(a)
    out = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - out * out))

    return _op("tanh", out, backward, a)


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = constant(a)
    x = a.data
    e = erf(x / np.sqrt(2.0))
    out = 0.5 * x * (1.0 + e)

    def backward(g):
        pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
        _accum(a, g * (0.5 * (1.0 + e) + x * pdf))

    return _op("gelu", out, backward, a)


def softmax(a) -> Tensor:
    """Softmax over the last axis, stabilized by max shift."""
    a = constant(a)
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    ex = np.exp(x - m)
    out = ex / ex.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        _accum(a, out * (g - dot))

    return _op("softmax", out, backward, a)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply elementwise gain and bias."""
    a, gain, bias = constant(a), constant(gain), constant(bias)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            _accum(gain, _unbroadcast(g * xhat, gain.data.shape))
        if bias.requires_grad:
            _accum(bias, _unbroadcast(g, bias.data.shape))
        if a.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            _accum(a, inv * (gx - m1 - xhat * m2))

    return _op("layer_norm", out, backward, a, gain, bias)


def embedding(weight, ids) -> Tensor:
    """Row lookup weight[ids]; gradient is scatter-add over rows."""
    weight = constant(weight)
    idx = np.asarray(ids, dtype=np.int64)
    out = weight.data[idx]

    def backward(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, idx, g)
        _accum(weight, gw)

    return _op("embedding", out, backward, weight)


def rotary_tables(positions, dim: int, base: float) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables for pairwise rotation: pair t turns by p * base**(-2t/dim)."""
    if dim % 2:
        raise ValueError("rotary dimension must be even")
    p = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    t = np.arange(dim // 2, dtype=np.float64)
    theta = p * np.power(float(base), -2.0 * t / dim)
    return np.cos(theta), np.sin(theta)


def rotary(a, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate interleaved pairs (x[2t], x[2t+1]) of each row by the table angles."""
    a = constant(a)
    x = a.data
    xa = x[..., 0::2]
    xb = x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = xa * cos - xb * sin
    out[..., 1::2] = xa * sin + xb * cos

    def backward(g):
        ga = g[..., 0::2]
        gb = g[..., 1::2]
        gx = np.empty_like(x)
        gx[..., 0::2] = ga * cos + gb * sin
        gx[..., 1::2] = -ga * sin + gb * cos
        _accum(a, gx)

    return _op("rotary", out, backward, a)


def logsumexp(a) -> Tensor:
    """log(sum(exp(x))) over the last axis, max-shifted."""
    a = constant(a)
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    out = (m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))).squeeze(-1)

    def backward(g):
        _accum(a, np.expand_dims(g, -1) * np.exp(x - np.expand_dims(out, -1)))

    return _op("logsumexp", out, backward, a)


def log1p_sum_exp(a) -> Tensor:
    """log(1 + sum(exp(x))) over a flat vector.

    The implicit 1 is treated as an extra zero element in the max shift, so
    large positive entries cannot overflow. An empty input gives exactly 0.
    """
    a = constant(a)
    x = a.data.reshape(-1)
    if x.size == 0:
        def backward_empty(g):
            _accum(a, np.zeros_like(a.data))

        return _op("log1p_sum_exp", np.float64(0.0), backward_empty, a)
    m = max(float(x.max()), 0.0)
    out = np.float64(m + np.log(np.exp(-m) + np.exp(x - m).sum()))

    def backward(g):
        _accum(a, (g * np.exp(x - out)).reshape(a.data.shape))

    return _op("log1p_sum_exp", out, backward, a)


def masked_log1p_sum_exp(a, mask) -> Tensor:
    """Per-leading-index log(1 + sum(exp(x))) over the cells where mask is
    true, reduced over all trailing axes. Returns a vector of length
    x.shape[0]; an index with no selected cells gives exactly 0.
    """
    a = constant(a)
    m = np.asarray(mask, dtype=bool)
    if m.shape != a.data.shape:
        raise ValueError("mask shape must match input shape")
    x = a.data
    if x.ndim < 2:
        raise ValueError("input must have at least 2 axes (leading index + reduced)")
    axes = tuple(range(1, x.ndim))
    shift = np.maximum(x.max(axis=axes, initial=-np.inf, where=m), 0.0)
    keep = shift.reshape((-1,) + (1,) * (x.ndim - 1))
    # -inf sentinel turns masked-out cells into an exact exp of 0 without
    # overflowing on their (possibly huge) raw values
    ex = np.exp(np.where(m, x, -np.inf) - keep)
    out = shift + np.log(np.exp(-shift) + ex.sum(axis=axes))

    def backward(g):
        gb = g.reshape((-1,) + (1,) * (x.ndim - 1))
        ob = out.reshape((-1,) + (1,) * (x.ndim - 1))
        _accum(a, gb * np.exp(np.where(m, x, -np.inf) - ob))

    return _op("masked_log1p_sum_exp", out, backward, a)


def take(a, indices) -> Tensor:
    """Gather elements of the flattened input at the given flat indices."""
    a = constant(a)
    idx = np.asarray(indices, dtype=np.int64)
    out = a.data.reshape(-1)[idx]

    def backward(g):
        gw = np.zeros(a.data.size, dtype=np.float64)
        np.add.at(gw, idx, g)
        _accum(a, gw.reshape(a.data.shape))

    return _op("take", out, backward, a)


def masked_fill(a, mask, value: float) -> Tensor:
    """Replace entries where mask is true with a constant; gradient is zero there."""
    a = constant(a)
    m = np.asarray(mask, dtype=bool)
    out = np.where(m, np.float64(value), a.data)

    def backward(g):
        _accum(a, np.where(m, 0.0, g))

    return _op("masked_fill", out, backward, a)


def reshape(a, shape) -> Tensor:
    a = constant(a)
    out = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _op("reshape", out, backward, a)


def transpose(a, axes) -> Tensor:
    a = constant(a)
    axes = tuple(axes)
    out = np.transpose(a.data, axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        _accum(a, np.transpose(g, inv))

    return _op("transpose", out, backward, a)


def stack(tensors, axis: int = 0) -> Tensor:
    ts = [constant(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        for i, t in enumerate(ts):
            _accum(t, np.take(g, i, axis=axis))

    return _op("stack", out, backward, *ts)


def sum_all(a) -> Tensor:
    a = constant(a)
    out = np.float64(a.data.sum())

    def backward(g):
        _accum(a, np.full_like(a.data, float(g)))

    return _op("sum", out, backward, a)


def mean_all(a) -> Tensor:
    a = constant(a)
    if a.data.size == 0:
        raise ValueError("mean of an empty tensor")
    n = a.data.size
    out = np.float64(a.data.mean())

    def backward(g):
        _accum(a, np.full_like(a.data, float(g) / n))

    return _op("mean", out, backward, a)


# ---------------------------------------------------------------------------
# parameters, gradients, finite differences


class ParamStore:
    """Named trainable tensors plus their gradients and optimizer moments."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.adam_step_count = 0

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    @property
    def gradients(self) -> dict[str, np.ndarray | None]:
        return {name: t.grad for name, t in self._params.items()}

    def export(self) -> dict[str, np.ndarray]:
        """Copy of all parameter values, keyed by name."""
        return {name: t.data.copy() for name, t in self._params.items()}

    def load(self, values: Mapping[str, np.ndarray]) -> None:
        missing = set(self._params) - set(values)
        extra = set(values) - set(self._params)
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, t in self._params.items():
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()

    def grad_norms(self) -> dict[str, float]:
        return {
            name: 0.0 if t.grad is None else float(np.sqrt((t.grad * t.grad).sum()))
            for name, t in self._params.items()
        }


def forward_backward(graph, params: ParamStore, inputs=None) -> tuple[float, dict[str, np.ndarray]]:
    """Evaluate graph(params, inputs) to a scalar loss and reverse-accumulate.

    Returns the loss value and a name->gradient dict; parameters untouched by
    the graph get explicit zero gradients.
    """
    params.zero_grad()
    loss = graph(params, inputs)
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ValueError("graph must return a scalar Tensor")
    loss.backward()
    grads: dict[str, np.ndarray] = {}
    for name, t in params.items():
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        grads[name] = t.grad
    return float(loss.data), grads


@dataclass
class FiniteDiffReport:
    """Per-parameter worst relative error of analytic vs central-difference grads."""

    per_param: dict[str, float]
    epsilon: float

    @property
    def max_rel_err(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0

    @property
    def worst_param(self) -> str | None:
        if not self.per_param:
            return None
        return max(self.per_param, key=lambda k: self.per_param[k])

    def flagged(self, tol: float) -> list[str]:
        return [name for name, err in self.per_param.items() if err > tol]

    def format(self) -> str:
        lines = [f"{name}\t{err:.3e}" for name, err in self.per_param.items()]
        lines.append(f"max rel err {self.max_rel_err:.3e} ({self.worst_param})")
        return "\n".join(lines)


def finite_diff_check(graph, params: ParamStore, inputs=None, epsilon: float = 1e-5,
                      analytic: Mapping[str, np.ndarray] | None = None) -> FiniteDiffReport:
    """Compare analytic gradients against central finite differences.

    Relative error per entry is |a - n| / max(1e-8, |a| + |n|). `analytic`
    overrides the gradients under test (used to exercise the detector).
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise ValueError("epsilon must be within [1e-7, 1e-3]")
    if analytic is None:
        _, analytic = forward_backward(graph, params, inputs)

    def value() -> float:
        with no_grad():
            out = graph(params, inputs)
        return float(out.data)

    per_param: dict[str, float] = {}
    for name, t in params.items():
        a = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        flat = t.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = value()
            flat[i] = orig - epsilon
            fm = value()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * epsilon)
            rel = abs(a[i] - numeric) / max(1e-8, abs(a[i]) + abs(numeric))
            if rel > worst:
                worst = rel
        per_param[name] = worst
    return FiniteDiffReport(per_param, epsilon)
