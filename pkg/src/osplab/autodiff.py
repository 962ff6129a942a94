"""Dense tensors with tape-based reverse-mode differentiation.

A :class:`Tape` is opened with ``with Tape() as tape:``; every operation whose
inputs include a traced tensor appends a node holding a vector-Jacobian
closure. ``tape.backward(loss)`` walks the nodes in reverse and returns the
gradient map for the leaves that were marked ``requires_grad``.

Tensors created outside an active tape, or whose inputs are all untraced,
record nothing. Shapes broadcast with numpy rules; gradients are summed back
to the operand shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Parameter",
    "gradients",
    "numerical_gradient",
    "relative_error",
    "DimensionError",
    "NonFiniteError",
    "tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "exp",
    "log",
    "sigmoid",
    "softplus",
    "silu",
    "elu_plus_one",
    "rsqrt",
    "square",
    "neg",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "take_rows",
    "getitem",
    "concat",
    "softmax_lastdim",
    "cross_entropy_last_position",
    "gla_scan",
    "selective_scan",
    "check_finite",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A tensor holds NaN or infinite entries."""


_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "_traced", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind in "iub":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self._traced = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

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

    def __getitem__(self, idx):
        return getitem(self, idx)


@dataclass
class Parameter:
    """A named trainable array; ``value`` is the leaf tensor fed to the tape."""

    name: str
    value: Tensor
    trainable: bool = True

    def __post_init__(self):
        self.value.requires_grad = self.trainable
        self.value._traced = self.trainable
        self.value.name = self.name


@dataclass
class _Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Append-only record of traced operations for one backward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Return ``{id(leaf): grad}`` for every leaf with ``requires_grad``.

        Use :meth:`grad_of` or :func:`gradients` for name/param lookups.
        """
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss._traced:
            raise ValueError("loss is not traced on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.vjp(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t._traced:
                    continue
                gi = _sum_to_shape(gi, t.shape)
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if t.requires_grad:
                    leaves[key] = t
        out = {}
        for key, t in leaves.items():
            if key in grads:
                out[key] = grads[key].astype(t.dtype, copy=False)
        if loss.requires_grad:
            out[id(loss)] = np.ones_like(loss.data)
        return out

    def grad_of(self, grads: dict[int, np.ndarray], t: Tensor) -> np.ndarray | None:
        return grads.get(id(t))


def gradients(tape: Tape, loss: Tensor, params: Iterable[Parameter] | dict[str, Parameter]) -> dict[str, np.ndarray]:
    """Backward pass keyed by parameter name; disconnected parameters map to zeros."""
    raw = tape.backward(loss)
    if isinstance(params, dict):
        params = params.values()
    out = {}
    for p in params:
        if not p.trainable:
            continue
        g = raw.get(id(p.value))
        out[p.name] = np.zeros_like(p.value.data) if g is None else g
    return out


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _record(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(out_data)
    if _ACTIVE and any(t._traced for t in inputs):
        out._traced = True
        _ACTIVE[-1].nodes.append(_Node(op, inputs, out, vjp))
    return out


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# --- binary elementwise ---------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _broadcast_check(a, b, "add")
    return _record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _broadcast_check(a, b, "sub")
    return _record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _broadcast_check(a, b, "mul")
    ad, bd = a.data, b.data
    return _record("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    _broadcast_check(a, b, "div")
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd
    return _record("div", out, (a, b), lambda g: (g / bd, -g * out / bd))


def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _as_tensor(b, a)
    b = _as_tensor(b)
    return _as_tensor(a, b), b


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record("scale", a.data * a.dtype.type(c), (a,), lambda g: (g * c,))


def neg(a: Tensor) -> Tensor:
    return _record("neg", -a.data, (a,), lambda g: (-g,))


# --- unary elementwise ----------------------------------------------------


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return _record("log", out, (a,), lambda g: (g / ad,))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows and avoids masked indexing
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid_np(a.data)
    return _record("sigmoid", s, (a,), lambda g: (g * s * (1 - s),))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.logaddexp(0, x).astype(x.dtype, copy=False)
    return _record("softplus", out, (a,), lambda g: (g * _sigmoid_np(x),))


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = _sigmoid_np(x)
    return _record("silu", x * s, (a,), lambda g: (g * (s + x * s * (1 - s)),))


def elu_plus_one(a: Tensor) -> Tensor:
    """ELU(x) + 1: x + 1 for x > 0, exp(x) otherwise; strictly positive."""
    x = a.data
    e = np.exp(np.minimum(x, 0))
    out = np.where(x > 0, x + 1, e)
    return _record("elu_plus_one", out, (a,), lambda g: (g * np.where(x > 0, 1, e),))


def rsqrt(a: Tensor) -> Tensor:
    out = 1.0 / np.sqrt(a.data)
    return _record("rsqrt", out, (a,), lambda g: (-0.5 * g * out ** 3,))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _record("square", x * x, (a,), lambda g: (2 * g * x,))


# --- reductions and shape ops ---------------------------------------------


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = a.data
    out = x.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _record("sum", np.asarray(out), (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a: Tensor, idx) -> Tensor:
    x = a.data

    def vjp(g):
        out = np.zeros_like(x)
        np.add.at(out, idx, g)
        return (out,)

    return _record("getitem", x[idx], (a,), vjp)


def take_rows(table: Tensor, ids) -> Tensor:
    """Embedding lookup: ``table[ids]`` with scatter-add backward."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"take_rows: id out of range for table with {table.shape[0]} rows")
    x = table.data

    def vjp(g):
        out = np.zeros_like(x)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, x.shape[-1]))
        return (out,)

    return _record("take_rows", x[ids], (table,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _binary_operands(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >= 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    try:
        out = ad @ bd
    except ValueError:
        raise DimensionError(f"matmul: cannot broadcast {a.shape} @ {b.shape}") from None

    def vjp(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _record("matmul", out, (a, b), vjp)


# --- composite primitives with fused gradients ----------------------------


def softmax_lastdim(a: Tensor) -> Tensor:
    x = a.data
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _record("softmax", s, (a,), vjp)


def cross_entropy_last_position(logits: Tensor, target, vocab_mask) -> Tensor:
    """Mean negative log-likelihood of ``target`` over the masked-in vocabulary.

    ``logits`` is ``(vocab,)`` or ``(batch, vocab)``; ``target`` an int or int
    array of matching batch size; ``vocab_mask`` an iterable of allowed ids.
    Logits outside the mask are treated as minus infinity.
    """
    x = logits.data
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None]
    tgt = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if tgt.shape[0] != x.shape[0]:
        raise DimensionError(f"cross_entropy: {tgt.shape[0]} targets for {x.shape[0]} rows")
    allowed = np.zeros(x.shape[-1], dtype=bool)
    allowed[np.asarray(sorted(vocab_mask), dtype=np.int64)] = True
    if not allowed[tgt].all():
        raise ValueError("cross_entropy: target outside the vocabulary mask")
    masked = np.where(allowed, x, -np.inf)
    m = masked.max(axis=-1, keepdims=True)
    e = np.where(allowed, np.exp(masked - m), 0.0)
    z = e.sum(axis=-1, keepdims=True)
    logp = (masked - m - np.log(z))
    rows = np.arange(x.shape[0])
    loss = -logp[rows, tgt].mean()
    p = e / z

    def vjp(g):
        grad = p.copy()
        grad[rows, tgt] -= 1.0
        grad *= g / x.shape[0]
        return (grad[0] if squeeze else grad,)

    return _record("cross_entropy", np.asarray(loss, dtype=x.dtype), (logits,), vjp)


def gla_scan(q: Tensor, k: Tensor, v: Tensor, gate: Tensor, return_states: bool = False):
    """Gated linear attention over time, ``(..., T, dk)`` inputs.

    ``S_t = diag(gate_t) S_{t-1} + k_t v_t^T`` and ``o_t = S_t^T q_t``; a gate of
    ones gives plain linear attention without normalizer.
    """
    qd, kd, vd, ad = q.data, k.data, v.data, gate.data
    T = qd.shape[-2]
    lead = qd.shape[:-2]
    dk, dv = kd.shape[-1], vd.shape[-1]
    S = np.zeros(lead + (dk, dv), dtype=qd.dtype)
    states = np.empty(lead + (T, dk, dv), dtype=qd.dtype)
    out = np.empty(lead + (T, dv), dtype=qd.dtype)
    for t in range(T):
        S = ad[..., t, :, None] * S + kd[..., t, :, None] * vd[..., t, None, :]
        states[..., t, :, :] = S
        out[..., t, :] = np.einsum("...k,...kv->...v", qd[..., t, :], S)

    def vjp(g):
        # adjoint recurrence gS_t = q_t g_t^T + diag(a_{t+1}) gS_{t+1}, then batched contractions
        gSs = np.empty_like(states)
        gS = np.zeros_like(S)
        for t in range(T - 1, -1, -1):
            if t < T - 1:
                gS = ad[..., t + 1, :, None] * gS
            gS = gS + qd[..., t, :, None] * g[..., t, None, :]
            gSs[..., t, :, :] = gS
        gq = np.einsum("...tkv,...tv->...tk", states, g)
        gk = np.einsum("...tkv,...tv->...tk", gSs, vd)
        gv = np.einsum("...tkv,...tk->...tv", gSs, kd)
        ga = np.zeros_like(ad)
        ga[..., 1:, :] = np.einsum("...tkv,...tkv->...tk", gSs[..., 1:, :, :], states[..., :-1, :, :])
        return gq, gk, gv, ga

    o = _record("gla_scan", out, (q, k, v, gate), vjp)
    if return_states:
        return o, states
    return o


def selective_scan(x: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor, return_states: bool = False):
    """Selective SSM recurrence without the skip term.

    Shapes: ``x, delta`` are ``(batch, T, D)``, ``A`` is ``(D, N)`` and
    ``B, C`` are ``(batch, T, N)``. With ``dA_t = exp(delta_t * A)``,
    ``h_t = dA_t * h_{t-1} + (delta_t * x_t) B_t`` and ``y_t = h_t C_t``.
    """
    xd, dd, Ad, Bd, Cd = x.data, delta.data, A.data, B.data, C.data
    nb, T, D = xd.shape
    N = Ad.shape[-1]
    if Ad.shape != (D, N) or Bd.shape != (nb, T, N) or Cd.shape != (nb, T, N):
        raise DimensionError(
            f"selective_scan: x{xd.shape} A{Ad.shape} B{Bd.shape} C{Cd.shape} disagree"
        )
    dA = np.exp(dd[..., None] * Ad)  # (b, T, D, N)
    dx = dd * xd
    hs = np.empty((nb, T, D, N), dtype=xd.dtype)
    h = np.zeros((nb, D, N), dtype=xd.dtype)
    for t in range(T):
        h = dA[:, t] * h + dx[:, t, :, None] * Bd[:, t, None, :]
        hs[:, t] = h
    y = np.einsum("btdn,btn->btd", hs, Cd)

    def vjp(g):
        gC = np.einsum("btdn,btd->btn", hs, g)
        # adjoint recurrence gh_t = g_t C_t + dA_{t+1} gh_{t+1}
        ghs = np.empty_like(hs)
        gh = np.zeros((nb, D, N), dtype=xd.dtype)
        for t in range(T - 1, -1, -1):
            if t < T - 1:
                gh = gh * dA[:, t + 1]
            gh = gh + g[:, t, :, None] * Cd[:, t, None, :]
            ghs[:, t] = gh
        gdx = np.einsum("btdn,btn->btd", ghs, Bd)
        gB = np.einsum("btdn,btd->btn", ghs, dx)
        gx = gdx * dd
        gdelta = gdx * xd
        g_dA = ghs[:, 1:] * hs[:, :-1] * dA[:, 1:]
        gdelta[:, 1:] += np.einsum("btdn,dn->btd", g_dA, Ad)
        gA = np.einsum("btdn,btd->dn", g_dA, dd[:, 1:])
        return gx, gdelta, gA, gB, gC

    out = _record("selective_scan", y, (x, delta, A, B, C), vjp)
    if return_states:
        return out, hs
    return out


def check_finite(t: Tensor | np.ndarray, where: str = "") -> None:
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    if not np.all(np.isfinite(data)):
        loc = f" at {where}" if where else ""
        raise NonFiniteError(f"non-finite values{loc}")


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``f`` w.r.t. every entry of ``arr`` (mutated in place)."""
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|)`` on entries where either exceeds ``floor``; 0 elsewhere."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    big = np.maximum(np.abs(a), np.abs(n))
    err = np.zeros_like(a)
    mask = big > floor
    err[mask] = np.abs(a[mask] - n[mask]) / big[mask]
    return err

