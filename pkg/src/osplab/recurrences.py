"""Fixed-state recurrences as plain numpy forward steps.

Every fixed-state layer here is an instance of

    S_t = G_t (.) S_{t-1} + U_t(k_t, v_t, S_{t-1})

with ``S`` stored as ``(d_k, d_v)``. A gate acts as a scalar, a diagonal over
the key axis, a full elementwise mask, or a ``(d_k, d_k)`` matrix applied on
the left (the delta rule). Readouts use ``q^T S``.

Step functions take ``(params, state, x)`` for one token embedding ``x`` of
width ``d`` and return ``(output, new_state)``. Multi-head layers keep one
``(d_h, d_h)`` state per head, stacked as ``(H, d_h, d_h)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import NonFiniteError


class ShapeError(ValueError):
    pass


@dataclass
class UnifiedState:
    S: np.ndarray
    z: np.ndarray | None = None

    def copy(self) -> "UnifiedState":
        return UnifiedState(self.S.copy(), None if self.z is None else self.z.copy())


@dataclass(frozen=True)
class Gate:
    """``kind`` is one of ``scalar``, ``diag``, ``elementwise``, ``matrix``."""

    kind: str
    value: np.ndarray | float

    def apply(self, S: np.ndarray) -> np.ndarray:
        g = self.value
        if self.kind == "scalar":
            return float(g) * S
        if self.kind == "diag":
            g = np.asarray(g)
            if g.shape != S.shape[-2:-1]:
                raise ShapeError(f"diag gate {g.shape} vs state {S.shape}")
            return g[:, None] * S
        if self.kind == "elementwise":
            g = np.asarray(g)
            if g.shape != S.shape:
                raise ShapeError(f"elementwise gate {g.shape} vs state {S.shape}")
            return g * S
        if self.kind == "matrix":
            g = np.asarray(g)
            if g.shape != (S.shape[-2], S.shape[-2]):
                raise ShapeError(f"matrix gate {g.shape} vs state {S.shape}")
            return g @ S
        raise ValueError(f"unknown gate kind {self.kind!r}")


def unified_step(state: UnifiedState, gate: Gate, update: np.ndarray) -> UnifiedState:
    """``S <- G (.) S + U``; the normalizer, if any, is carried unchanged."""
    update = np.asarray(update)
    if update.shape != state.S.shape:
        raise ShapeError(f"update {update.shape} vs state {state.S.shape}")
    return UnifiedState(gate.apply(state.S) + update, state.z)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x):
    return np.logaddexp(0.0, x)


def elu_plus_one(x):
    return np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0.0)))


# --- gate/update pairs for each row of the unified form ------------------


def table2(arch: str, S: np.ndarray, k=None, v=None, **extra) -> tuple[Gate, np.ndarray]:
    """Gate and update matrix for one step of ``arch`` acting on ``S`` (``d_k x d_v``)."""
    if arch == "linear_transformer":
        return Gate("scalar", 1.0), np.outer(k, v)
    if arch == "retnet":
        return Gate("scalar", extra["gamma"]), np.outer(k, v)
    if arch == "gla":
        return Gate("diag", _sigmoid(extra["w"])), np.outer(k, v)
    if arch == "mamba":
        delta, A, B, x = extra["delta"], extra["A"], extra["B"], extra["x"]
        # S is (d, N): G = exp(delta A), U = (delta * x) B^T
        return Gate("elementwise", np.exp(delta[:, None] * A)), np.outer(delta * x, B)
    if arch == "deltanet":
        beta = extra["beta"]
        dk = S.shape[0]
        return Gate("matrix", np.eye(dk) - beta * np.outer(k, k)), beta * np.outer(k, v)
    if arch == "mlstm":
        return Gate("scalar", extra["f"]), extra["i"] * np.outer(k, v)
    raise ValueError(f"no unified-form row for {arch!r}")


# --- per-architecture forward steps -------------------------------------


def _finite(arr, layer, step, what):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite {what} in layer {layer} at step {step}")


def _heads(x, H):
    return x.reshape(H, -1)


def linear_transformer_step(params, state: UnifiedState, x, *, layer=0, step=0):
    """ELU+1 kernel attention: ``S += phi(k) v^T``, ``z += phi(k)``, ``o = phi(q)^T S / phi(q)^T z``."""
    H = params["n_heads"]
    q = elu_plus_one(_heads(params["W_Q"].T @ x, H))
    k = elu_plus_one(_heads(params["W_K"].T @ x, H))
    v = _heads(params["W_V"].T @ x, H)
    S = state.S + k[:, :, None] * v[:, None, :]
    z = state.z + k
    num = np.einsum("hk,hkv->hv", q, S)
    den = np.einsum("hk,hk->h", q, z)
    out = (num / den[:, None]).reshape(-1)
    _finite(out, layer, step, "linear-attention output")
    return out, UnifiedState(S, z)


def retnet_step(params, state: UnifiedState, x, *, layer=0, step=0):
    H = params["n_heads"]
    gamma = params["gamma"]
    q = _heads(params["W_Q"].T @ x, H)
    k = _heads(params["W_K"].T @ x, H)
    v = _heads(params["W_V"].T @ x, H)
    S = gamma * state.S + k[:, :, None] * v[:, None, :]
    out = np.einsum("hk,hkv->hv", q, S).reshape(-1)
    _finite(out, layer, step, "retention output")
    return out, UnifiedState(S, state.z)


def gla_step(params, state: UnifiedState, x, *, layer=0, step=0):
    """``S = diag(sigmoid(w)) S + k v^T`` with ``w`` from a low-rank projection of ``x``."""
    H = params["n_heads"]
    q = _heads(params["W_Q"].T @ x, H) * params.get("q_scale", 1.0)
    k = _heads(params["W_K"].T @ x, H)
    v = _heads(params["W_V"].T @ x, H)
    w = params["W_g2"].T @ (params["W_g1"].T @ x) + params["b_g"]
    a = _sigmoid(_heads(w, H))
    S = a[:, :, None] * state.S + k[:, :, None] * v[:, None, :]
    out = np.einsum("hk,hkv->hv", q, S).reshape(-1)
    _finite(out, layer, step, "GLA output")
    return out, UnifiedState(S, state.z)


def deltanet_step(params, state: UnifiedState, x, *, layer=0, step=0):
    """Delta rule with unit-normalized keys: overwrite the value bound to ``k``."""
    H = params["n_heads"]
    q = _heads(params["W_Q"].T @ x, H)
    k = _heads(params["W_K"].T @ x, H)
    k = k / np.maximum(np.linalg.norm(k, axis=-1, keepdims=True), 1e-12)
    v = _heads(params["W_V"].T @ x, H)
    beta = _sigmoid(params["w_beta"] @ x + params["b_beta"])  # (H,)
    old = np.einsum("hk,hkv->hv", k, state.S)
    S = state.S + beta[:, None, None] * k[:, :, None] * (v - old)[:, None, :]
    out = np.einsum("hk,hkv->hv", q, S).reshape(-1)
    _finite(out, layer, step, "delta-rule output")
    return out, UnifiedState(S, state.z)


def mlstm_step(params, state: UnifiedState, x, *, layer=0, step=0):
    """Matrix LSTM with exponential input/forget gates and a max(|n^T q|, 1) normalizer."""
    H = params["n_heads"]
    q = _heads(params["W_Q"].T @ x, H)
    k = _heads(params["W_K"].T @ x, H) / np.sqrt(q.shape[-1])
    v = _heads(params["W_V"].T @ x, H)
    f = np.exp(params["w_f"] @ x + params["b_f"])  # (H,)
    i = np.exp(params["w_i"] @ x + params["b_i"])
    o = _sigmoid(params["W_o"].T @ x)
    S = f[:, None, None] * state.S + i[:, None, None] * k[:, :, None] * v[:, None, :]
    n = f[:, None] * state.z + i[:, None] * k
    den = np.maximum(np.abs(np.einsum("hk,hk->h", n, q)), 1.0)
    h = np.einsum("hk,hkv->hv", q, S) / den[:, None]
    out = o * h.reshape(-1)
    _finite(out, layer, step, "mLSTM output")
    return out, UnifiedState(S, n)


@dataclass
class RWKVState:
    a: np.ndarray
    b: np.ndarray


def rwkv4_step(params, state: RWKVState, x, *, layer=0, step=0):
    """``a = e^{-w} a + e^k v``, ``b = e^{-w} b + e^k``, ``o = sigmoid(r) * a / b``."""
    k = params["W_k"].T @ x
    v = params["W_v"].T @ x
    r = params["W_r"].T @ x
    decay = np.exp(-params["w"])
    ek = np.exp(k)
    a = decay * state.a + ek * v
    b = decay * state.b + ek
    out = _sigmoid(r) * a / b
    _finite(out, layer, step, "RWKV output")
    return out, RWKVState(a, b)


@dataclass
class SSMState:
    h: np.ndarray  # (d, N)


def mamba_ssm_step(params, state: SSMState, x, *, layer=0, step=0):
    """Selective SSM step; ``x`` is the already-projected layer input of width ``d``.

    ``delta = softplus(W_delta x + b_delta)``, ``B = W_B x``, ``C = W_C x``,
    ``h = exp(delta A) * h + (delta * x) B^T``, ``y = h C + D * x``.
    """
    delta = _softplus(params["W_delta"].T @ x + params["b_delta"])
    B = params["W_B"].T @ x
    C = params["W_C"].T @ x
    A = params["A"]
    h = np.exp(delta[:, None] * A) * state.h + (delta * x)[:, None] * B[None, :]
    y = h @ C + params["D"] * x
    _finite(y, layer, step, "SSM output")
    return y, SSMState(h)


def init_state(arch: str, d: int, n_heads: int = 1, N: int = 16) -> UnifiedState | SSMState | RWKVState:
    dh = d // n_heads
    if arch in ("linear_transformer", "mlstm"):
        return UnifiedState(np.zeros((n_heads, dh, dh)), np.zeros((n_heads, dh)))
    if arch in ("retnet", "gla", "deltanet"):
        return UnifiedState(np.zeros((n_heads, dh, dh)))
    if arch == "mamba":
        return SSMState(np.zeros((d, N)))
    if arch == "rwkv4":
        return RWKVState(np.zeros(d), np.zeros(d))
    raise ValueError(f"unknown architecture {arch!r}")


def random_params(arch: str, d: int, rng: np.random.Generator, n_heads: int = 1, N: int = 16, scale: float = 0.3):
    """Random step parameters for exercising a recurrence outside a trained model."""
    def m(*shape):
        return rng.normal(0.0, scale, size=shape)

    p: dict = {"n_heads": n_heads}
    if arch in ("linear_transformer", "retnet", "gla", "deltanet", "mlstm"):
        p.update(W_Q=m(d, d), W_K=m(d, d), W_V=m(d, d))
    if arch == "retnet":
        p["gamma"] = 0.9
    elif arch == "gla":
        p.update(W_g1=m(d, 4), W_g2=m(4, d), b_g=np.full(d, 2.0))
    elif arch == "deltanet":
        p.update(w_beta=m(n_heads, d), b_beta=np.zeros(n_heads))
    elif arch == "mlstm":
        p.update(w_f=m(n_heads, d), b_f=np.full(n_heads, -0.1), w_i=m(n_heads, d), b_i=np.zeros(n_heads), W_o=m(d, d))
    elif arch == "mamba":
        p.update(
            W_delta=m(d, d), b_delta=np.full(d, -2.0), W_B=m(d, N), W_C=m(d, N),
            A=-np.tile(np.arange(1, N + 1, dtype=float), (d, 1)), D=np.ones(d),
        )
    elif arch == "rwkv4":
        p.update(W_k=m(d, d), W_v=m(d, d), W_r=m(d, d), w=np.abs(m(d)))
    return p


STEP_FUNCTIONS = {
    "linear_transformer": linear_transformer_step,
    "retnet": retnet_step,
    "gla": gla_step,
    "deltanet": deltanet_step,
    "mlstm": mlstm_step,
    "rwkv4": rwkv4_step,
    "mamba": mamba_ssm_step,
}
