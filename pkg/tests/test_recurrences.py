import numpy as np
import pytest

from osplab.autodiff import NonFiniteError
from osplab.recurrences import (
    STEP_FUNCTIONS,
    Gate,
    ShapeError,
    UnifiedState,
    gla_step,
    init_state,
    linear_transformer_step,
    mamba_ssm_step,
    mlstm_step,
    random_params,
    retnet_step,
    table2,
    unified_step,
)
from osplab.rng import stream

D = 8


def test_all_ones_gate_accumulates():
    rng = stream(1)
    k, v = rng.standard_normal(3), rng.standard_normal(4)
    s0 = UnifiedState(rng.standard_normal((3, 4)))
    g, u = table2("linear_transformer", s0.S, k, v)
    assert np.array_equal(unified_step(s0, g, u).S, s0.S + np.outer(k, v))


def test_retnet_at_gamma_one_is_linear_accumulation():
    rng = stream(2)
    S = rng.standard_normal((3, 3))
    k, v = rng.standard_normal(3), rng.standard_normal(3)
    a = unified_step(UnifiedState(S), *table2("retnet", S, k, v, gamma=1.0))
    b = unified_step(UnifiedState(S), *table2("linear_transformer", S, k, v))
    assert np.array_equal(a.S, b.S)


def test_delta_rule_last_write_wins():
    k = np.array([1.0, 0.0, 0.0])
    v1, v2 = np.array([1.0, 2.0]), np.array([-3.0, 5.0])
    s = UnifiedState(np.zeros((3, 2)))
    for v in (v1, v2):
        s = unified_step(s, *table2("deltanet", s.S, k, v, beta=1.0))
    assert np.allclose(k @ s.S, v2, atol=1e-15)


def test_gate_shape_errors():
    with pytest.raises(ShapeError):
        Gate("diag", np.ones(2)).apply(np.ones((3, 3)))
    with pytest.raises(ShapeError):
        unified_step(UnifiedState(np.ones((2, 2))), Gate("scalar", 1.0), np.ones(3))


def _per_head(arch, params, state, x):
    """The step's new state rebuilt head by head from the unified form."""
    H = params["n_heads"]
    heads = lambda W: (W.T @ x).reshape(H, -1)  # noqa: E731
    q, k, v = heads(params["W_Q"]), heads(params["W_K"]), heads(params["W_V"])
    out = []
    for h in range(H):
        S = state.S[h]
        if arch == "retnet":
            g, u = table2("retnet", S, k[h], v[h], gamma=params["gamma"])
        elif arch == "gla":
            w = (params["W_g2"].T @ (params["W_g1"].T @ x) + params["b_g"]).reshape(H, -1)[h]
            g, u = table2("gla", S, k[h], v[h], w=w)
        elif arch == "deltanet":
            kn = k[h] / np.linalg.norm(k[h])
            beta = 1 / (1 + np.exp(-(params["w_beta"] @ x + params["b_beta"])[h]))
            g, u = table2("deltanet", S, kn, v[h], beta=beta)
        else:
            kk = k[h] / np.sqrt(k.shape[-1])
            f = np.exp(params["w_f"] @ x + params["b_f"])[h]
            i = np.exp(params["w_i"] @ x + params["b_i"])[h]
            g, u = table2("mlstm", S, kk, v[h], f=f, i=i)
        out.append(unified_step(UnifiedState(S), g, u).S)
    return np.stack(out)


@pytest.mark.parametrize("arch", ["retnet", "gla", "deltanet", "mlstm"])
def test_steps_are_instances_of_the_unified_form(arch):
    rng = stream(3, arch)
    params = random_params(arch, D, rng, n_heads=2)
    state = init_state(arch, D, 2)
    state.S = rng.standard_normal(state.S.shape)
    for t in range(5):
        x = rng.standard_normal(D)
        want = _per_head(arch, params, state, x)
        _, state = STEP_FUNCTIONS[arch](params, state, x, step=t)
        assert np.allclose(state.S, want, atol=1e-12, rtol=0)


def test_mamba_step_matches_unified_form():
    rng = stream(4)
    params = random_params("mamba", D, rng, N=4)
    state = init_state("mamba", D, N=4)
    for _ in range(4):
        x = rng.standard_normal(D)
        delta = np.logaddexp(0, params["W_delta"].T @ x + params["b_delta"])
        g, u = table2("mamba", state.h, delta=delta, A=params["A"], B=params["W_B"].T @ x, x=x)
        want = unified_step(UnifiedState(state.h), g, u).S
        _, state = mamba_ssm_step(params, state, x)
        assert np.allclose(state.h, want, atol=1e-12, rtol=0)


def test_linear_attention_denominator_positive():
    rng = stream(5)
    params = random_params("linear_transformer", D, rng, n_heads=2)
    state = init_state("linear_transformer", D, 2)
    for _ in range(10):
        x = rng.standard_normal(D) * 5
        _, state = linear_transformer_step(params, state, x)
        q = params["W_Q"].T @ x
        phi = np.where(q > 0, q + 1, np.exp(np.minimum(q, 0))).reshape(2, -1)
        assert np.all(np.einsum("hk,hk->h", phi, state.z) > 0)


def test_mamba_zero_step_size_freezes_state():
    rng = stream(6)
    params = random_params("mamba", D, rng, N=4)
    params["b_delta"] = np.full(D, -60.0)
    params["W_delta"] = np.zeros((D, D))
    state = init_state("mamba", D, N=4)
    state.h = rng.standard_normal((D, 4))
    before = state.h.copy()
    _, new = mamba_ssm_step(params, state, rng.standard_normal(D))
    assert np.allclose(new.h, before, atol=1e-20)


def test_gla_closed_gate_resets_to_outer_product():
    rng = stream(7)
    params = random_params("gla", D, rng, n_heads=2)
    params["b_g"] = np.full(D, -1e4)
    state = init_state("gla", D, 2)
    state.S = rng.standard_normal(state.S.shape)
    x = rng.standard_normal(D)
    _, new = gla_step(params, state, x)
    k = (params["W_K"].T @ x).reshape(2, -1)
    v = (params["W_V"].T @ x).reshape(2, -1)
    assert np.allclose(new.S, k[:, :, None] * v[:, None, :])


def test_mlstm_normalizer_floor():
    rng = stream(8)
    params = random_params("mlstm", D, rng, n_heads=2, scale=1e-3)
    state = init_state("mlstm", D, 2)
    x = rng.standard_normal(D)
    out, new = mlstm_step(params, state, x)
    q = (params["W_Q"].T @ x).reshape(2, -1)
    h = np.einsum("hk,hkv->hv", q, new.S).reshape(-1)
    o = 1 / (1 + np.exp(-(params["W_o"].T @ x)))
    # |n^T q| is tiny here, so the floor of 1 is what divides
    assert np.allclose(out, o * h)


@pytest.mark.parametrize("arch", sorted(STEP_FUNCTIONS))
def test_every_step_runs_and_stays_finite(arch):
    rng = stream(9, arch)
    params = random_params(arch, D, rng, n_heads=2 if arch not in ("mamba", "rwkv4") else 1, N=4)
    state = init_state(arch, D, params["n_heads"], N=4)
    for t in range(16):
        out, state = STEP_FUNCTIONS[arch](params, state, rng.standard_normal(D), step=t)
        assert out.shape == (D,) and np.all(np.isfinite(out))


def test_non_finite_output_names_layer_and_step():
    params = random_params("retnet", D, stream(10))
    state = init_state("retnet", D)
    with np.errstate(invalid="ignore"), pytest.raises(NonFiniteError, match="layer 3 at step 7"):
        retnet_step(params, state, np.full(D, np.inf), layer=3, step=7)
