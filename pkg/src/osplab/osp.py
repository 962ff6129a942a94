"""Online sequence processors with exact FLOP and state-bit meters.

An OSP is anything implementing :class:`OSP`: an initial state, a one-token
transition, and a readout that maps ``(state, query)`` to a distribution over
answers. :func:`run` folds a token sequence through ``step`` and records the
meters; :func:`query` charges the readout cost separately.

Three constructions realise each achievable pair of properties:

* :func:`dict_osp` - exact key/value map: recall is perfect, state grows.
* :func:`recompute_osp` - fixed summary plus an unmetered external buffer that
  is rescanned at query time: compact and exact, but query cost grows with T.
* :func:`linear_ssm_osp` - stable linear recurrence: constant state and cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np


class InputError(ValueError):
    pass


class OSP:
    """Interface; subclasses override every method."""

    vocab: int

    def initial_state(self) -> Any:
        raise NotImplementedError

    def step(self, state, token: int):
        raise NotImplementedError

    def readout(self, state, q: int) -> dict[int, float]:
        raise NotImplementedError

    def state_bits(self, state) -> int:
        raise NotImplementedError

    def step_flops(self, state, token: int) -> int:
        raise NotImplementedError

    def query_flops(self, state, q: int) -> int:
        return 0


@dataclass
class RunMeters:
    step_flops: list[int] = field(default_factory=list)
    per_step_state_bits: list[int] = field(default_factory=list)
    peak_state_bits: int = 0
    external_bits: int = 0

    @property
    def total_flops(self) -> int:
        return sum(self.step_flops)

    @property
    def max_step_flops(self) -> int:
        return max(self.step_flops, default=0)


def run(osp: OSP, tokens, state=None) -> tuple[Any, RunMeters]:
    """Fold ``step`` over ``tokens`` from ``state`` (default: the initial state)."""
    if state is None:
        state = osp.initial_state()
    meters = RunMeters(peak_state_bits=osp.state_bits(state))
    for t in tokens:
        t = int(t)
        if not 0 <= t < osp.vocab:
            raise InputError(f"token {t} outside vocabulary of size {osp.vocab}")
        meters.step_flops.append(osp.step_flops(state, t))
        state = osp.step(state, t)
        bits = osp.state_bits(state)
        meters.per_step_state_bits.append(bits)
        meters.peak_state_bits = max(meters.peak_state_bits, bits)
    ext = getattr(state, "external_bits", None)
    if ext is not None:
        meters.external_bits = ext
    return state, meters


def query(osp: OSP, state, q: int) -> tuple[dict[int, float], int]:
    """Readout distribution and its metered cost; never mutates ``state``."""
    return osp.readout(state, int(q)), osp.query_flops(state, int(q))


def argmax_answer(dist: dict[int, float]) -> int:
    """Most probable answer; ties go to the lowest id."""
    best = max(dist.values())
    return min(a for a, p in dist.items() if p == best)


# --- (Eff, Rec): exact dictionary ----------------------------------------


@dataclass(frozen=True)
class DictState:
    table: tuple[tuple[int, int], ...] = ()
    phase: int = 0  # 0 idle, 1 expecting key, 2 expecting value
    pending_key: int = -1

    def lookup(self) -> dict[int, int]:
        return dict(self.table)


class DictOSP(OSP):
    """Stores ``key -> value`` whenever it sees ``[KEY, k, v]``; later writes win."""

    def __init__(self, d_key_bits: int, d_val_bits: int, V: int | None = None):
        self.d_key_bits = d_key_bits
        self.d_val_bits = d_val_bits
        self.V = V if V is not None else 2 ** d_key_bits
        self.vocab = self.V + 3

    def initial_state(self) -> DictState:
        return DictState()

    def step(self, state: DictState, token: int) -> DictState:
        V = self.V
        if token == V:
            return DictState(state.table, 1, -1)
        if state.phase == 1 and token < V:
            return DictState(state.table, 2, token)
        if state.phase == 2 and token < V:
            table = dict(state.table)
            table[state.pending_key] = token
            return DictState(tuple(sorted(table.items())), 0, -1)
        return DictState(state.table, 0, -1)

    def readout(self, state: DictState, q: int) -> dict[int, float]:
        table = state.lookup()
        if q in table:
            return {table[q]: 1.0}
        return {a: 1.0 / self.V for a in range(self.V)}

    def state_bits(self, state: DictState) -> int:
        return len(state.table) * (self.d_key_bits + self.d_val_bits)

    def step_flops(self, state, token: int) -> int:
        # one hash of the key plus one stored word per step, independent of t
        return self.d_key_bits + self.d_val_bits

    def query_flops(self, state, q: int) -> int:
        return self.d_key_bits


def dict_osp(d_key_bits: int, d_val_bits: int, V: int | None = None) -> DictOSP:
    return DictOSP(d_key_bits, d_val_bits, V)


# --- (Comp, Rec): recompute from an external buffer ----------------------


@dataclass(frozen=True)
class RecomputeState:
    summary: tuple[int, ...]
    buffer: tuple[int, ...]  # external storage, not part of the state
    token_bits: int = 8

    @property
    def external_bits(self) -> int:
        return len(self.buffer) * self.token_bits


class RecomputeOSP(OSP):
    """Fixed-size summary; queries rescan the whole external input."""

    def __init__(self, compress_dim: int, V: int = 32, d: int | None = None, b: int = 32):
        self.compress_dim = compress_dim
        self.V = V
        self.vocab = V + 3
        self.d = d if d is not None else compress_dim
        self.b = b
        self.token_bits = max(1, math.ceil(math.log2(self.vocab)))

    def initial_state(self) -> RecomputeState:
        return RecomputeState((0,) * self.compress_dim, (), self.token_bits)

    def step(self, state: RecomputeState, token: int) -> RecomputeState:
        # summary: running token histogram folded into compress_dim bounded counters
        s = list(state.summary)
        s[token % self.compress_dim] = (s[token % self.compress_dim] + 1) % (1 << self.b)
        return RecomputeState(tuple(s), state.buffer + (token,), self.token_bits)

    def readout(self, state: RecomputeState, q: int) -> dict[int, float]:
        buf = state.buffer
        V = self.V
        ans = None
        for i in range(len(buf) - 2):
            if buf[i] == V and buf[i + 1] == q and buf[i + 2] < V:
                ans = buf[i + 2]
        if ans is None:
            return {a: 1.0 / V for a in range(V)}
        return {ans: 1.0}

    def state_bits(self, state) -> int:
        return self.compress_dim * self.b

    def step_flops(self, state, token: int) -> int:
        return self.compress_dim

    def query_flops(self, state: RecomputeState, q: int) -> int:
        return len(state.buffer) * self.d


def recompute_osp(compress_dim: int, V: int = 32, d: int | None = None, b: int = 32) -> RecomputeOSP:
    return RecomputeOSP(compress_dim, V, d, b)


# --- (Eff, Comp): stable linear state space model ------------------------


class LinearSSMOSP(OSP):
    """``s_t = A s_{t-1} + B e(x_t)`` with ``A`` scaled to a given spectral radius.

    By default ``A`` is symmetric with eigenvalues in ``[-rho, rho]`` and one
    eigenvalue exactly ``rho``, so its operator norm equals its spectral radius.
    ``orthogonal=True`` uses ``rho`` times a random orthogonal matrix instead.
    """

    def __init__(self, N: int, d: int, spectral_radius: float, rng: np.random.Generator,
                 V: int = 32, orthogonal: bool = False, b: int = 32):
        if not 0.0 < spectral_radius <= 1.0:
            raise ValueError(f"spectral_radius must lie in (0, 1], got {spectral_radius}")
        self.N, self.d, self.V, self.b = N, d, V, b
        self.vocab = V + 3
        Q, _ = np.linalg.qr(rng.standard_normal((N, N)))
        if orthogonal:
            self.A = spectral_radius * Q
        else:
            lam = rng.uniform(-spectral_radius, spectral_radius, size=N)
            lam[0] = spectral_radius
            self.A = (Q * lam) @ Q.T
        self.embed = rng.standard_normal((self.vocab, d)) / math.sqrt(d)
        self.B = rng.standard_normal((N, d)) / math.sqrt(d)
        self.C = rng.standard_normal((V, N)) / math.sqrt(N)

    def initial_state(self) -> np.ndarray:
        return np.zeros(self.N)

    def transition(self, state: np.ndarray, token: int) -> np.ndarray:
        return self.A @ state + self.B @ self.embed[token]

    def step(self, state, token: int) -> np.ndarray:
        return self.transition(state, token)

    def readout(self, state, q: int) -> dict[int, float]:
        z = self.C @ state
        z = np.exp(z - z.max())
        z /= z.sum()
        return {a: float(p) for a, p in enumerate(z)}

    def state_bits(self, state) -> int:
        return self.N * self.b

    def step_flops(self, state, token: int) -> int:
        # A s (N^2 multiply-adds) plus B e(x) (N d multiply-adds), two flops each
        return 2 * self.N * self.N + 2 * self.N * self.d

    def query_flops(self, state, q: int) -> int:
        return 2 * self.V * self.N

    def operator_norm(self) -> float:
        return float(np.linalg.norm(self.A, 2))


def linear_ssm_osp(N: int, d: int, spectral_radius: float, rng: np.random.Generator, **kw) -> LinearSSMOSP:
    return LinearSSMOSP(N, d, spectral_radius, rng, **kw)


def perturbation_trace(osp: LinearSSMOSP, tokens, delta0: np.ndarray) -> np.ndarray:
    """``||s_t - s'_t||`` for ``t = 0..T`` from two runs whose initial states differ by ``delta0``."""
    s = osp.initial_state()
    sp = s + delta0
    out = [float(np.linalg.norm(sp - s))]
    for t in tokens:
        s = osp.step(s, int(t))
        sp = osp.step(sp, int(t))
        out.append(float(np.linalg.norm(sp - s)))
    return np.array(out)


def estimate_lipschitz(
    step: Callable[[np.ndarray, int], np.ndarray] | OSP,
    samples: int,
    scale: float,
    rng: np.random.Generator,
    state_dim: int | None = None,
    tokens=None,
    refine_steps: int = 20,
) -> float:
    """Largest observed ``||f(s+delta, x) - f(s, x)|| / ||delta||``.

    Each random probe is followed by ``refine_steps`` rounds that re-aim the
    perturbation along the observed output difference (power iteration on the
    local Jacobian). Every ratio is a measured one, so the result never
    exceeds the true Lipschitz constant of ``f``.
    """
    if scale <= 0:
        raise ValueError("perturbation scale must be positive")
    f = step.step if isinstance(step, OSP) else step
    if state_dim is None:
        if not isinstance(step, OSP):
            raise ValueError("state_dim is required for a bare step function")
        state_dim = int(np.size(step.initial_state()))
    if tokens is None:
        tokens = range(getattr(step, "vocab", 1))
    tokens = list(tokens)
    best = 0.0
    for _ in range(samples):
        s = rng.standard_normal(state_dim)
        x = tokens[int(rng.integers(len(tokens)))]
        delta = rng.standard_normal(state_dim)
        norm = np.linalg.norm(delta)
        if norm == 0:
            raise ValueError("zero-norm perturbation")
        delta *= scale / norm
        base = f(s, x)
        for _ in range(refine_steps + 1):
            diff = f(s + delta, x) - base
            ratio = np.linalg.norm(diff) / np.linalg.norm(delta)
            best = max(best, float(ratio))
            dn = np.linalg.norm(diff)
            if dn == 0:
                break
            delta = diff * (scale / dn)
    return best
