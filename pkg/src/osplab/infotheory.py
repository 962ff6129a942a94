"""Exact information accounting for processors with enumerable state.

A :class:`FiniteOSP` has integer states ``0..n_states-1`` and a transition
table. For associative recall with canonical keys ``0..n-1`` and no filler,
the token sequence is a deterministic function of the value vector, so the
joint law of ``(v_1, ..., v_n, s_T)`` can be tabulated exactly by enumerating
all ``V**n`` value vectors. All mutual informations below are in bits.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import binary_entropy
from .rng import stream

MAX_JOINT_CELLS = 10**7


class ResourceLimitError(RuntimeError):
    pass


class JointValidationError(ValueError):
    pass


@dataclass
class FiniteOSP:
    """Deterministic processor over ``V + 3`` tokens with a tabulated transition.

    ``readout_table[s, k]`` is the answer given to query key ``k`` in state ``s``;
    ``None`` selects the Bayes-optimal (MAP) readout from the joint law.
    """

    transition: np.ndarray  # (n_states, V + 3) ints
    V: int
    initial: int = 0
    readout_table: np.ndarray | None = None

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.int64)
        if self.transition.shape[1] != self.V + 3:
            raise ValueError(f"transition must have V+3={self.V + 3} columns")
        if self.transition.min() < 0 or self.transition.max() >= self.n_states:
            raise ValueError("transition targets outside the state set")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def state_bits(self) -> int:
        return max(0, math.ceil(math.log2(self.n_states))) if self.n_states > 1 else 0

    def run(self, tokens) -> int:
        s = self.initial
        for t in tokens:
            s = int(self.transition[s, t])
        return s

    def reachable(self, depth: int) -> set[int]:
        """States reachable from the initial state in exactly ``depth`` steps."""
        frontier = {self.initial}
        for _ in range(depth):
            frontier = set(self.transition[sorted(frontier)].reshape(-1).tolist())
        return frontier


def random_finite_osp(rng: np.random.Generator, state_bits: int, V: int, random_readout: bool = False) -> FiniteOSP:
    n_states = 2**state_bits
    trans = rng.integers(0, n_states, size=(n_states, V + 3))
    readout = rng.integers(0, V, size=(n_states, V)) if random_readout else None
    return FiniteOSP(trans, V, 0, readout)


def constant_finite_osp(V: int) -> FiniteOSP:
    return FiniteOSP(np.zeros((1, V + 3), dtype=np.int64), V, 0, np.zeros((1, V), dtype=np.int64))


def dict_finite_osp(n_slots: int, V: int) -> FiniteOSP:
    """Exact dictionary for keys ``0..n_slots-1`` encoded as a finite automaton.

    State = (phase, pending key, one value-or-empty cell per slot) in mixed radix.
    """
    cells = V + 1  # value or empty
    radices = [3, n_slots + 1] + [cells] * n_slots
    n_states = int(np.prod(radices))

    def encode(phase, pending, slots):
        code = 0
        for digit, radix in zip([phase, pending] + list(slots), radices):
            code = code * radix + digit
        return code

    trans = np.zeros((n_states, V + 3), dtype=np.int64)
    readout = np.zeros((n_states, V), dtype=np.int64)
    for phase, pending, *slots in itertools.product(*[range(r) for r in radices]):
        s = encode(phase, pending, slots)
        for key in range(V):
            if key < n_slots and slots[key] < V:
                readout[s, key] = slots[key]
        for tok in range(V + 3):
            if tok == V:
                nxt = encode(1, 0, slots)
            elif phase == 1 and tok < V:
                nxt = encode(2, tok + 1 if tok < n_slots else 0, slots)
            elif phase == 2 and tok < V and pending > 0:
                new = list(slots)
                new[pending - 1] = tok
                nxt = encode(0, 0, new)
            else:
                nxt = encode(0, 0, slots)
            trans[s, tok] = nxt
    return FiniteOSP(trans, V, encode(0, 0, [V] * n_slots), readout)


def canonical_sequence(values, V: int) -> list[int]:
    """Filler-free pair block with keys ``0..n-1`` followed by the query marker."""
    toks = []
    for i, v in enumerate(values):
        toks += [V, i, int(v)]
    toks.append(V + 2)
    return toks


@dataclass
class JointTable:
    """``p[v_1, ..., v_n, s]`` over reachable final states ``states[s]``."""

    p: np.ndarray
    states: np.ndarray
    n: int
    V: int
    state_bits: int
    readout: np.ndarray | None = None  # (len(states), n) answers to queries k_1..k_n

    def validate(self, tol: float = 1e-12) -> None:
        if self.p.ndim != self.n + 1 or any(s != self.V for s in self.p.shape[:-1]):
            raise JointValidationError(f"table shape {self.p.shape} does not match n={self.n}, V={self.V}")
        if np.any(self.p < -tol):
            raise JointValidationError("negative probabilities")
        total = float(self.p.sum())
        if abs(total - 1.0) > tol * max(1, self.p.size):
            raise JointValidationError(f"probabilities sum to {total}, not 1")


def exact_joint_distribution(fosp: FiniteOSP, n: int, V: int | None = None) -> JointTable:
    V = fosp.V if V is None else V
    if V != fosp.V:
        raise ValueError(f"processor alphabet V={fosp.V} differs from requested V={V}")
    if n > V:
        raise ValueError("canonical keys need n <= V")
    reach = sorted(fosp.reachable(3 * n + 1))
    if V**n * len(reach) > MAX_JOINT_CELLS:
        raise ResourceLimitError(f"joint table needs {V**n * len(reach)} cells > {MAX_JOINT_CELLS}")
    finals = np.zeros(V**n, dtype=np.int64)
    for idx, values in enumerate(itertools.product(range(V), repeat=n)):
        finals[idx] = fosp.run(canonical_sequence(values, V))
    used = np.unique(finals)
    col = {s: i for i, s in enumerate(used)}
    p = np.zeros((V**n, len(used)))
    p[np.arange(V**n), [col[s] for s in finals]] = 1.0 / V**n
    p = p.reshape((V,) * n + (len(used),))
    readout = None
    if fosp.readout_table is not None:
        readout = fosp.readout_table[used][:, :n]
    return JointTable(p, used, n, V, fosp.state_bits, readout)


# --- entropy arithmetic -----------------------------------------------------


def entropy(p: np.ndarray) -> float:
    q = p[p > 0]
    return float(-(q * np.log2(q)).sum())


def _marginal(p: np.ndarray, keep: tuple[int, ...]) -> np.ndarray:
    drop = tuple(a for a in range(p.ndim) if a not in keep)
    return p.sum(axis=drop) if drop else p


def _H(p: np.ndarray, axes) -> float:
    axes = tuple(sorted(set(axes)))
    if not axes:
        return 0.0
    return entropy(_marginal(p, axes))


def conditional_mutual_information(p: np.ndarray, a, b, c=()) -> float:
    """``I(A; B | C)`` where ``a, b, c`` are axis groups of the joint array ``p``."""
    a, b, c = tuple(a), tuple(b), tuple(c)
    return _H(p, a + c) + _H(p, b + c) - _H(p, a + b + c) - _H(p, c)


def mutual_information(p: np.ndarray, a, b) -> float:
    return conditional_mutual_information(p, a, b, ())


def map_readout(table: JointTable) -> np.ndarray:
    """Bayes-optimal answers ``(n_states, n)``: argmax_v P(v_i = v | s), lowest id on ties."""
    n = table.n
    out = np.zeros((table.p.shape[-1], n), dtype=np.int64)
    for i in range(n):
        pis = _marginal(table.p, (i, n))  # (V, S)
        out[:, i] = np.argmax(pis, axis=0)
    return out


def readout_joint(table: JointTable, i: int, answers: np.ndarray) -> np.ndarray:
    """Joint law of ``(v_i, v_hat_i)`` when state ``s`` answers ``answers[s]``."""
    pis = _marginal(table.p, (i, table.n))
    out = np.zeros((table.V, table.V))
    for s, a in enumerate(answers):
        out[:, a] += pis[:, s]
    return out


@dataclass
class PairReport:
    index: int
    mi_state: float  # I(v_i; s)
    cmi_state: float  # I(v_i; s | v_<i)
    mi_readout: float  # I(v_i; v_hat_i)
    error: float  # P(v_hat_i != v_i)
    fano_rhs: float


@dataclass
class InequalityReport:
    n: int
    V: int
    state_bits: int
    reachable_states: int
    mi_total: float  # I(v; s)
    state_entropy: float
    pairs: list[PairReport] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def sum_pair_mi(self) -> float:
        return sum(pr.mi_state for pr in self.pairs)

    def rows(self) -> list[dict]:
        return [
            {
                "i": pr.index + 1,
                "I_vi_s": pr.mi_state,
                "I_vi_s_given_prev": pr.cmi_state,
                "I_vi_vhat": pr.mi_readout,
                "error": pr.error,
                "fano_rhs": pr.fano_rhs,
            }
            for pr in self.pairs
        ]


def verify_information_inequalities(table: JointTable, tol: float = 1e-9, readout: np.ndarray | None = None) -> InequalityReport:
    """Check independence lemma, chain rule, Fano and data processing on an exact joint.

    ``readout`` overrides the answers; otherwise the table's tabulated readout
    is used if present, else the MAP readout.
    """
    table.validate()
    p, n, V = table.p, table.n, table.V
    s_axis = (n,)
    answers = readout if readout is not None else table.readout
    if answers is None:
        answers = map_readout(table)
    mi_total = mutual_information(p, tuple(range(n)), s_axis)
    h_s = _H(p, s_axis)
    rep = InequalityReport(n, V, table.state_bits, p.shape[-1], mi_total, h_s)
    chain = 0.0
    for i in range(n):
        mi = mutual_information(p, (i,), s_axis)
        cmi = conditional_mutual_information(p, (i,), s_axis, tuple(range(i)))
        chain += cmi
        rj = readout_joint(table, i, answers[:, i])
        mi_r = mutual_information(rj, (0,), (1,))
        err = 1.0 - float(np.trace(rj))
        err_c = min(max(err, 0.0), 1.0)
        fano = (1 - err_c) * math.log2(V) - binary_entropy(err_c)
        rep.pairs.append(PairReport(i, mi, cmi, mi_r, err, fano))
        if cmi < mi - tol:
            rep.violations.append(f"independence lemma fails at i={i + 1}: {cmi} < {mi}")
        if mi_r < fano - tol:
            rep.violations.append(f"Fano fails at i={i + 1}: {mi_r} < {fano}")
        if mi_r > mi + tol:
            rep.violations.append(f"data processing fails at i={i + 1}: {mi_r} > {mi}")
    if abs(chain - mi_total) > tol:
        rep.violations.append(f"chain rule mismatch: {chain} vs {mi_total}")
    if rep.sum_pair_mi > mi_total + tol:
        rep.violations.append(f"sum of per-pair information {rep.sum_pair_mi} exceeds I(v; s) {mi_total}")
    if mi_total > h_s + tol:
        rep.violations.append(f"I(v; s) {mi_total} exceeds H(s) {h_s}")
    if h_s > math.log2(p.shape[-1]) + tol:
        rep.violations.append("H(s) exceeds log2 of the reachable-state count")
    if math.log2(p.shape[-1]) > table.state_bits + tol:
        rep.violations.append("reachable states exceed the state bit budget")
    return rep


def oracle_suite(count: int = 100, seed: int = 42, max_state_bits: int = 10, max_V: int = 4, max_n: int = 4,
                 tol: float = 1e-9) -> list[InequalityReport]:
    """Check the inequalities on ``count`` random processors with MAP readout.

    Processor ``i`` draws its state size, alphabet and pair count from the
    stream ``("oracle", i)``, so reports are reproducible one by one.
    """
    reports = []
    for i in range(count):
        rng = stream(seed, "oracle", i)
        bits = int(rng.integers(1, max_state_bits + 1))
        V = int(rng.integers(2, max_V + 1))
        n = int(rng.integers(1, min(max_n, V) + 1))
        fosp = random_finite_osp(rng, bits, V)
        reports.append(verify_information_inequalities(exact_joint_distribution(fosp, n), tol))
    return reports
