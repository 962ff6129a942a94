"""Closed-form recall-capacity bounds, ECR profiles and region classification.

All bounds return integer pair counts (floored): a fractional pair cannot be
recalled. The shared denominator ``(1 - eps) * log2(V) - 1`` is the per-pair
information cost after Fano's inequality with ``h(eps) <= 1``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

DEFAULT_EPSILON = 0.10
DEFAULT_V = 32


class BoundDomainError(ValueError):
    """The bound's denominator is not positive for the given ``V`` and ``epsilon``."""


class ClassificationError(ValueError):
    pass


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def pair_cost_bits(V: int, epsilon: float = DEFAULT_EPSILON) -> float:
    """Information each recalled pair must occupy, ``(1 - eps) log2 V - 1``."""
    if V < 2:
        raise BoundDomainError(f"V must be >= 2, got {V}")
    if not 0.0 < epsilon < 1.0:
        raise BoundDomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    den = (1.0 - epsilon) * math.log2(V) - 1.0
    if den <= 0:
        raise BoundDomainError(
            f"(1 - eps) log2 V - 1 = {den:.6g} <= 0 for V={V}, eps={epsilon}; "
            "the bound needs a positive per-pair cost, which holds for every V >= 4 "
            "at small eps but can fail for V in {2, 3}"
        )
    return den


def recall_bound(q_bits: float, V: int = DEFAULT_V, epsilon: float = DEFAULT_EPSILON) -> int:
    """Maximum pairs recallable at accuracy ``1 - epsilon`` from ``q_bits`` of state."""
    if q_bits < 0:
        raise ValueError(f"q_bits must be >= 0, got {q_bits}")
    return math.floor(q_bits / pair_cost_bits(V, epsilon))


def fano_rhs(V: int, epsilon: float) -> float:
    """Fano lower bound on ``I(v; v_hat)`` in bits: ``(1 - eps) log2 V - h(eps)``."""
    return (1.0 - epsilon) * math.log2(V) - binary_entropy(epsilon)


def lipschitz_capacity_bits(d: int, b: int, L: float, T: int) -> float:
    """Effective state bits ``d*b + d*T*log2 L``, clamped at zero from below."""
    if L <= 0:
        raise ValueError(f"Lipschitz constant must be > 0, got {L}")
    return max(0.0, d * b + d * T * math.log2(L))


def lipschitz_bound(d: int, b: int, L: float, T: int, V: int = DEFAULT_V, epsilon: float = DEFAULT_EPSILON) -> int:
    return math.floor(lipschitz_capacity_bits(d, b, L, T) / pair_cost_bits(V, epsilon))


def ssm_bound(N: int, d: int, b: int, n_layers: int, V: int = DEFAULT_V, epsilon: float = DEFAULT_EPSILON) -> int:
    return recall_bound(N * d * b * n_layers, V, epsilon)


def hybrid_state_bits(n_ssm: int, N: int, d: int, b: int, n_attn: int, T: int) -> int:
    """Fixed SSM state plus a key and a value vector per token in each attention layer."""
    if min(n_ssm, N, d, b, n_attn, T) < 0:
        raise ValueError("counts must be nonnegative")
    return n_ssm * N * d * b + n_attn * T * 2 * d * b


def hybrid_local_bound(w: int, q_ssm_bits: float, V: int = DEFAULT_V, epsilon: float = DEFAULT_EPSILON) -> int:
    """Sliding-window hybrid: exact recall inside the window plus the SSM ceiling."""
    return w + recall_bound(q_ssm_bits, V, epsilon)


def tradeoff_rhs(c: float, b: int, V: int = DEFAULT_V, epsilon: float = DEFAULT_EPSILON) -> float:
    """Largest recall ratio ``r`` compatible with compactness loss ``c``."""
    den = (1.0 - epsilon) - 1.0 / math.log2(V) if V >= 2 else 0.0
    if den <= 0:
        raise BoundDomainError(f"(1 - eps) - 1/log2 V = {den:.6g} <= 0 for V={V}, eps={epsilon}")
    return c * b / den


@dataclass(frozen=True)
class ECRProfile:
    e: float
    c: float
    r: float
    max_step_flops: int
    max_state_bits: int
    n_star: int
    T: int
    d: int
    V: int
    b: int
    epsilon: float = DEFAULT_EPSILON

    @property
    def out_of_unit_cube(self) -> bool:
        return not all(0.0 <= x <= 1.0 for x in (self.e, self.c, self.r))

    def recomputed(self) -> tuple[float, float, float]:
        return _ecr_values(self.max_step_flops, self.max_state_bits, self.n_star, self.T, self.d, self.V, self.b)


def _ecr_values(max_step_flops, max_state_bits, n_star, T, d, V, b):
    e = max_step_flops / (T * d)
    c = max_state_bits / (T * math.log2(V) * b)
    r = n_star / T
    return e, c, r


def ecr_profile(
    max_step_flops: int,
    max_state_bits: int,
    n_star: int,
    T: int,
    d: int,
    V: int = DEFAULT_V,
    b: int = 32,
    epsilon: float = DEFAULT_EPSILON,
    warn: bool = True,
) -> ECRProfile:
    """Normalized (efficiency loss, compactness loss, recall ratio).

    Values outside ``[0, 1]`` are returned unclamped; ``out_of_unit_cube`` flags them.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    e, c, r = _ecr_values(max_step_flops, max_state_bits, n_star, T, d, V, b)
    prof = ECRProfile(e, c, r, max_step_flops, max_state_bits, n_star, T, d, V, b, epsilon)
    if warn and prof.out_of_unit_cube:
        warnings.warn(f"ECR profile outside [0,1]^3: e={e:.4g} c={c:.4g} r={r:.4g}", stacklevel=2)
    return prof


# --- classification --------------------------------------------------------

REGIONS = ("Rec", "EffComp", "CompRec", "Interior")


@dataclass(frozen=True)
class Affine:
    """``intercept + slope * T``."""

    intercept: float
    slope: float

    def __call__(self, T: float) -> float:
        return self.intercept + self.slope * T


@dataclass(frozen=True)
class ArchDescriptor:
    name: str
    state_bits: Affine
    step_flops: Affine
    strong_rec: bool
    r_attn: float | None = None
    notes: dict = field(default_factory=dict, compare=False)

    @property
    def satisfies_comp(self) -> bool:
        return self.state_bits.slope == 0

    @property
    def satisfies_eff(self) -> bool:
        return self.step_flops.slope == 0

    @property
    def region(self) -> str:
        return classify(self)


def classify(desc: ArchDescriptor) -> str:
    """Place an architecture in the triangle from its affine meters and recall flag."""
    eff, comp, rec = desc.satisfies_eff, desc.satisfies_comp, desc.strong_rec
    if eff and comp:
        if rec:
            raise ClassificationError(
                f"{desc.name}: constant state and cost cannot carry strong recall"
            )
        return "EffComp"
    if not rec:
        raise ClassificationError(
            f"{desc.name}: gives up {'compactness' if not comp else 'efficiency'} without strong recall"
        )
    if comp:
        return "CompRec"
    if desc.r_attn is not None and 0.0 < desc.r_attn < 1.0:
        return "Interior"
    return "Rec"
