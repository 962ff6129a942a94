import math
import warnings
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from osplab.bounds import (
    REGIONS,
    Affine,
    ArchDescriptor,
    BoundDomainError,
    ClassificationError,
    binary_entropy,
    classify,
    ecr_profile,
    fano_rhs,
    hybrid_local_bound,
    hybrid_state_bits,
    lipschitz_bound,
    pair_cost_bits,
    recall_bound,
    ssm_bound,
    tradeoff_rhs,
)


def test_recall_bound_examples():
    assert pair_cost_bits(32, 0.10) == 3.5
    assert recall_bound(65536, 32, 0.10) == 18724
    assert recall_bound(0, 32, 0.10) == 0
    assert recall_bound(98304, 32, 0.10) == 28086


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**7), st.sampled_from([4, 8, 16, 32, 64, 128]), st.sampled_from([0.05, 0.1, 0.2, 0.25]))
def test_recall_bound_matches_rational_oracle(q, V, eps):
    den = (1 - Fraction(eps).limit_denominator(100)) * int(math.log2(V)) - 1
    if den <= 0:
        with pytest.raises(BoundDomainError):
            recall_bound(q, V, eps)
        return
    want = math.floor(Fraction(q) / den)
    got = recall_bound(q, V, eps)
    # float rounding may only matter when q/den is within 1 ulp of an integer
    assert got == want or abs(Fraction(q) / den - want) < Fraction(1, 10**9) * q


def test_domain_error_for_small_vocab():
    with pytest.raises(BoundDomainError, match="V >= 4"):
        recall_bound(100, 2, 0.1)
    with pytest.raises(BoundDomainError):
        recall_bound(100, 3, 0.5)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 10**6), st.floats(0.01, 0.3), st.floats(0.01, 0.3))
def test_recall_bound_monotonicity(q1, q2, e1, e2):
    lo, hi = sorted((q1, q2))
    assert recall_bound(lo, 32, 0.1) <= recall_bound(hi, 32, 0.1)
    # a looser tolerance lowers the per-pair cost, so the bound can only grow with eps
    ea, eb = sorted((e1, e2))
    assert recall_bound(hi, 32, ea) <= recall_bound(hi, 32, eb)
    assert recall_bound(hi, 64, 0.1) <= recall_bound(hi, 32, 0.1)


def test_fano_rhs_examples():
    assert binary_entropy(0.5) == 1.0
    # (1 - eps) log2 V - h(eps) at V=2, eps=0.5 is 0.5 - 1: the bound is vacuous there
    assert fano_rhs(2, 0.5) == -0.5
    assert fano_rhs(32, 0.10) == pytest.approx(4.5 - 0.4689955935892812, abs=1e-12)
    assert round(fano_rhs(32, 0.10), 3) == 4.031
    assert fano_rhs(32, 1e-12) == pytest.approx(5.0, abs=1e-9)


def test_lipschitz_bound_regimes():
    assert lipschitz_bound(64, 32, 2, 64) == 1755
    assert lipschitz_bound(64, 32, 1.0, 10) == recall_bound(64 * 32)
    assert lipschitz_bound(64, 32, 0.5, 1000) == 0
    at_one = {lipschitz_bound(64, 32, 1.0, T) for T in range(1, 200)}
    assert len(at_one) == 1
    grow = [lipschitz_bound(64, 32, 2.0, T) for T in range(1, 65)]
    assert all(b > a for a, b in zip(grow, grow[1:]))
    shrink = [lipschitz_bound(64, 32, 0.5, T) for T in range(0, 80)]
    assert all(b <= a for a, b in zip(shrink, shrink[1:])) and shrink[-1] == 0


def test_ssm_and_hybrid_bounds():
    assert ssm_bound(16, 64, 32, 2) == 18724
    assert ssm_bound(0, 64, 32, 2) == 0
    assert ssm_bound(64, 64, 32, 2) == 74898
    assert hybrid_state_bits(2, 16, 64, 32, 2, 64) == 589824
    assert hybrid_state_bits(2, 16, 64, 32, 0, 64) == hybrid_state_bits(2, 16, 64, 32, 0, 4096) == 65536
    a = hybrid_state_bits(0, 16, 64, 32, 2, 64)
    assert hybrid_state_bits(0, 16, 64, 32, 2, 128) == 2 * a
    assert hybrid_local_bound(0, 65536) == recall_bound(65536)
    assert hybrid_local_bound(256, 65536) == 18980
    assert hybrid_local_bound(4, 0) == 4


def test_tradeoff_rhs():
    assert tradeoff_rhs(0.0, 32) == 0.0
    assert tradeoff_rhs(0.25, 32, 32, 0.1) == pytest.approx(8 / 0.7, rel=1e-12)
    with pytest.raises(BoundDomainError):
        tradeoff_rhs(0.5, 32, 2, 0.5)


def test_ecr_profile_rows():
    tr = ecr_profile(16384, 524288, 16, 64, 64, warn=False)
    assert tr.r == 0.25 and tr.e == 4.0
    mamba = ecr_profile(1024, 65536, 1, 64, 64, warn=False)
    assert round(mamba.r, 3) == 0.016
    assert ecr_profile(10, 10, 0, 64, 64).r == 0.0


def test_ecr_out_of_cube_is_flagged_not_clamped():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        prof = ecr_profile(16384, 524288, 16, 64, 64)
    assert prof.out_of_unit_cube and prof.e > 1
    assert any("outside" in str(x.message) for x in w)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 10**7), st.integers(0, 64), st.integers(1, 256), st.integers(1, 128))
def test_ecr_recomputable(flops, bits, n_star, T, d):
    prof = ecr_profile(flops, bits, n_star, T, d, warn=False)
    assert (prof.e, prof.c, prof.r) == prof.recomputed()
    assert prof.e == flops / (T * d) and prof.r == n_star / T


def test_classify_regions():
    tr = ArchDescriptor("transformer", Affine(0, 4096), Affine(0, 256), True)
    mamba = ArchDescriptor("mamba", Affine(65536, 0), Affine(1024, 0), False)
    hybrid = ArchDescriptor("hybrid", Affine(65536, 8192), Affine(2048, 128), True, r_attn=0.5)
    recompute = ArchDescriptor("recompute", Affine(1024, 0), Affine(32, 64), True)
    assert classify(tr) == "Rec"
    assert classify(mamba) == "EffComp"
    assert classify(hybrid) == "Interior"
    assert classify(recompute) == "CompRec"
    assert set(REGIONS) == {"Rec", "EffComp", "CompRec", "Interior"}


def test_classify_rejects_inconsistent_flags():
    with pytest.raises(ClassificationError):
        classify(ArchDescriptor("impossible", Affine(1, 0), Affine(1, 0), True))
    with pytest.raises(ClassificationError):
        classify(ArchDescriptor("wasteful", Affine(1, 1), Affine(1, 0), False))
