import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from osplab.infotheory import (
    FiniteOSP,
    conditional_mutual_information,
    constant_finite_osp,
    dict_finite_osp,
    entropy,
    exact_joint_distribution,
    mutual_information,
    oracle_suite,
    random_finite_osp,
    verify_information_inequalities,
)
from osplab.rng import stream


def brute_mi(p_xy):
    """Mutual information of a 2-D joint, written out cell by cell."""
    px, py = p_xy.sum(1), p_xy.sum(0)
    total = 0.0
    for i, j in itertools.product(range(p_xy.shape[0]), range(p_xy.shape[1])):
        if p_xy[i, j] > 0:
            total += p_xy[i, j] * math.log2(p_xy[i, j] / (px[i] * py[j]))
    return total


def test_dict_machine_single_pair_is_a_permutation():
    table = exact_joint_distribution(dict_finite_osp(1, 2), 1)
    assert table.p.shape == (2, 2)
    assert np.array_equal(np.sort(table.p, axis=None), [0, 0, 0.5, 0.5])
    assert mutual_information(table.p, (0,), (1,)) == pytest.approx(1.0, abs=1e-12)


def test_constant_machine_carries_no_information():
    table = exact_joint_distribution(constant_finite_osp(4), 3)
    assert mutual_information(table.p, (0, 1, 2), (3,)) == 0.0


def test_eight_bit_machine_respects_budget():
    fosp = random_finite_osp(stream(1, "8bit"), 8, 4)
    table = exact_joint_distribution(fosp, 4)
    total = sum(mutual_information(table.p, (i,), (4,)) for i in range(4))
    assert total <= 8 + 1e-9


def test_dict_machine_conditional_equals_unconditional():
    table = exact_joint_distribution(dict_finite_osp(2, 2), 2)
    mi = mutual_information(table.p, (1,), (2,))
    cmi = conditional_mutual_information(table.p, (1,), (2,), (0,))
    assert cmi == pytest.approx(mi, abs=1e-12) and mi == pytest.approx(1.0, abs=1e-12)


def test_independent_variables_have_zero_both_sides():
    p = np.full((2, 3, 4), 1 / 24)
    assert mutual_information(p, (0,), (2,)) == pytest.approx(0.0, abs=1e-15)
    assert conditional_mutual_information(p, (0,), (2,), (1,)) == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_mutual_information_matches_cellwise_sum(seed):
    rng = np.random.default_rng(seed)
    p = rng.random((3, 4))
    p /= p.sum()
    assert mutual_information(p, (0,), (1,)) == pytest.approx(brute_mi(p), abs=1e-12)


def test_entropy_of_uniform():
    assert entropy(np.full(8, 1 / 8)) == pytest.approx(3.0)


def test_joint_sums_to_one_and_states_fit_budget():
    fosp = random_finite_osp(stream(2), 5, 3)
    table = exact_joint_distribution(fosp, 3)
    assert table.p.sum() == pytest.approx(1.0)
    assert table.p.shape[-1] <= 2**5


def test_mismatched_alphabet_rejected():
    with pytest.raises(ValueError):
        exact_joint_distribution(random_finite_osp(stream(3), 2, 3), 2, V=4)
    with pytest.raises(ValueError):
        FiniteOSP(np.zeros((2, 5), dtype=int), V=4)


def test_oracle_suite_hundred_random_machines():
    reports = oracle_suite(100, seed=42)
    assert len(reports) == 100
    assert all(r.ok for r in reports), [v for r in reports for v in r.violations]
    for r in reports:
        assert r.sum_pair_mi <= r.state_bits + 1e-9
        for pr in r.pairs:
            assert pr.cmi_state >= pr.mi_state - 1e-9
            assert pr.mi_readout <= pr.mi_state + 1e-9
            assert pr.mi_readout >= pr.fano_rhs - 1e-9


def test_fano_holds_for_a_poor_readout():
    fosp = random_finite_osp(stream(4), 4, 3, random_readout=True)
    rep = verify_information_inequalities(exact_joint_distribution(fosp, 2))
    assert rep.ok
