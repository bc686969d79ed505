import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from tfrm import simplex
from tfrm.core import BidProfile, InvalidInput, MechanismParams
from tfrm.mechanisms import RebateCoefficients
from tfrm.rebate_lp import (build_bidwise_lp, build_reduced_lp, zero_head_probes,
                            coefficient_range, is_tail_only, matches_closed_form,
                            rebate_rows, solution_from_json, solution_to_json,
                            solve_lp, theorem3_witness, verify_bidwise_constraints)


# -- simplex ---------------------------------------------------------------

def test_simplex_textbook():
    # max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18
    res = simplex.solve([3, 5], np.array([[1, 0], [0, 2], [3, 2]]), [4, 12, 18])
    assert res.objective == pytest.approx(36)
    assert res.x == pytest.approx([2, 6])


def test_simplex_negative_rhs_needs_phase_one():
    # max -x - y with x + y >= 2
    res = simplex.solve([-1, -1], np.array([[-1, -1]]), [-2])
    assert res.objective == pytest.approx(-2)


def test_simplex_infeasible_and_unbounded():
    with pytest.raises(simplex.Infeasible):
        simplex.solve([1], np.array([[1], [-1]]), [1, -2])
    with pytest.raises(simplex.Unbounded):
        simplex.solve([1, 0], np.array([[-1, 1]]), [1])


def test_simplex_free_variable():
    # max -x with x >= -3, x free
    res = simplex.solve([-1], np.array([[-1]]), [3], free=[True])
    assert res.x == pytest.approx([-3])
    assert res.objective == pytest.approx(3)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_simplex_agrees_with_scipy(seed):
    rng = np.random.default_rng(seed)
    m, d = rng.integers(2, 7), rng.integers(2, 6)
    A = rng.normal(size=(m, d))
    b = rng.uniform(0.1, 2.0, size=m)
    A = np.vstack([A, np.ones(d)])  # bounded
    b = np.append(b, 10.0)
    c = rng.normal(size=d)
    ref = linprog(-c, A_ub=A, b_ub=b, bounds=[(0, None)] * d, method="highs")
    assert ref.status == 0
    res = simplex.solve(c, A, b)
    assert res.objective == pytest.approx(-ref.fun, abs=1e-8)


# -- reduced LP ------------------------------------------------------------

def test_reduced_lp_shape():
    lp = build_reduced_lp(MechanismParams(4, 2))
    assert lp.variables == ("f", "c2", "c3")
    assert lp.constraint_count == 2 * (4 - 2) + 1
    expected = np.array([
        [1, -1, 0],   # f <= c2
        [1, -1, -1],  # f <= c2 + c3
        [0, 2, 0],    # (n-k) c2 <= k
        [0, 4, 4],    # n (c2 + c3) <= k
        [0, 4, 1],    # n c2 + (n-k-1) c3 <= k
    ])
    np.testing.assert_array_equal(lp.A, expected)
    np.testing.assert_array_equal(lp.b, [0, 0, 2, 2, 2])


@pytest.mark.parametrize("n", range(3, 13))
def test_reduced_lp_counts(n):
    for k in range(1, n - 1):
        assert build_reduced_lp(MechanismParams(n, k)).constraint_count == 2 * (n - k) + 1


@pytest.mark.parametrize("n, k", [(3, 1), (5, 3), (8, 2), (12, 10), (20, 7)])
def test_reduced_lp_against_scipy_and_closed_form(n, k):
    lp = build_reduced_lp(MechanismParams(n, k))
    ref = linprog(-lp.objective, A_ub=lp.A, b_ub=lp.b,
                  bounds=[(None, None)] * len(lp.variables), method="highs")
    coeffs = solve_lp(lp)
    assert coeffs.f == pytest.approx(-ref.fun, abs=1e-9)
    assert coeffs.f == pytest.approx(k / n, abs=1e-12)
    assert matches_closed_form(coeffs, n, k)


def test_reduced_lp_optimum_is_unique():
    # fixing f at the optimum leaves c pinned: max and min of each c_j agree
    n, k = 7, 3
    lp = build_reduced_lp(MechanismParams(n, k))
    A = np.vstack([lp.A, -lp.objective])
    b = np.append(lp.b, -k / n)
    for j in range(1, len(lp.variables)):
        obj = np.zeros(len(lp.variables))
        obj[j] = 1
        hi = linprog(-obj, A_ub=A, b_ub=b, bounds=[(None, None)] * len(obj)).fun
        lo = linprog(obj, A_ub=A, b_ub=b, bounds=[(None, None)] * len(obj)).fun
        assert -hi == pytest.approx(lo, abs=1e-9)


def test_reduced_lp_rejects_k_too_large():
    with pytest.raises(InvalidInput):
        build_reduced_lp(MechanismParams(4, 3))


def test_solution_json_roundtrip():
    params = MechanismParams(6, 2)
    coeffs = solve_lp(build_reduced_lp(params))
    p2, c2 = solution_from_json(solution_to_json(coeffs, params))
    assert p2 == params and c2 == coeffs


# -- bid-wise program ------------------------------------------------------

def test_rebate_rows_match_weight_matrix():
    v = (9.0, 7.0, 4.0, 4.0, 1.0)
    c = np.array([0.5, 0.1, 0.2, 0.3, 0.4])
    coeffs = RebateCoefficients(tuple(c))
    np.testing.assert_allclose(rebate_rows(v) @ c, c[0] + np.array(v) @ coeffs.weight_matrix())


@pytest.mark.parametrize("n, k", [(4, 2), (5, 3), (6, 1), (7, 4)])
def test_probes_pin_head_coefficients(n, k):
    params = MechanismParams(n, k)
    probes = zero_head_probes(n)
    for j in range(k):
        lo, hi = coefficient_range(params, probes, j)
        assert lo == pytest.approx(0.0, abs=1e-9) and hi == pytest.approx(0.0, abs=1e-9)
    lo, hi = coefficient_range(params, probes, k)
    assert hi > lo  # c_k stays free


def test_bidwise_lp_optimum_on_probes_is_k_over_n():
    n, k = 5, 2
    A, b = build_bidwise_lp(MechanismParams(n, k), zero_head_probes(n))
    obj = np.zeros(A.shape[1])
    obj[0] = 1
    res = simplex.solve(obj, A, b, free=np.ones(A.shape[1], bool))
    assert res.objective == pytest.approx(k / n)


@pytest.mark.parametrize("dist", ["uniform", "lognormal"])
def test_optimum_satisfies_bidwise_constraints(dist):
    rng = np.random.default_rng(11)
    for n in range(3, 10):
        for k in range(1, n - 1):
            raw = rng.uniform(0, 10, (2000, n)) if dist == "uniform" else rng.lognormal(0, 1.5, (2000, n))
            S = -np.sort(-raw, axis=1)
            rep = verify_bidwise_constraints(RebateCoefficients.optimal(n, k),
                                             MechanismParams(n, k), S)
            assert rep.ok, rep.violations[:3]


def test_bidwise_violation_examples():
    n, k = 5, 2
    params = MechanismParams(n, k)
    c = list(RebateCoefficients.optimal(n, k).c)
    c[k] += 0.01
    rep = verify_bidwise_constraints(RebateCoefficients(tuple(c), k / n), params, [(1.0,) * n])
    assert [v[0] for v in rep.violations] == ["approx_ir_m"]
    rep = verify_bidwise_constraints(RebateCoefficients((0.0,) * n, 0.1), params, [(3, 2, 1, 1, 0)])
    assert [v[0] for v in rep.violations] == ["worst_case_fraction"]
    with pytest.raises(InvalidInput):
        verify_bidwise_constraints(RebateCoefficients((0.0,) * n), params, [(1, 2, 3, 4, 5)])


def test_lower_fraction_is_feasible_higher_is_not():
    n, k = 6, 3
    params = MechanismParams(n, k)
    S = -np.sort(-np.random.default_rng(2).uniform(0, 1, (5000, n)), axis=1)
    base = RebateCoefficients.optimal(n, k)
    assert verify_bidwise_constraints(RebateCoefficients(base.c, base.f - 0.1), params, S).ok
    assert not verify_bidwise_constraints(RebateCoefficients(base.c, base.f + 0.01), params, S).ok


# -- tail-only coefficients ------------------------------------------------

def test_tail_only_witness_example():
    params = MechanismParams(5, 2)
    tail = RebateCoefficients((0, 0, 0, 0.5, 0.5))
    assert is_tail_only(tail, 2)
    rep = theorem3_witness(tail, BidProfile((10, 8, 6, 4, 2)), params)
    assert rep.genuine_rebate_sum == 0.0
    assert rep.miner_payments_received == 16.0


def test_tail_only_witness_rejects_optimal_coefficients():
    with pytest.raises(InvalidInput):
        theorem3_witness(RebateCoefficients.optimal(5, 2), BidProfile((10, 8, 6, 4, 2)),
                         MechanismParams(5, 2))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 5, allow_nan=False), min_size=3, max_size=3),
       st.lists(st.floats(0, 100, allow_nan=False), min_size=6, max_size=9))
def test_tail_only_witness_property(tail, bids):
    n, k = 6, 2
    coeffs = RebateCoefficients((0.0,) * (k + 1) + tuple(tail))
    rep = theorem3_witness(coeffs, BidProfile(tuple(bids)), MechanismParams(n, k))
    assert rep.genuine_rebate_sum == 0.0
    assert rep.miner_payments_received == pytest.approx(k * sorted(bids, reverse=True)[k - 1])
