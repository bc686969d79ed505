import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tfrm.core import BidProfile, InvalidInput, MechanismParams, spa_tfm
from tfrm.mechanisms import (R2TFRM, RTFRM, RandomnessBeacon, RebateCoefficients,
                             SecondPrice, alpha_upper_bound, alpha_upper_bound_batch,
                             evaluate_rebate, ideal_tfrm, ideal_tfrm_witness,
                             optimal_total_rebate, r2_tfrm, r2_tfrm_expected, r_tfrm)

SAMPLE = BidProfile((100, 100, 10, 4, 4))
P53 = MechanismParams(5, 3)


# -- rebate evaluation -----------------------------------------------------

def test_evaluate_rebate_examples():
    c = RebateCoefficients.optimal(5, 3)
    bids = (100, 100, 10, 4, 4)
    assert evaluate_rebate(c, bids, 0) == pytest.approx(2.4)
    assert evaluate_rebate(c, bids, 3) == pytest.approx(6.0)
    assert evaluate_rebate(RebateCoefficients.zero(5), bids, 2) == 0.0


def test_evaluate_rebate_rejects_unsorted():
    with pytest.raises(InvalidInput):
        evaluate_rebate(RebateCoefficients.optimal(5, 3), (1, 2, 3, 4, 5), 0)


def test_optimal_coefficients_shape():
    c = RebateCoefficients.optimal(7, 4)
    assert c.f == pytest.approx(4 / 7)
    assert [j for j, x in enumerate(c.c) if x] == [4]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=5, max_size=5),
       st.lists(st.floats(-2, 2, allow_nan=False), min_size=5, max_size=5))
def test_weight_matrix_matches_scalar_rebates(bids, c):
    bids = tuple(sorted(bids, reverse=True))
    coeffs = RebateCoefficients(tuple(c))
    batch = coeffs.c[0] + np.array(bids) @ coeffs.weight_matrix()
    scalar = [evaluate_rebate(coeffs, bids, i) for i in range(5)]
    np.testing.assert_allclose(batch, scalar, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=6, max_size=6),
       st.integers(0, 5), st.floats(0, 1))
def test_rebate_independent_of_own_bid(bids, i, t):
    # move user i anywhere inside its rank interval; rebate must not move
    bids = sorted(bids, reverse=True)
    hi = bids[i - 1] if i > 0 else bids[i] + 10
    lo = bids[i + 1] if i < 5 else 0.0
    moved = list(bids)
    moved[i] = lo + t * (hi - lo)
    c = RebateCoefficients((0.3, 0.1, -0.2, 0.5, 0.05, 0.7))
    assert evaluate_rebate(c, moved, i) == pytest.approx(evaluate_rebate(c, bids, i), abs=1e-9)


# -- R-TFRM ----------------------------------------------------------------

def test_r_tfrm_sample_profile():
    out = r_tfrm(SAMPLE, P53)
    assert out.rebates == pytest.approx((2.4, 2.4, 2.4, 6, 6))
    assert out.total_rebate == pytest.approx(19.2)
    assert out.miner_revenue == pytest.approx(-7.2)
    assert out.payments == pytest.approx((1.6, 1.6, 1.6, -6, -6))
    assert out.total_rebate == pytest.approx(optimal_total_rebate(out.bids, 5, 3))


def test_r_tfrm_flat_profile():
    out = r_tfrm(BidProfile((1,) * 5), P53)
    assert out.rebates == pytest.approx((0.6,) * 5)
    assert out.miner_revenue == pytest.approx(0.0, abs=1e-12)


def test_r_tfrm_zero_profile():
    out = r_tfrm(BidProfile((7, 0, 0, 0, 0)), P53)
    assert out.payments == (0.0,) * 5 and out.rebates == (0.0,) * 5


def test_r_tfrm_rejects_small_blocks():
    with pytest.raises(InvalidInput):
        r_tfrm(BidProfile((3, 2, 1, 0)), MechanismParams(4, 3))


def test_payment_rule_structure():
    out = r_tfrm(BidProfile((9, 7, 6, 5, 3, 2, 1)), MechanismParams(6, 3))
    for pos, (pay, reb) in enumerate(zip(out.payments, out.rebates)):
        expect = (out.price if pos < 3 else 0.0) - reb
        assert pay == pytest.approx(expect)
    assert out.miner_revenue == pytest.approx(sum(out.payments))


profiles = st.lists(st.floats(0, 1e3, allow_nan=False), min_size=3, max_size=10)


@settings(max_examples=300, deadline=None)
@given(profiles, st.data())
def test_total_rebate_identity_and_bounds(bids, data):
    n = data.draw(st.integers(3, len(bids)))
    k = data.draw(st.integers(1, n - 2))
    params = MechanismParams(n, k)
    out = r_tfrm(BidProfile(tuple(bids)), params)
    b = out.bids
    assert out.total_rebate == pytest.approx(
        (k / n) * (k * b[k] + (n - k) * b[k - 1]), abs=1e-9 * max(1, b[0]))
    # Approx-IR_M and IR_u
    assert out.total_rebate <= k * b[k - 1] + 1e-9 * max(1, b[0])
    assert min(out.rebates) >= 0.0
    for pos in range(k):
        assert b[pos] - b[k] + out.rebates[pos] >= -1e-9


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=5, max_size=8), st.randoms())
def test_r_tfrm_permutation_invariance(bids, rnd):
    params = MechanismParams(5, 2)
    perm = list(range(len(bids)))
    rnd.shuffle(perm)
    a = r_tfrm(BidProfile(tuple(bids)), params)
    b = r_tfrm(BidProfile(tuple(bids[p] for p in perm)), params)
    assert sorted(zip(a.bids, a.payments)) == pytest.approx(sorted(zip(b.bids, b.payments)))


def test_batch_settlement_matches_scalar():
    rng = np.random.default_rng(3)
    params = MechanismParams(6, 3, alpha=0.4)
    bids = rng.integers(0, 5, size=(200, 8)).astype(float)  # many ties
    for mech in (SecondPrice(), RTFRM(), R2TFRM()):
        st_ = mech.settle(bids, params)
        for row in range(bids.shape[0]):
            out = mech.outcome(BidProfile(tuple(bids[row])), params)
            for i in range(8):
                assert st_.payments[row, i] == pytest.approx(out.payment_of(i), abs=1e-12)
                assert st_.rebates[row, i] == pytest.approx(out.rebate_of(i), abs=1e-12)
            assert set(np.flatnonzero(st_.confirmed[row])) == set(out.confirmed)


# -- R2-TFRM ---------------------------------------------------------------

def test_beacon_reproducible_and_seed_dependent():
    a = RandomnessBeacon(42).draws(50, 0.5)
    assert np.array_equal(a, RandomnessBeacon(42).draws(50, 0.5))
    assert not np.array_equal(a, RandomnessBeacon(43).draws(50, 0.5))
    assert RandomnessBeacon(42).draw(7, 0.5) == a[7]
    # prefix stability: asking for more slots does not change earlier draws
    assert np.array_equal(RandomnessBeacon(9).draws(5, 0.3), RandomnessBeacon(9).draws(20, 0.3)[:5])


def test_r2_reduces_to_r_tfrm_at_alpha_one():
    for seed in range(20):
        params = MechanismParams(5, 3, alpha=1.0)
        assert r2_tfrm(SAMPLE, params, None, RandomnessBeacon(seed)) == r_tfrm(SAMPLE, params)


def test_r2_reduces_to_second_price_at_alpha_zero():
    params = MechanismParams(5, 3, alpha=0.0)
    out = r2_tfrm(SAMPLE, params, None, RandomnessBeacon(1))
    assert out.payments == (4, 4, 4, 0, 0)
    assert out.payments == spa_tfm(SAMPLE, params).payments


def test_r2_rebates_follow_beacon():
    params = MechanismParams(5, 3, alpha=0.5)
    full = r_tfrm(SAMPLE, params)
    for seed in range(30):
        beacon = RandomnessBeacon(seed)
        out = r2_tfrm(SAMPLE, params, None, beacon)
        for pos in range(5):
            expect = full.rebates[pos] if beacon.draw(pos, 0.5) else 0.0
            assert out.rebates[pos] == expect


def test_r2_monte_carlo_total_rebate():
    params = MechanismParams(5, 3, alpha=0.5)
    totals = np.array([r2_tfrm(SAMPLE, params, None, RandomnessBeacon(s)).total_rebate
                       for s in range(20_000)])
    se = totals.std(ddof=1) / np.sqrt(totals.size)
    assert abs(totals.mean() - 9.6) <= 3 * se
    assert r2_tfrm_expected(SAMPLE, params).total_rebate == pytest.approx(9.6)


# -- alpha bound -----------------------------------------------------------

def test_alpha_bound_examples():
    assert alpha_upper_bound((100, 100, 10, 4, 4), P53) == (pytest.approx(0.625), False)
    assert alpha_upper_bound((5, 5, 3, 3, 1), P53).value == pytest.approx(1.0)
    assert alpha_upper_bound((5, 5, 3, 0, 0), P53) == (0.0, True)
    assert alpha_upper_bound((5, 0, 0, 0, 0), P53) == (1.0, True)


def test_alpha_bound_batch_matches_scalar():
    rng = np.random.default_rng(0)
    S = -np.sort(-rng.integers(0, 4, size=(500, 6)).astype(float), axis=1)
    params = MechanismParams(6, 2)
    batch = alpha_upper_bound_batch(S, 6, 2)
    for row, val in zip(S, batch):
        assert val == pytest.approx(alpha_upper_bound(tuple(row), params).value)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.01, 100), min_size=5, max_size=5))
def test_alpha_bound_in_unit_interval_and_tight(bids):
    b = tuple(sorted(bids, reverse=True))
    bound = alpha_upper_bound(b, P53).value
    assert 0 < bound <= 1 + 1e-12
    revenue = 3 * b[3] - bound * optimal_total_rebate(b, 5, 3)
    assert revenue == pytest.approx(0.0, abs=1e-9 * b[0])


# -- Ideal-TFRM -------------------------------------------------------------

def linear_g(n, k):
    return lambda others: (k / n) * others[k - 1]


def test_ideal_witness_zero_rebate():
    assert ideal_tfrm_witness(lambda o: 0.0, BidProfile((10, 8, 6, 4, 2)), P53) is None


def test_ideal_witness_linear_rebate():
    w = ideal_tfrm_witness(linear_g(5, 3), BidProfile((10, 8, 6, 4, 2)), P53)
    assert w is not None
    assert w.profile == (8, 6, 4, 2, 2)
    assert w.rebate == pytest.approx(2.4)
    assert w.witness_rebate == w.rebate
    # the last slot of the witness is unconfirmed and faces the same others
    assert sorted(w.profile, reverse=True) == list(w.profile)


def test_ideal_witness_constant_rebate():
    w = ideal_tfrm_witness(lambda o: 1.0, BidProfile((3, 3, 3, 3, 3)), P53)
    assert w.witness_rebate == 1.0


def test_ideal_tfrm_voids_every_rebate():
    out = ideal_tfrm(BidProfile((10, 8, 6, 4, 2)), P53, linear_g(5, 3))
    assert out.rebates == (0.0,) * 5
    assert out.miner_revenue == 3 * 4
