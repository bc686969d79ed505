"""Redistribution indices, Monte Carlo estimators and incentive checks.

Checkers take a ``Mechanism`` (see ``mechanisms``) so they run unchanged
against the second-price baseline, R-TFRM, R2-TFRM or a test double.
Randomised mechanisms are judged on their closed-form expectation over the
beacon unless seeds are supplied.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import integrate

from .adversary import build_block
from .core import ATOL, BidProfile, InvalidInput, MechanismParams
from .mechanisms import (Mechanism, RandomnessBeacon, alpha_upper_bound_batch,
                         optimal_total_rebate)


@dataclass(frozen=True)
class IndexEstimate:
    value: float
    kind: str                      # worst-case | average | resilient-worst-case
    sample_count: int
    standard_error: Optional[float] = None
    method: str = "probed"         # probed | analytic | monte-carlo

    def to_dict(self) -> dict:
        return {"value": self.value, "kind": self.kind,
                "sample_count": self.sample_count,
                "standard_error": self.standard_error, "method": self.method}


def mean_and_se(samples) -> tuple[float, float]:
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        return float(x.mean()), float("nan")
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


def within_sigma(mean: float, se: float, target: float, sigmas: float = 3.0) -> bool:
    return abs(mean - target) <= sigmas * se + ATOL


def _as_matrix(profiles) -> np.ndarray:
    if isinstance(profiles, np.ndarray):
        return np.atleast_2d(profiles).astype(float)
    rows = [p.bids if isinstance(p, BidProfile) else tuple(p) for p in profiles]
    return np.array(rows, dtype=float)


def redistribution_fractions(mechanism: Mechanism, params: MechanismParams,
                             profiles, scope: str = "confirmed"):
    """Per-profile rebate fraction of the second-price surplus ``k * b[k]``.

    ``scope="confirmed"`` sums rebates over confirmed users only, ``"all"``
    over every included user. Profiles with zero surplus are dropped.
    """
    bids = _as_matrix(profiles)
    st = mechanism.settle(bids, params)
    price = np.where(st.confirmed, st.payments + st.rebates, 0.0).max(axis=1)
    surplus = params.k * price
    mask = st.confirmed if scope == "confirmed" else st.included
    rebates = np.where(mask, st.rebates, 0.0).sum(axis=1)
    ok = np.abs(surplus) > ATOL
    return rebates[ok] / surplus[ok]


def worst_case_ri(mechanism: Mechanism, params: MechanismParams, profiles,
                  scope: str = "confirmed") -> Optional[IndexEstimate]:
    """Infimum of the redistributed fraction over the probed profiles."""
    frac = redistribution_fractions(mechanism, params, profiles, scope)
    if frac.size == 0:
        return None
    return IndexEstimate(float(frac.min()), "worst-case", int(frac.size))


def average_ri(mechanism: Mechanism, params: MechanismParams, profiles,
               scope: str = "confirmed") -> Optional[IndexEstimate]:
    frac = redistribution_fractions(mechanism, params, profiles, scope)
    if frac.size == 0:
        return None
    mean, se = mean_and_se(frac)
    return IndexEstimate(mean, "average", int(frac.size), se, "monte-carlo")


def analytic_worst_case_ri(mechanism: Mechanism, params: MechanismParams) -> Optional[IndexEstimate]:
    """Closed forms where they are known; ``None`` otherwise."""
    from .mechanisms import R2TFRM, RTFRM, SecondPrice, RebateCoefficients
    if isinstance(mechanism, SecondPrice):
        return IndexEstimate(0.0, "worst-case", 0, method="analytic")
    if isinstance(mechanism, RTFRM):
        c = mechanism.coeffs or RebateCoefficients.optimal(params.n, params.k)
        if c == RebateCoefficients.optimal(params.n, params.k):
            scale = params.alpha if isinstance(mechanism, R2TFRM) else 1.0
            return IndexEstimate(scale * params.k / params.n, "worst-case", 0,
                                 method="analytic")
    return None


# -- resilient index -------------------------------------------------------

def _strategy_fraction(mechanism, params, profile, fakes):
    block, kept, _ = build_block(profile, params, fakes)
    st = mechanism.settle(np.array([block.bids]), params)
    g = slice(0, len(kept))
    conf = st.confirmed[0, g]
    received = float(np.where(conf, st.payments[0, g] + st.rebates[0, g], 0.0).sum())
    rebate = float(np.where(conf, st.rebates[0, g], 0.0).sum())
    return rebate, received


def realized_fractions(params: MechanismParams, profile: BidProfile,
                       fakes: Sequence[float], seeds: Iterable[int],
                       coeffs=None) -> np.ndarray:
    """Per-seed genuine-rebate fraction of R2-TFRM under one manipulation."""
    from .mechanisms import R2TFRM
    block, kept, _ = build_block(profile, params, fakes)
    # unit-alpha settlement gives the undrawn rebates
    full = R2TFRM(coeffs).settle(np.array([block.bids]),
                                 MechanismParams(params.n, params.k, 1.0))
    order = np.argsort(-np.array(block.bids), kind="stable")
    slot_of = np.empty(params.n, int)
    slot_of[order] = np.arange(params.n)
    g = len(kept)
    conf = full.confirmed[0, :g]
    price = float((full.payments[0] + full.rebates[0])[full.confirmed[0]].max())
    received = conf.sum() * price
    if received <= ATOL:
        return np.array([])
    slots = slot_of[:g][conf]
    reb = full.rebates[0, :g][conf]
    seeds = list(seeds)
    draws = np.array([RandomnessBeacon(s).draws(params.n, params.alpha) for s in seeds])
    return (draws[:, slots] * reb).sum(axis=1) / received


def resilient_rri(mechanism: Mechanism, params: MechanismParams,
                  profile: BidProfile, manipulation_set: Iterable[Sequence[float]],
                  seeds: Optional[Sequence[int]] = None,
                  coeffs=None) -> Optional[IndexEstimate]:
    """Infimum over manipulations of the genuine-rebate fraction.

    ``manipulation_set`` lists fake-bid vectors (each placed in the block
    after the top genuine bids). With ``seeds``, R2-TFRM fractions are
    Monte Carlo means over beacon draws and the estimate carries the
    standard error of the minimising manipulation.
    """
    best = None
    count = 0
    for fakes in manipulation_set:
        if seeds is not None:
            frac = realized_fractions(params, profile, fakes, seeds, coeffs)
            if frac.size == 0:
                continue
            mean, se = mean_and_se(frac)
            count += 1
            if best is None or mean < best[0]:
                best = (mean, se)
        else:
            rebate, received = _strategy_fraction(mechanism, params, profile, fakes)
            if abs(received) <= ATOL:
                continue
            count += 1
            val = rebate / received
            if best is None or val < best[0]:
                best = (val, None)
    if best is None:
        return None
    return IndexEstimate(best[0], "resilient-worst-case", count, best[1],
                         "monte-carlo" if seeds is not None else "probed")


# -- incentive checks ------------------------------------------------------

@dataclass
class RUICReport:
    passed: bool
    deviations_checked: int
    counterexample: Optional[dict] = None


def deviation_grid(profile: BidProfile, points: int = 1000) -> np.ndarray:
    """Uniform grid on [0, 2*max(bid, valuation)] plus every bid as a breakpoint."""
    vals = profile.valuations or ()
    top = max(max(profile.bids), max(vals, default=0.0))
    hi = 2.0 * top if top > 0 else 1.0
    grid = np.linspace(0.0, hi, points)
    return np.unique(np.concatenate([grid, np.array(profile.bids)]))


def check_ruic(mechanism: Mechanism, params: MechanismParams, profile: BidProfile,
               grid: Optional[np.ndarray] = None) -> RUICReport:
    """No included user gains from any unilateral deviation on the grid.

    Utilities are expected utilities for randomised mechanisms.
    """
    if profile.valuations is None:
        raise InvalidInput("RUIC check needs valuations")
    vals = np.array(profile.valuations)
    bids = np.array(profile.bids)
    truth = mechanism.settle(bids[None, :], params)
    base = truth.utilities(vals)[0]
    tol = ATOL * max(1.0, float(bids.max(initial=0.0)), float(vals.max(initial=0.0)))
    checked = 0
    for i in np.flatnonzero(truth.included[0]):
        dev = deviation_grid(profile) if grid is None else np.asarray(grid, float)
        rows = np.repeat(bids[None, :], dev.size, axis=0)
        rows[:, i] = dev
        util = mechanism.settle(rows, params).utilities(vals)[:, i]
        checked += dev.size
        gain = util - base[i]
        j = int(np.argmax(gain))
        if gain[j] > tol:
            return RUICReport(False, checked, {
                "user": int(i), "valuation": float(vals[i]),
                "deviation": float(dev[j]), "gain": float(gain[j]),
            })
    return RUICReport(True, checked)


def efficient_welfare(valuations: Sequence[float], k: int) -> float:
    """Best total valuation of any ``k`` transactions, by enumeration."""
    return max((sum(c) for c in itertools.combinations(valuations, k)), default=0.0)


@dataclass
class PropertyReport:
    results: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.results[name][0]

    def witness(self, name):
        return self.results[name][1]

    def to_dict(self) -> dict:
        return {k: {"holds": v[0], "value": v[1]} for k, v in self.results.items()}


def check_ir_and_budget(mechanism: Mechanism, params: MechanismParams,
                        profile: BidProfile) -> PropertyReport:
    """IR_u, IR_M, Approx-IR_M, WBB, SBB and AE on one profile.

    IR_u and AE are skipped (absent) without valuations. AE is checked by
    enumeration up to 12 users, by sorting beyond.
    """
    bids = np.array(profile.bids)
    st = mechanism.settle(bids[None, :], params)
    tol = ATOL * max(1.0, float(bids.max(initial=0.0)))
    revenue = float(st.payments[0].sum())
    total_rebate = float(st.rebates[0].sum())
    top = np.sort(bids)[::-1]
    cap = params.k * top[params.k - 1]
    rep = PropertyReport()
    if profile.valuations is not None:
        vals = np.array(profile.valuations)
        util = st.utilities(vals)[0][st.included[0]]
        rep.results["IR_u"] = (bool(util.min() >= -tol), float(util.min()))
        chosen = float(vals[st.confirmed[0]].sum())
        if len(vals) <= 12:
            best = efficient_welfare(vals, params.k)
        else:
            best = float(np.sort(vals)[::-1][:params.k].sum())
        rep.results["AE"] = (bool(chosen >= best - tol), chosen)
    rep.results["IR_M"] = (bool(revenue >= -tol), revenue)
    rep.results["Approx-IR_M"] = (bool(total_rebate <= cap + tol), total_rebate)
    rep.results["WBB"] = (bool(revenue >= -tol), revenue)
    rep.results["SBB"] = (bool(abs(revenue) <= tol), revenue)
    return rep


# -- closed forms and Monte Carlo studies ---------------------------------

def expected_miner_revenue(included_bids: Sequence[float], params: MechanismParams) -> float:
    """Honest R2-TFRM revenue in expectation: ``k*b[k] - alpha * total rebate``."""
    n, k = params.n, params.k
    return k * included_bids[k] - params.alpha * optimal_total_rebate(included_bids, n, k)


def plugin_alpha_bound(n: int) -> float:
    """Bound evaluated at the expected uniform order statistics, ``n/(n+1)``.

    ``E[b_(j)] = (n+1-j)/(n+1)`` for the j-th highest of ``n`` uniforms; the
    ``k`` dependence cancels.
    """
    return n / (n + 1)


def exact_mean_alpha_bound(n: int, k: int) -> float:
    """``E[alpha_bar]`` for ``n`` iid U[0,1] bids, by quadrature.

    The ratio ``R = b_(k+1)/b_(k)`` of consecutive order statistics is
    Beta(n-k, 1), so the mean is a one-dimensional integral.
    """
    a = n - k

    def integrand(r):
        return n * r / (k * r + (n - k)) * a * r ** (a - 1)

    val, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=1e-12)
    return val


def sample_alpha_bounds(n: int, k: int, trials: int, rng: np.random.Generator,
                        low: float = 0.0, high: float = 1.0,
                        chunk: int = 200_000) -> np.ndarray:
    out = []
    left = trials
    while left > 0:
        b = min(chunk, left)
        bids = rng.uniform(low, high, size=(b, n))
        bids = -np.sort(-bids, axis=1)
        out.append(alpha_upper_bound_batch(bids, n, k))
        left -= b
    return np.concatenate(out)
