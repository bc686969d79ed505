"""Transaction fee redistribution mechanisms.

A TFRM includes the top ``n`` bids, confirms the top ``k`` at the
second price ``b[k]`` (0-based) and hands every included user a rebate
that depends only on the other included bids. With a linear rebate the
rebate of the user at sorted position ``p`` is

    c0 + sum_j c[j] * (j-th highest bid among the other n - 1)

R2-TFRM grants each rebate independently with probability ``alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .core import (ATOL, BidProfile, InvalidInput, MechanismParams, Outcome,
                   sort_and_include, spa_tfm)


@dataclass(frozen=True)
class RebateCoefficients:
    """Linear rebate constants ``c[0..n-1]`` and the redistributed fraction ``f``."""
    c: tuple[float, ...]
    f: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "c", tuple(float(x) for x in self.c))
        object.__setattr__(self, "f", float(self.f))

    @classmethod
    def optimal(cls, n: int, k: int) -> "RebateCoefficients":
        """Worst-case optimal R-TFRM rebate: only ``c[k] = k/n`` is nonzero."""
        MechanismParams(n, k).require_tfrm()
        c = [0.0] * n
        c[k] = k / n
        return cls(tuple(c), k / n)

    @classmethod
    def zero(cls, n: int) -> "RebateCoefficients":
        return cls((0.0,) * n, 0.0)

    @property
    def n(self) -> int:
        return len(self.c)

    def weight_matrix(self) -> np.ndarray:
        """``W`` with ``rebates = c0 + sorted_bids @ W`` for a full block.

        ``W[q, p]`` is the weight of the bid at sorted position ``q`` in the
        rebate of the user at sorted position ``p``.
        """
        n = self.n
        w = np.zeros((n, n))
        for p in range(n):
            for q in range(n):
                if q < p:
                    w[q, p] = self.c[q + 1]
                elif q > p:
                    w[q, p] = self.c[q]
        return w

    def to_dict(self) -> dict:
        return {"c": list(self.c), "f": self.f}


def _check_sorted(bids: Sequence[float]):
    if any(bids[j] < bids[j + 1] for j in range(len(bids) - 1)):
        raise InvalidInput(f"bids must be sorted non-increasing: {tuple(bids)}")


def evaluate_rebate(coeffs: RebateCoefficients, included_bids: Sequence[float],
                    i: int) -> float:
    """Rebate of the user at sorted position ``i`` of a full block."""
    n = len(included_bids)
    if coeffs.n != n:
        raise InvalidInput(f"{coeffs.n} coefficients for a block of {n}")
    if not 0 <= i < n:
        raise InvalidInput(f"position {i} outside block of {n}")
    _check_sorted(included_bids)
    others = list(included_bids[:i]) + list(included_bids[i + 1:])
    return coeffs.c[0] + sum(cj * b for cj, b in zip(coeffs.c[1:], others))


@dataclass(frozen=True)
class RandomnessBeacon:
    """Seeded stand-in for trusted on-chain randomness.

    Draw ``i`` is Bernoulli(alpha) and independent of every other draw; the
    sequence is fixed by the seed alone, so nothing the miner does after bids
    are fixed can move it.
    """
    seed: int

    def uniforms(self, count: int) -> np.ndarray:
        return np.random.default_rng(self.seed).random(count)

    def draws(self, count: int, alpha: float) -> np.ndarray:
        return self.uniforms(count) < alpha

    def draw(self, i: int, alpha: float) -> bool:
        return bool(self.draws(i + 1, alpha)[i])


def _linear_outcome(profile: BidProfile, params: MechanismParams,
                    coeffs: RebateCoefficients,
                    granted: Optional[Sequence[bool]] = None,
                    scale: float = 1.0) -> Outcome:
    params.require_tfrm()
    if coeffs.n != params.n:
        raise InvalidInput(f"{coeffs.n} coefficients for n={params.n}")
    included, _ = sort_and_include(profile, params)
    bids = tuple(profile.bids[i] for i in included)
    price = bids[params.k]
    rebates = []
    for pos in range(params.n):
        r = evaluate_rebate(coeffs, bids, pos) * scale
        if granted is not None and not granted[pos]:
            r = 0.0
        rebates.append(r)
    payments = tuple((price if pos < params.k else 0.0) - r
                     for pos, r in enumerate(rebates))
    return Outcome(
        included=included,
        confirmed=included[:params.k],
        payments=payments,
        rebates=tuple(rebates),
        miner_revenue=float(sum(payments)),
        price=price,
        bids=bids,
    )


def r_tfrm(profile: BidProfile, params: MechanismParams,
           coeffs: Optional[RebateCoefficients] = None) -> Outcome:
    """Deterministic TFRM; defaults to the worst-case optimal coefficients."""
    if coeffs is None:
        params.require_tfrm()
        coeffs = RebateCoefficients.optimal(params.n, params.k)
    return _linear_outcome(profile, params, coeffs)


def r2_tfrm(profile: BidProfile, params: MechanismParams,
            coeffs: Optional[RebateCoefficients],
            beacon: RandomnessBeacon) -> Outcome:
    """R-TFRM where slot ``i`` keeps its rebate iff ``beacon.draw(i)``."""
    params.require_tfrm()
    if coeffs is None:
        coeffs = RebateCoefficients.optimal(params.n, params.k)
    granted = beacon.draws(params.n, params.alpha)
    return _linear_outcome(profile, params, coeffs, granted=granted)


def r2_tfrm_expected(profile: BidProfile, params: MechanismParams,
                     coeffs: Optional[RebateCoefficients] = None) -> Outcome:
    """Expected R2-TFRM settlement: every rebate scaled by ``alpha``."""
    params.require_tfrm()
    if coeffs is None:
        coeffs = RebateCoefficients.optimal(params.n, params.k)
    return _linear_outcome(profile, params, coeffs, scale=params.alpha)


def optimal_total_rebate(included_bids: Sequence[float], n: int, k: int) -> float:
    """Closed-form total R-TFRM rebate, ``(k/n) * (k*b[k] + (n-k)*b[k-1])``."""
    return (k / n) * (k * included_bids[k] + (n - k) * included_bids[k - 1])


class AlphaBound(NamedTuple):
    value: float
    degenerate: bool


def alpha_upper_bound(included_bids: Sequence[float],
                      params: MechanismParams) -> AlphaBound:
    """Largest rebate probability keeping an honest miner's expected revenue >= 0.

    Equals ``n*b[k] / (k*b[k] + (n-k)*b[k-1])``. With a zero price-setting
    bid the bound is degenerate: 1 when no rebate can flow (``b[k-1] = 0``
    too), 0 otherwise.
    """
    params.require_tfrm()
    _check_sorted(included_bids)
    n, k = params.n, params.k
    hi, lo = included_bids[k - 1], included_bids[k]
    if lo <= 0.0:
        return AlphaBound(1.0 if hi <= 0.0 else 0.0, True)
    # at most 1 since lo <= hi; clamp rounding overshoot
    return AlphaBound(min(1.0, n * lo / (k * lo + (n - k) * hi)), False)


def alpha_upper_bound_batch(sorted_bids: np.ndarray, n: int, k: int) -> np.ndarray:
    """Vectorised bound over rows of sorted blocks; degenerate rows follow the scalar rule."""
    hi, lo = sorted_bids[:, k - 1], sorted_bids[:, k]
    denom = k * lo + (n - k) * hi
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(lo > 0, n * lo / denom, np.where(hi > 0, 0.0, 1.0))
    return np.minimum(out, 1.0)


# -- batched settlement, used by the property checkers ----------------------

@dataclass(frozen=True)
class Settlement:
    """Per-user arrays of shape ``(batch, m)`` in original index order.

    Payments and rebates are expectations for randomised mechanisms.
    """
    included: np.ndarray
    confirmed: np.ndarray
    payments: np.ndarray
    rebates: np.ndarray

    def utilities(self, valuations: np.ndarray) -> np.ndarray:
        return np.where(self.confirmed, valuations, 0.0) - self.payments


def _settle_batch(bids: np.ndarray, n: int, k: int,
                  coeffs: Optional[RebateCoefficients],
                  scale: float = 1.0) -> Settlement:
    bids = np.atleast_2d(np.asarray(bids, dtype=float))
    batch, m = bids.shape
    if m < n:
        raise InvalidInput(f"need at least n={n} bids, got {m}")
    order = np.argsort(-bids, axis=1, kind="stable")[:, :n]
    top = np.take_along_axis(bids, order, axis=1)
    price = top[:, k]
    if coeffs is None:
        reb = np.zeros_like(top)
    else:
        reb = (coeffs.c[0] + top @ coeffs.weight_matrix()) * scale
    pay = -reb
    pay[:, :k] += price[:, None]

    def scatter(values, fill):
        out = np.full((batch, m), fill, dtype=np.asarray(values).dtype)
        np.put_along_axis(out, order, values, axis=1)
        return out

    slot = np.arange(n)
    return Settlement(
        included=scatter(np.ones((batch, n), bool), False),
        confirmed=scatter(np.broadcast_to(slot < k, (batch, n)), False),
        payments=scatter(pay, 0.0),
        rebates=scatter(reb, 0.0),
    )


class Mechanism:
    """Common surface for the property checkers.

    ``outcome`` settles one profile; ``settle`` settles a batch of bid
    vectors and reports expected payments.
    """
    name = "mechanism"
    randomized = False

    def outcome(self, profile: BidProfile, params: MechanismParams,
                beacon: Optional[RandomnessBeacon] = None) -> Outcome:
        raise NotImplementedError

    def settle(self, bids: np.ndarray, params: MechanismParams) -> Settlement:
        raise NotImplementedError

    def __call__(self, profile, params, beacon=None):
        return self.outcome(profile, params, beacon)


class SecondPrice(Mechanism):
    name = "spa"

    def outcome(self, profile, params, beacon=None):
        return spa_tfm(profile, params)

    def settle(self, bids, params):
        if params.k > params.n - 1:
            raise InvalidInput("second-price TFM needs k <= n - 1")
        return _settle_batch(bids, params.n, params.k, None)


class RTFRM(Mechanism):
    name = "r-tfrm"

    def __init__(self, coeffs: Optional[RebateCoefficients] = None):
        self.coeffs = coeffs

    def _coeffs(self, params):
        return self.coeffs or RebateCoefficients.optimal(params.n, params.k)

    def outcome(self, profile, params, beacon=None):
        return r_tfrm(profile, params, self._coeffs(params))

    def settle(self, bids, params):
        params.require_tfrm()
        return _settle_batch(bids, params.n, params.k, self._coeffs(params))


class R2TFRM(RTFRM):
    """Randomised rebates; ``settle`` reports the closed-form expectation over the beacon."""
    name = "r2-tfrm"
    randomized = True

    def outcome(self, profile, params, beacon=None):
        if beacon is None:
            return r2_tfrm_expected(profile, params, self._coeffs(params))
        return r2_tfrm(profile, params, self._coeffs(params), beacon)

    def settle(self, bids, params):
        params.require_tfrm()
        return _settle_batch(bids, params.n, params.k, self._coeffs(params),
                             scale=params.alpha)


MECHANISMS = {"spa": SecondPrice, "r-tfrm": RTFRM, "r2-tfrm": R2TFRM}


# -- Ideal-TFRM impossibility ----------------------------------------------

RebateTable = Callable[[tuple[float, ...]], float]


@dataclass(frozen=True)
class IdealWitness:
    """Profile on which the lowest, unconfirmed slot faces exactly the other
    bids that earned confirmed user ``source`` its positive rebate."""
    profile: tuple[float, ...]
    source: int
    rebate: float
    witness_rebate: float


def ideal_tfrm_witness(g: RebateTable, profile: BidProfile,
                       params: MechanismParams) -> Optional[IdealWitness]:
    """Constructively break the zero-rebate-for-unconfirmed constraint.

    If confirmed user ``i`` receives ``g(v_-i) > 0``, the block
    ``v_-i + (v[n-1],)`` puts a new user in the last slot whose other bids are
    exactly ``v_-i``; by anonymity that unconfirmed user receives the same
    positive rebate. Returns ``None`` when no confirmed user has a positive
    rebate.
    """
    if params.k > params.n - 1:
        raise InvalidInput("need at least one unconfirmed slot")
    included, _ = sort_and_include(profile, params)
    v = tuple(profile.bids[i] for i in included)
    for i in range(params.k):
        others = v[:i] + v[i + 1:]
        r = g(others)
        if r > ATOL:
            witness = others + (v[-1],)
            last_others = witness[:-1]
            return IdealWitness(witness, i, r, g(last_others))
    return None


def ideal_tfrm(profile: BidProfile, params: MechanismParams,
               g: RebateTable) -> Outcome:
    """Ideal-TFRM with rebate table ``g``, constraint enforced.

    Unconfirmed users receive nothing, and a confirmed rebate survives only
    if the block ``others + (v[n-1],)`` would not pay its unconfirmed last
    slot. That slot faces ``others`` too, so every positive rebate is voided.
    """
    included, _ = sort_and_include(profile, params)
    v = tuple(profile.bids[i] for i in included)
    price = v[params.k]
    rebates = []
    for pos in range(params.n):
        r = 0.0
        if pos < params.k:
            others = v[:pos] + v[pos + 1:]
            witness = others + (v[-1],)
            if g(witness[:-1]) <= ATOL:
                r = max(g(others), 0.0)
        rebates.append(r)
    payments = tuple((price if pos < params.k else 0.0) - r
                     for pos, r in enumerate(rebates))
    return Outcome(included, included[:params.k], payments, tuple(rebates),
                   float(sum(payments)), price, v)
