"""Strategic-miner manipulations by fake-bid injection.

The miner builds the block itself: it keeps the top genuine transactions
and fills the remaining slots with fakes. Payments and rebates between the
miner and its own fakes cancel, so its utility is what genuine users pay
minus what it rebates to them. Within a block, ties rank genuine bids
ahead of fakes.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from math import comb
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import ATOL, BidProfile, InvalidInput, MechanismParams
from .mechanisms import (Mechanism, RandomnessBeacon, RebateCoefficients,
                         RTFRM)


class SearchBudgetExceeded(InvalidInput):
    def __init__(self, size: int, budget: int):
        super().__init__(f"search space of {size} strategies exceeds budget {budget}")
        self.size = size
        self.budget = budget


@dataclass(frozen=True)
class ManipulationReport:
    fake_bids: tuple[tuple[int, float], ...]
    displaced: tuple[int, ...]
    genuine_rebate_sum: float
    miner_payments_received: float
    miner_rebates_paid_to_genuine: float
    miner_utility: float
    realized_rri: Optional[float]

    def to_dict(self) -> dict:
        return {
            "fake_bids": [list(fb) for fb in self.fake_bids],
            "displaced": list(self.displaced),
            "genuine_rebate_sum": self.genuine_rebate_sum,
            "miner_payments_received": self.miner_payments_received,
            "miner_rebates_paid_to_genuine": self.miner_rebates_paid_to_genuine,
            "miner_utility": self.miner_utility,
            "realized_rri": self.realized_rri,
        }


def _mechanism(mech) -> Mechanism:
    if mech is None:
        return RTFRM()
    if isinstance(mech, RebateCoefficients):
        return RTFRM(mech)
    return mech


def build_block(profile: BidProfile, params: MechanismParams,
                fakes: Sequence[float]):
    """Block of the top ``n - len(fakes)`` genuine bids followed by the fakes.

    Returns ``(block_profile, kept, displaced)``; ``kept[j]`` is the original
    index of block entry ``j`` for the genuine part.
    """
    if len(fakes) > params.n:
        raise InvalidInput(f"{len(fakes)} fakes do not fit a block of {params.n}")
    order = sorted(range(len(profile)), key=lambda i: (-profile.bids[i], i))
    n_gen = params.n - len(fakes)
    if len(order) < n_gen:
        raise InvalidInput(f"need {n_gen} genuine bids, got {len(order)}")
    kept, displaced = order[:n_gen], order[n_gen:]
    block = BidProfile(tuple(profile.bids[i] for i in kept) + tuple(float(f) for f in fakes))
    return block, tuple(kept), tuple(sorted(displaced))


def evaluate_strategy(profile: BidProfile, params: MechanismParams,
                      fakes: Sequence[float], mechanism=None,
                      beacon: Optional[RandomnessBeacon] = None) -> ManipulationReport:
    """Settle the block built from ``fakes`` and account for the miner."""
    mech = _mechanism(mechanism)
    block, kept, displaced = build_block(profile, params, fakes)
    out = mech.outcome(block, params, beacon)
    n_gen = len(kept)
    confirmed = set(out.confirmed)
    received, rebate_conf, rebate_all = [], [], []
    fake_slots = []
    for slot, (j, pay, reb) in enumerate(zip(out.included, out.payments, out.rebates)):
        if j >= n_gen:
            fake_slots.append((slot, block.bids[j]))
            continue
        rebate_all.append(reb)
        if j in confirmed:
            received.append(pay + reb)
            rebate_conf.append(reb)
    # exactly rounded sums keep the accounting free of summation-order drift
    received, rebate_conf, rebate_all = (math.fsum(x) for x in (received, rebate_conf, rebate_all))
    return ManipulationReport(
        fake_bids=tuple(fake_slots),
        displaced=displaced,
        genuine_rebate_sum=rebate_conf,
        miner_payments_received=received,
        miner_rebates_paid_to_genuine=rebate_all,
        miner_utility=received - rebate_all,
        realized_rri=rebate_conf / received if abs(received) > ATOL else None,
    )


def impersonate_price_setters(profile: BidProfile, params: MechanismParams,
                              coeffs=None, low_fake: float = 0.0) -> ManipulationReport:
    """Fill every price-setting slot with fakes, the first one at ``b[k-1]``."""
    params.require_tfrm()
    top = sorted(profile.bids, reverse=True)
    if len(top) < params.k:
        raise InvalidInput(f"need at least k={params.k} bids")
    hi = top[params.k - 1]
    if low_fake > hi:
        raise InvalidInput("lower fakes must not exceed b_k")
    fakes = [hi] + [low_fake] * (params.n - params.k - 1)
    return evaluate_strategy(profile, params, fakes, _mechanism(coeffs))


def impersonate_confirmed(profile: BidProfile, params: MechanismParams,
                          coeffs=None, fake_high_bids: Sequence[float] = (),
                          impersonate_rest: bool = True,
                          beacon: Optional[RandomnessBeacon] = None) -> ManipulationReport:
    """Inject ``fake_high_bids`` into the mempool and let inclusion sort them in.

    With ``impersonate_rest`` (the default), once any fake makes the block
    the miner also takes over the price-setting slots still held by genuine
    users, bidding the price there, so no genuine user is left unconfirmed.
    """
    mech = _mechanism(coeffs)
    g = len(profile)
    pool = BidProfile(profile.bids + tuple(float(f) for f in fake_high_bids))
    order = sorted(range(len(pool)), key=lambda i: (-pool.bids[i], i))[:params.n]
    fakes = [pool.bids[i] for i in order if i >= g]
    genuine_in = [i for i in order if i < g]
    if fakes and impersonate_rest:
        price = pool.bids[order[params.k]]
        unconfirmed_genuine = [i for i in order[params.k:] if i < g]
        fakes += [price] * len(unconfirmed_genuine)
        genuine_in = [i for i in genuine_in if i not in unconfirmed_genuine]
    # the kept genuine set is exactly the top len(genuine_in) genuine bids
    assert len(genuine_in) == params.n - len(fakes)
    return evaluate_strategy(profile, params, fakes, mech, beacon)


def default_grid(profile: BidProfile) -> tuple[float, ...]:
    """Genuine values, midpoints between consecutive ones, 0 and twice the max."""
    vals = sorted(set(profile.bids))
    mids = [(a + b) / 2 for a, b in zip(vals, vals[1:])]
    top = max(vals) if vals else 0.0
    return tuple(sorted(set(vals) | set(mids) | {0.0, 2.0 * top}))


def search_size(n: int, grid_size: int) -> int:
    """Number of fake multisets of size 0..n drawn from the grid."""
    return sum(comb(grid_size + c - 1, c) for c in range(n + 1))


@dataclass
class SearchResult:
    best: ManipulationReport
    best_fakes: tuple[float, ...]
    evaluated: int
    rri_min: Optional[float]
    rri_max: Optional[float]
    rri_defined: int
    grid: tuple[float, ...] = field(default=())


def _block_matrix(profile: BidProfile, n: int, combos: np.ndarray):
    top = np.array(sorted(profile.bids, reverse=True)[:n - combos.shape[1]])
    gen = np.broadcast_to(top, (combos.shape[0], top.size))
    return np.hstack([gen, combos]), top.size


def search_optimal_manipulation(profile: BidProfile, params: MechanismParams,
                                mechanism=None, grid: Optional[Iterable[float]] = None,
                                budget: int = 2_000_000,
                                chunk: int = 200_000) -> SearchResult:
    """Exhaustive search over every multiset of fake bids from ``grid``.

    Strategies are encoded as ``(count, sorted fake values)``; among equal
    utilities the lexicographically smallest encoding wins. Every strategy
    with nonzero genuine payment contributes to the RRI range.
    """
    mech = _mechanism(mechanism)
    grid = tuple(sorted(set(float(x) for x in (default_grid(profile) if grid is None else grid))))
    n = params.n
    size = search_size(n, len(grid))
    if size > budget:
        raise SearchBudgetExceeded(size, budget)
    if len(profile) < n:
        raise InvalidInput(f"need at least n={n} bids")

    best_u, best_fakes = -np.inf, None
    rri_min, rri_max, defined = np.inf, -np.inf, 0
    gvals = np.array(grid)
    for count in range(n + 1):
        it = itertools.combinations_with_replacement(range(len(grid)), count)
        while True:
            idx = np.array(list(itertools.islice(it, chunk)), dtype=int)
            if idx.size == 0 and count > 0:
                break
            idx = idx.reshape(-1, count) if count else np.zeros((1, 0), int)
            blocks, n_gen = _block_matrix(profile, n, gvals[idx])
            st = mech.settle(blocks, params)
            gen = slice(0, n_gen)
            conf = st.confirmed[:, gen]
            reb = st.rebates[:, gen]
            received = np.where(conf, st.payments[:, gen] + reb, 0.0).sum(axis=1)
            reb_conf = np.where(conf, reb, 0.0).sum(axis=1)
            utility = received - reb.sum(axis=1)
            ok = np.abs(received) > ATOL
            if ok.any():
                frac = reb_conf[ok] / received[ok]
                rri_min = min(rri_min, frac.min())
                rri_max = max(rri_max, frac.max())
                defined += int(ok.sum())
            j = int(np.argmax(utility))
            if utility[j] > best_u + ATOL:
                best_u = utility[j]
                best_fakes = tuple(float(x) for x in gvals[idx[j]])
            if count == 0:
                break

    report = evaluate_strategy(profile, params, best_fakes, mech)
    return SearchResult(
        best=report, best_fakes=best_fakes, evaluated=size,
        rri_min=None if defined == 0 else float(rri_min),
        rri_max=None if defined == 0 else float(rri_max),
        rri_defined=defined, grid=grid,
    )
