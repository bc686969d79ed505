"""Domain types, bid handling and the second-price TFM baseline.

Transactions are unit-size. A block holds ``n`` transactions, of which the
top ``k`` are confirmed; the rest are price-setting. All mechanisms here are
pure functions of their inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

# Shared absolute tolerance for every floating-point equality in the package.
ATOL = 1e-9


class InvalidInput(ValueError):
    """Raised when a profile or parameter set violates a precondition."""


@dataclass(frozen=True)
class BidProfile:
    bids: tuple[float, ...]
    valuations: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        bids = tuple(float(b) for b in self.bids)
        if any(not np.isfinite(b) or b < 0 for b in bids):
            raise InvalidInput(f"bids must be finite and nonnegative: {bids}")
        object.__setattr__(self, "bids", bids)
        if self.valuations is not None:
            vals = tuple(float(v) for v in self.valuations)
            if len(vals) != len(bids):
                raise InvalidInput(
                    f"{len(vals)} valuations for {len(bids)} bids")
            if any(not np.isfinite(v) or v < 0 for v in vals):
                raise InvalidInput(f"valuations must be nonnegative: {vals}")
            object.__setattr__(self, "valuations", vals)

    @classmethod
    def truthful(cls, bids: Sequence[float]) -> "BidProfile":
        """Profile in which every user bids its valuation."""
        return cls(tuple(bids), tuple(bids))

    @classmethod
    def from_dict(cls, doc: dict) -> "BidProfile":
        if "bids" not in doc:
            raise InvalidInput("profile document needs a 'bids' field")
        vals = doc.get("valuations")
        return cls(tuple(doc["bids"]), None if vals is None else tuple(vals))

    @classmethod
    def from_json(cls, path: str | Path) -> "BidProfile":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        doc = {"bids": list(self.bids)}
        if self.valuations is not None:
            doc["valuations"] = list(self.valuations)
        return doc

    def __len__(self):
        return len(self.bids)

    def with_bid(self, i: int, bid: float) -> "BidProfile":
        bids = list(self.bids)
        bids[i] = bid
        return BidProfile(tuple(bids), self.valuations)


@dataclass(frozen=True)
class MechanismParams:
    n: int
    k: int
    alpha: float = 1.0

    def __post_init__(self):
        if self.n < 1 or self.k < 1:
            raise InvalidInput(f"n and k must be positive (n={self.n}, k={self.k})")
        if self.k > self.n:
            raise InvalidInput(f"k={self.k} exceeds block capacity n={self.n}")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidInput(f"alpha must lie in [0, 1], got {self.alpha}")

    def require_tfrm(self):
        """TFRM mechanisms need at least two price-setting slots."""
        if self.k > self.n - 2:
            raise InvalidInput(
                f"TFRM requires k <= n - 2 (n={self.n}, k={self.k})")


@dataclass(frozen=True)
class Outcome:
    """Settlement of one block.

    ``payments``, ``rebates`` and ``bids`` are aligned with ``included``,
    which lists original profile indices in non-increasing bid order.
    A negative payment is a net rebate to the user.
    """
    included: tuple[int, ...]
    confirmed: tuple[int, ...]
    payments: tuple[float, ...]
    rebates: tuple[float, ...]
    miner_revenue: float
    price: float = 0.0
    bids: tuple[float, ...] = field(default=())

    @property
    def total_rebate(self) -> float:
        return float(sum(self.rebates))

    @property
    def vcg_payment(self) -> float:
        """Total second-price payment collected from confirmed users."""
        return len(self.confirmed) * self.price

    def payment_of(self, i: int) -> float:
        """Payment of original index ``i``; zero when not included."""
        try:
            return self.payments[self.included.index(i)]
        except ValueError:
            return 0.0

    def rebate_of(self, i: int) -> float:
        try:
            return self.rebates[self.included.index(i)]
        except ValueError:
            return 0.0

    def to_dict(self) -> dict:
        return {
            "included": list(self.included),
            "confirmed": list(self.confirmed),
            "payments": list(self.payments),
            "rebates": list(self.rebates),
            "miner_revenue": self.miner_revenue,
            "price": self.price,
        }


def sort_and_include(profile: BidProfile, params: MechanismParams):
    """Return ``(included, mempool)`` index tuples.

    ``included`` holds the ``n`` largest bids in non-increasing order, ties
    broken by ascending original index; ``mempool`` is the rest, same order.
    """
    if len(profile) < params.n:
        raise InvalidInput(
            f"need at least n={params.n} bids, got {len(profile)}")
    order = sorted(range(len(profile)), key=lambda i: (-profile.bids[i], i))
    return tuple(order[:params.n]), tuple(order[params.n:])


def spa_tfm(profile: BidProfile, params: MechanismParams) -> Outcome:
    """Second-price TFM: each confirmed user pays the (k+1)-th highest bid."""
    if params.k > params.n - 1:
        raise InvalidInput(
            f"second-price TFM needs a price-setting bid (k={params.k}, n={params.n})")
    included, _ = sort_and_include(profile, params)
    bids = tuple(profile.bids[i] for i in included)
    price = bids[params.k]
    payments = tuple(price if pos < params.k else 0.0
                     for pos in range(params.n))
    return Outcome(
        included=included,
        confirmed=included[:params.k],
        payments=payments,
        rebates=(0.0,) * params.n,
        miner_revenue=params.k * price,
        price=price,
        bids=bids,
    )


def user_utilities(outcome: Outcome, profile: BidProfile) -> list[float]:
    """Quasi-linear utility of every user in ``profile``.

    Confirmed users get valuation minus payment, included but unconfirmed
    users get minus their (negative) payment, everyone else gets zero.
    """
    if profile.valuations is None:
        raise InvalidInput("utilities need valuations")
    utils = [0.0] * len(profile)
    confirmed = set(outcome.confirmed)
    for i, pay in zip(outcome.included, outcome.payments):
        utils[i] = (profile.valuations[i] if i in confirmed else 0.0) - pay
    return utils


def is_feasible(outcome: Outcome, params: MechanismParams) -> bool:
    return (len(outcome.included) <= params.n
            and len(outcome.confirmed) <= params.k
            and set(outcome.confirmed) <= set(outcome.included))
