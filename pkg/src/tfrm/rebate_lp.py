"""The rebate-coefficient linear program.

The bid-wise program asks, for every sorted bid vector, that the lowest
included user gets a nonnegative rebate, that total rebates stay below
``k * b[k-1]`` and that confirmed users get back at least ``f`` of their
second-price payments. Its bid-free reduction has variables
``f, c_k .. c_{n-1}``; its unique optimum is ``f = c_k = k/n``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import simplex
from .core import ATOL, BidProfile, InvalidInput, MechanismParams
from .mechanisms import RebateCoefficients


class LPInconsistency(RuntimeError):
    """The reduced program should always be feasible and bounded."""


@dataclass(frozen=True)
class ReducedLP:
    n: int
    k: int
    variables: tuple[str, ...]
    A: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    labels: tuple[str, ...] = ()

    @property
    def objective(self) -> np.ndarray:
        c = np.zeros(len(self.variables))
        c[0] = 1.0
        return c

    @property
    def constraint_count(self) -> int:
        return self.A.shape[0]

    def to_dict(self) -> dict:
        return {
            "n": self.n, "k": self.k,
            "variables": list(self.variables),
            "A": self.A.tolist(), "b": self.b.tolist(),
            "labels": list(self.labels),
        }


def build_reduced_lp(params: MechanismParams) -> ReducedLP:
    """Bid-free system over ``x = (f, c_k, ..., c_{n-1})``, all rows ``A x <= b``."""
    params.require_tfrm()
    n, k = params.n, params.k
    nv = 1 + n - k
    rows, rhs, labels = [], [], []

    def c_col(j):
        return 1 + j - k

    # partial sums c_k + ... + c_i >= f
    for i in range(k, n):
        row = np.zeros(nv)
        row[0] = 1.0
        row[c_col(k):c_col(i) + 1] = -1.0
        rows.append(row); rhs.append(0.0); labels.append(f"fraction[{i}]")

    row = np.zeros(nv)
    row[c_col(k)] = n - k
    rows.append(row); rhs.append(k); labels.append("approx_ir_m[first]")

    row = np.zeros(nv)
    row[c_col(k):] = n
    rows.append(row); rhs.append(k); labels.append("approx_ir_m[total]")

    for i in range(1, n - k):
        row = np.zeros(nv)
        row[c_col(k):c_col(k + i - 1) + 1] = n
        row[c_col(k + i)] += n - k - i
        rows.append(row); rhs.append(k); labels.append(f"approx_ir_m[{i}]")

    names = ("f",) + tuple(f"c{j}" for j in range(k, n))
    return ReducedLP(n, k, names, np.array(rows), np.array(rhs, float),
                     tuple(labels))


def solve_lp(lp: ReducedLP) -> RebateCoefficients:
    try:
        res = simplex.solve(lp.objective, lp.A, lp.b,
                            free=np.ones(len(lp.variables), bool))
    except simplex.LPError as exc:
        raise LPInconsistency(
            f"reduced LP for n={lp.n}, k={lp.k} failed: {exc}") from exc
    c = np.zeros(lp.n)
    c[lp.k:] = res.x[1:]
    return RebateCoefficients(tuple(c), res.x[0])


def matches_closed_form(coeffs: RebateCoefficients, n: int, k: int,
                        tol: float = ATOL) -> bool:
    ref = RebateCoefficients.optimal(n, k)
    return (abs(coeffs.f - ref.f) <= tol
            and all(abs(a - b) <= tol for a, b in zip(coeffs.c, ref.c)))


def solution_to_json(coeffs: RebateCoefficients, params: MechanismParams) -> str:
    return json.dumps({"n": params.n, "k": params.k, "f": coeffs.f,
                       "c": list(coeffs.c)}, sort_keys=True)


def solution_from_json(text: str) -> tuple[MechanismParams, RebateCoefficients]:
    doc = json.loads(text)
    return MechanismParams(doc["n"], doc["k"]), RebateCoefficients(doc["c"], doc["f"])


# -- bid-wise program -------------------------------------------------------

def rebate_rows(sorted_bids: Sequence[float]) -> np.ndarray:
    """``R`` with ``rebates = R @ c`` for one sorted block (``c`` has length n)."""
    v = np.asarray(sorted_bids, dtype=float)
    n = v.size
    R = np.zeros((n, n))
    R[:, 0] = 1.0
    for p in range(n):
        others = np.delete(v, p)
        R[p, 1:] = others
    return R


def build_bidwise_lp(params: MechanismParams,
                     profiles: Iterable[Sequence[float]]):
    """Bid-wise constraints on ``x = (f, c_0, ..., c_{n-1})`` for finitely many profiles.

    Returns ``(A, b)`` with rows ``A x <= b``.
    """
    n, k = params.n, params.k
    A, b = [], []
    for prof in profiles:
        v = np.asarray(prof, dtype=float)
        if v.size != n:
            raise InvalidInput(f"profile of length {v.size}, expected {n}")
        R = rebate_rows(v)
        # lowest user's rebate >= 0
        A.append(np.concatenate([[0.0], -R[-1]])); b.append(0.0)
        # total rebate <= k * b_k
        A.append(np.concatenate([[0.0], R.sum(axis=0)])); b.append(k * v[k - 1])
        # confirmed rebates >= f * k * b_{k+1}
        A.append(np.concatenate([[k * v[k]], -R[:k].sum(axis=0)])); b.append(0.0)
    return np.array(A), np.array(b)


def zero_head_probes(n: int) -> list[tuple[float, ...]]:
    """Probe blocks ``(1,..,1,0,..,0)`` with ``j`` leading ones, ``j = 0..n``."""
    return [tuple([1.0] * j + [0.0] * (n - j)) for j in range(n + 1)]


def coefficient_range(params: MechanismParams, profiles, j: int) -> tuple[float, float]:
    """Min and max of ``c_j`` over the bid-wise feasible set of ``profiles``."""
    A, b = build_bidwise_lp(params, profiles)
    obj = np.zeros(A.shape[1])
    obj[1 + j] = 1.0
    free = np.ones(A.shape[1], bool)
    hi = simplex.solve(obj, A, b, free=free).objective
    lo = -simplex.solve(-obj, A, b, free=free).objective
    return lo, hi


@dataclass
class BidwiseReport:
    checked: int
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_bidwise_constraints(coeffs: RebateCoefficients, params: MechanismParams,
                               profiles, max_witnesses: int = 20) -> BidwiseReport:
    """Check IR_u, Approx-IR_M and the worst-case fraction on every profile.

    ``profiles`` is an array (or iterable) of sorted, nonnegative blocks.
    Violations carry ``(constraint, profile, slack)`` with slack < 0.
    """
    n, k = params.n, params.k
    S = np.atleast_2d(np.asarray(list(profiles) if not isinstance(profiles, np.ndarray)
                                 else profiles, dtype=float))
    if S.shape[1] != n:
        raise InvalidInput(f"profiles must have {n} columns")
    if np.any(S < 0) or np.any(np.diff(S, axis=1) > 0):
        raise InvalidInput("profiles must be sorted non-increasing and nonnegative")
    reb = coeffs.c[0] + S @ coeffs.weight_matrix()
    tol = ATOL * np.maximum(1.0, S.max(axis=1))
    slacks = {
        "ir_u": reb[:, -1],
        "approx_ir_m": k * S[:, k - 1] - reb.sum(axis=1),
        "worst_case_fraction": reb[:, :k].sum(axis=1) - coeffs.f * k * S[:, k],
    }
    report = BidwiseReport(checked=S.shape[0])
    for name, slack in slacks.items():
        for idx in np.flatnonzero(slack < -tol):
            if len(report.violations) >= max_witnesses:
                break
            report.violations.append((name, tuple(S[idx]), float(slack[idx])))
    return report


def is_tail_only(coeffs: RebateCoefficients, k: int) -> bool:
    return all(abs(cj) <= ATOL for cj in coeffs.c[:k + 1])


def theorem3_witness(coeffs: RebateCoefficients, profile: BidProfile,
                     params: MechanismParams):
    """Price-setter manipulation that starves a tail-only rebate.

    The miner keeps the top ``k`` genuine bids, fakes the first
    price-setting slot at ``b[k-1]`` and the rest at zero. Every confirmed
    rebate then multiplies a zero bid, while payments rise to ``k*b[k-1]``.
    """
    from .adversary import evaluate_strategy
    from .mechanisms import RTFRM

    params.require_tfrm()
    if coeffs.n != params.n:
        raise InvalidInput(f"{coeffs.n} coefficients for n={params.n}")
    if not is_tail_only(coeffs, params.k):
        raise InvalidInput(
            "coefficients are not tail-only: c_0..c_k must vanish for a "
            "rebate that is IR for both users and miner")
    genuine = sorted(profile.bids, reverse=True)
    fakes = [genuine[params.k - 1]] + [0.0] * (params.n - params.k - 1)
    return evaluate_strategy(profile, params, fakes, RTFRM(coeffs))
