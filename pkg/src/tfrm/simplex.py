"""Dense two-phase tableau simplex with Bland's rule.

Solves ``maximize c @ x  s.t.  A @ x <= b`` where each variable is either
nonnegative or free. Free variables are split into positive and negative
parts. Problem sizes here stay below a few hundred columns.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

EPS = 1e-11


class LPError(RuntimeError):
    pass


class Infeasible(LPError):
    pass


class Unbounded(LPError):
    pass


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    pivots: int


def _pivot(tab: np.ndarray, row: int, col: int):
    tab[row] /= tab[row, col]
    colvals = tab[:, col].copy()
    colvals[row] = 0.0
    tab -= np.outer(colvals, tab[row])


def _run(tab: np.ndarray, basis: np.ndarray, ncols: int, max_pivots: int) -> int:
    """Optimise the tableau in place; the last row holds reduced costs
    (positive entry = improving column), the last column the rhs."""
    pivots = 0
    while True:
        cost = tab[-1, :ncols]
        candidates = np.flatnonzero(cost > EPS)
        if candidates.size == 0:
            return pivots
        col = candidates[0]
        column = tab[:-1, col]
        rows = np.flatnonzero(column > EPS)
        if rows.size == 0:
            raise Unbounded(f"column {col} is unbounded")
        ratios = tab[rows, -1] / column[rows]
        best = ratios.min()
        tied = rows[ratios <= best + EPS * max(1.0, abs(best))]
        row = tied[np.argmin(basis[tied])]
        _pivot(tab, row, col)
        basis[row] = col
        pivots += 1
        if pivots > max_pivots:
            raise LPError("pivot limit exceeded")


def solve(c: Sequence[float], A: np.ndarray, b: Sequence[float],
          free: Optional[Sequence[bool]] = None,
          max_pivots: int = 100_000) -> LPResult:
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    m, nvar = A.shape
    free = np.zeros(nvar, bool) if free is None else np.asarray(free, bool)

    # columns: x (split free vars), slacks, artificials
    neg = np.flatnonzero(free)
    A_ext = np.hstack([A, -A[:, neg]])
    c_ext = np.concatenate([c, -c[neg]])
    nx = A_ext.shape[1]

    sign = np.where(b < 0, -1.0, 1.0)
    art_rows = np.flatnonzero(b < 0)
    na = art_rows.size
    ncols = nx + m + na
    tab = np.zeros((m + 1, ncols + 1))
    tab[:m, :nx] = A_ext * sign[:, None]
    tab[:m, nx:nx + m] = np.diag(sign)
    tab[:m, -1] = b * sign
    basis = nx + np.arange(m)
    for j, r in enumerate(art_rows):
        tab[r, nx + m + j] = 1.0
        basis[r] = nx + m + j

    pivots = 0
    if na:
        # phase 1: maximise minus the sum of artificials
        tab[-1, :] = tab[art_rows].sum(axis=0)
        tab[-1, nx + m:ncols] = 0.0
        pivots += _run(tab, basis, ncols, max_pivots)
        if tab[-1, -1] > 1e-8:
            raise Infeasible(f"phase 1 residual {tab[-1, -1]:.3g}")
        # drive remaining artificials out of the basis
        for r in np.flatnonzero(basis >= nx + m):
            nz = np.flatnonzero(np.abs(tab[r, :nx + m]) > EPS)
            if nz.size:
                _pivot(tab, r, nz[0])
                basis[r] = nz[0]
        tab[:, nx + m:ncols] = 0.0

    tab[-1, :] = 0.0
    tab[-1, :nx] = c_ext
    for r, j in enumerate(basis):
        if j < nx and c_ext[j] != 0.0:
            tab[-1] -= c_ext[j] * tab[r]
    pivots += _run(tab, basis, nx + m, max_pivots)

    sol = np.zeros(ncols)
    sol[basis] = tab[:m, -1]
    x = sol[:nvar].copy()
    x[neg] -= sol[nvar:nx]
    return LPResult(x=x, objective=float(c @ x), pivots=pivots)
