"""Transaction fee redistribution mechanisms and their analysis tools."""

from .core import (ATOL, BidProfile, InvalidInput, MechanismParams, Outcome,
                   sort_and_include, spa_tfm, user_utilities)
from .mechanisms import (R2TFRM, RTFRM, RandomnessBeacon, RebateCoefficients,
                         SecondPrice, alpha_upper_bound, evaluate_rebate,
                         ideal_tfrm_witness, r2_tfrm, r_tfrm)
from .rebate_lp import build_reduced_lp, solve_lp
from .adversary import (ManipulationReport, impersonate_confirmed,
                        impersonate_price_setters, search_optimal_manipulation)

__all__ = [
    "ATOL", "BidProfile", "InvalidInput", "MechanismParams", "Outcome",
    "sort_and_include", "spa_tfm", "user_utilities",
    "R2TFRM", "RTFRM", "RandomnessBeacon", "RebateCoefficients", "SecondPrice",
    "alpha_upper_bound", "evaluate_rebate", "ideal_tfrm_witness", "r2_tfrm", "r_tfrm",
    "build_reduced_lp", "solve_lp",
    "ManipulationReport", "impersonate_confirmed", "impersonate_price_setters",
    "search_optimal_manipulation",
]
