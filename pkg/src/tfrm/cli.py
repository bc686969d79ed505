"""Experiment runner.

    tfrm run        --config cfg.json [--out rows.csv --format csv --seed 7]
    tfrm solve-lp   --n 5 --k 3
    tfrm attack     --config cfg.json --strategy price-setters|confirmed|search
    tfrm montecarlo --config cfg.json --study rri|alpha-bound|avg-ri|irm-boundary
    tfrm check      --config cfg.json

Exit status: 0 success, 2 usage error, 1 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .adversary import (SearchBudgetExceeded, impersonate_confirmed,
                        impersonate_price_setters, search_optimal_manipulation)
from .core import ATOL, BidProfile, InvalidInput, MechanismParams, is_feasible
from .mechanisms import (MECHANISMS, R2TFRM, RandomnessBeacon,
                         alpha_upper_bound, optimal_total_rebate)
from .metrics import (check_ir_and_budget, check_ruic, exact_mean_alpha_bound,
                      mean_and_se, plugin_alpha_bound, realized_fractions,
                      sample_alpha_bounds, within_sigma, worst_case_ri)
from .rebate_lp import build_reduced_lp, matches_closed_form, solve_lp

USAGE, VIOLATION = 2, 1

RUN_COLUMNS = ["trial", "mechanism", "n", "k", "alpha", "bids", "payments",
               "rebates", "miner_revenue", "total_rebate", "identity_residual"]
ATTACK_COLUMNS = ["trial", "strategy", "fake_bids", "displaced", "genuine_rebate_sum",
                  "miner_payments_received", "miner_rebates_paid_to_genuine",
                  "miner_utility", "realized_rri"]


class UsageError(Exception):
    pass


@dataclass
class ExperimentConfig:
    mechanism: str = "r-tfrm"
    n: int = 5
    k: int = 3
    alpha: float = 1.0
    distribution: dict = field(default_factory=lambda: {"type": "uniform", "low": 0.0, "high": 1.0})
    m: Optional[int] = None
    trials: int = 1
    seed: int = 0
    fakes: list = field(default_factory=list)
    output: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise UsageError(f"unknown config field(s): {', '.join(sorted(unknown))}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    def validate(self):
        if self.mechanism not in MECHANISMS:
            raise UsageError(f"mechanism: expected one of {sorted(MECHANISMS)}")
        if not isinstance(self.trials, int) or self.trials < 1:
            raise UsageError("trials: must be an integer >= 1")
        try:
            params = self.params
        except InvalidInput as exc:
            raise UsageError(f"n/k/alpha: {exc}") from exc
        if self.mechanism != "spa" and params.k > params.n - 2:
            raise UsageError("k: TFRM mechanisms need k <= n - 2")
        if self.mechanism == "spa" and params.k > params.n - 1:
            raise UsageError("k: second-price TFM needs k <= n - 1")
        if self.m is not None and self.m < self.n:
            raise UsageError("m: mempool must hold at least n bids")
        d = self.distribution
        kind = d.get("type")
        if kind == "uniform":
            if not d.get("low", 0.0) < d.get("high", 1.0) or d.get("low", 0.0) < 0:
                raise UsageError("distribution: uniform needs 0 <= low < high")
        elif kind == "normal":
            if d.get("std", 1.0) <= 0:
                raise UsageError("distribution: normal needs std > 0")
        elif kind == "file":
            if "path" not in d and "bids" not in d:
                raise UsageError("distribution: file needs 'path' or inline 'bids'")
        else:
            raise UsageError("distribution: type must be uniform, normal or file")

    @property
    def params(self) -> MechanismParams:
        return MechanismParams(self.n, self.k, self.alpha)

    def mechanism_obj(self):
        return MECHANISMS[self.mechanism]()


def load_config(path: Optional[str], overrides: dict) -> ExperimentConfig:
    doc = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"config: {exc}") from exc
    doc.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig.from_dict(doc)
    except TypeError as exc:
        raise UsageError(f"config: {exc}") from exc


class ProfileSource:
    """Deterministic bid profiles, one per trial index."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.size = cfg.m or cfg.n
        d = cfg.distribution
        self.fixed = None
        if d["type"] == "file":
            prof = (BidProfile.from_dict(d) if "bids" in d
                    else BidProfile.from_json(d["path"]))
            if len(prof) < cfg.n:
                raise UsageError(f"distribution: file profile has fewer than n={cfg.n} bids")
            self.fixed = prof

    def rng(self, trial: int) -> np.random.Generator:
        return np.random.default_rng([self.cfg.seed, trial])

    def beacon(self, trial: int) -> RandomnessBeacon:
        seed = int(np.random.SeedSequence([self.cfg.seed, trial, 1]).generate_state(1, np.uint64)[0])
        return RandomnessBeacon(seed)

    def profile(self, trial: int) -> BidProfile:
        if self.fixed is not None:
            return self.fixed
        d, rng = self.cfg.distribution, self.rng(trial)
        if d["type"] == "uniform":
            bids = rng.uniform(d.get("low", 0.0), d.get("high", 1.0), self.size)
        else:
            bids = np.maximum(rng.normal(d.get("mean", 0.0), d.get("std", 1.0), self.size), 0.0)
        return BidProfile.truthful(tuple(float(b) for b in bids))


def _fmt(values) -> str:
    return ";".join(repr(float(v)) for v in values)


def _cell(value):
    if isinstance(value, (list, tuple)):
        return _fmt(value)
    return "" if value is None else value


def _write(rows: list[dict], columns: list[str], out: Optional[str], fmt: str,
           summary: Optional[dict] = None):
    if fmt == "json":
        text = json.dumps({"rows": rows, "summary": summary}, indent=2, sort_keys=True) + "\n"
    else:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: _cell(r.get(c, "")) for c in columns})
        if summary:
            buf.write("# " + json.dumps(summary, sort_keys=True) + "\n")
        text = buf.getvalue()
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(cfg: ExperimentConfig, out, fmt) -> int:
    src = ProfileSource(cfg)
    mech, params = cfg.mechanism_obj(), cfg.params
    rows, bad = [], 0
    for t in range(cfg.trials):
        prof = src.profile(t)
        beacon = src.beacon(t) if isinstance(mech, R2TFRM) else None
        o = mech.outcome(prof, params, beacon)
        residual = None
        if cfg.mechanism == "r-tfrm":
            residual = abs(o.total_rebate - optimal_total_rebate(o.bids, params.n, params.k))
            bad += residual >= ATOL * max(1.0, max(o.bids))
        bad += not is_feasible(o, params)
        rows.append({
            "trial": t, "mechanism": cfg.mechanism, "n": params.n, "k": params.k,
            "alpha": params.alpha, "bids": list(o.bids), "payments": list(o.payments),
            "rebates": list(o.rebates), "miner_revenue": o.miner_revenue,
            "total_rebate": o.total_rebate, "identity_residual": residual,
        })
    _write(rows, RUN_COLUMNS, out, fmt)
    return VIOLATION if bad else 0


def cmd_solve_lp(n: int, k: int, out, fmt) -> int:
    try:
        params = MechanismParams(n, k)
        params.require_tfrm()
    except InvalidInput as exc:
        raise UsageError(str(exc)) from exc
    lp = build_reduced_lp(params)
    coeffs = solve_lp(lp)
    ok = matches_closed_form(coeffs, n, k)
    row = {"n": n, "k": k, "f": coeffs.f, "closed_form": k / n,
           "c": list(coeffs.c), "constraints": lp.constraint_count, "match": ok}
    cols = ["n", "k", "f", "closed_form", "c", "constraints", "match"]
    _write([row], cols, out, fmt)
    if not ok:
        print(f"error: LP optimum f={coeffs.f!r} differs from k/n={k / n!r}", file=sys.stderr)
        return VIOLATION
    return 0


def cmd_attack(cfg: ExperimentConfig, strategy: str, out, fmt, budget: int) -> int:
    src = ProfileSource(cfg)
    params, mech = cfg.params, cfg.mechanism_obj()
    rows, rris = [], []
    for t in range(cfg.trials):
        prof = src.profile(t)
        if strategy == "price-setters":
            rep = impersonate_price_setters(prof, params, mech)
        elif strategy == "confirmed":
            rep = impersonate_confirmed(prof, params, mech, cfg.fakes)
        else:
            try:
                rep = search_optimal_manipulation(prof, params, mech, budget=budget).best
            except SearchBudgetExceeded as exc:
                print(f"error: {exc}", file=sys.stderr)
                return USAGE
        d = rep.to_dict()
        d["fake_bids"] = ";".join(f"{s}:{v!r}" for s, v in rep.fake_bids)
        d["displaced"] = ";".join(str(i) for i in rep.displaced)
        rows.append({"trial": t, "strategy": strategy, **d})
        if rep.realized_rri is not None:
            rris.append(rep.realized_rri)
    summary = {"trials": cfg.trials,
               "rri_min": min(rris) if rris else None,
               "rri_mean": float(np.mean(rris)) if rris else None}
    _write(rows, ATTACK_COLUMNS, out, fmt, summary)
    return 0


def _study_samples(cfg: ExperimentConfig, study: str):
    """Returns (samples, target) for a Monte Carlo study."""
    params, src = cfg.params, ProfileSource(cfg)
    n, k = params.n, params.k
    if study == "alpha-bound":
        d = cfg.distribution
        if d["type"] == "uniform" and src.fixed is None and src.size == n:
            return (sample_alpha_bounds(n, k, cfg.trials, src.rng(0), d.get("low", 0.0),
                                        d.get("high", 1.0)),
                    plugin_alpha_bound(n))
        vals = []
        for t in range(cfg.trials):
            top = sorted(src.profile(t).bids, reverse=True)[:n]
            vals.append(alpha_upper_bound(top, params).value)
        return np.array(vals), plugin_alpha_bound(n)
    mech = cfg.mechanism_obj()
    scale = {"spa": 0.0, "r-tfrm": 1.0, "r2-tfrm": params.alpha}[cfg.mechanism]
    if study == "avg-ri":
        profiles = np.array([src.profile(t).bids for t in range(cfg.trials)])
        from .metrics import redistribution_fractions
        return redistribution_fractions(mech, params, profiles), scale * k / n
    if study == "rri":
        if cfg.mechanism == "spa":
            return np.zeros(cfg.trials), 0.0
        vals = []
        run_params = params if cfg.mechanism == "r2-tfrm" else MechanismParams(n, k, 1.0)
        for t in range(cfg.trials):
            prof = src.profile(t)
            top = sorted(prof.bids, reverse=True)
            fakes = [top[k - 1]] + [0.0] * (n - k - 1)
            frac = realized_fractions(run_params, prof, fakes,
                                      [src.beacon(t).seed])
            if frac.size:
                vals.append(frac[0])
        return np.array(vals), scale * k / n
    if study == "irm-boundary":
        vals = []
        for t in range(cfg.trials):
            prof = src.profile(t)
            top = tuple(sorted(prof.bids, reverse=True)[:n])
            bound = alpha_upper_bound(top, params).value
            o = R2TFRM().outcome(prof, MechanismParams(n, k, bound), src.beacon(t))
            vals.append(o.miner_revenue)
        return np.array(vals), 0.0
    raise UsageError(f"unknown study {study}")


def cmd_montecarlo(cfg: ExperimentConfig, study: str, out, fmt) -> int:
    samples, target = _study_samples(cfg, study)
    mean, se = mean_and_se(samples)
    ok = within_sigma(mean, se, target)
    summary = {"study": study, "mechanism": cfg.mechanism, "n": cfg.n, "k": cfg.k,
               "alpha": cfg.alpha, "trials": int(samples.size), "mean": mean,
               "standard_error": se, "target": target, "pass_3sigma": ok}
    if study == "alpha-bound" and cfg.distribution.get("type") == "uniform" \
            and cfg.distribution.get("low", 0.0) == 0.0 and (cfg.m or cfg.n) == cfg.n:
        summary["exact_mean"] = exact_mean_alpha_bound(cfg.n, cfg.k)
    cols = list(summary)
    _write([summary], cols, out, fmt)
    return 0


def cmd_check(cfg: ExperimentConfig, out, fmt) -> int:
    src = ProfileSource(cfg)
    mech, params = cfg.mechanism_obj(), cfg.params
    rows, bad = [], 0
    for t in range(cfg.trials):
        prof = src.profile(t)
        if prof.valuations is None:
            prof = BidProfile.truthful(prof.bids)
        ruic = check_ruic(mech, params, prof)
        props = check_ir_and_budget(mech, params, prof)
        bad += (not ruic.passed) + (not props["IR_u"]) + (not props["AE"])
        rows.append({"trial": t, "RUIC": ruic.passed,
                     **{name: props[name] for name in props.results}})
    profiles = np.array([src.profile(t).bids for t in range(cfg.trials)])
    wc = worst_case_ri(mech, params, profiles)
    summary = {"worst_case_ri": None if wc is None else wc.value,
               "violations": int(bad)}
    cols = ["trial", "RUIC", "IR_u", "AE", "IR_M", "Approx-IR_M", "WBB", "SBB"]
    _write(rows, cols, out, fmt, summary)
    return VIOLATION if bad else 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config")
    common.add_argument("--out")
    common.add_argument("--format", choices=["csv", "json"], default=None)
    common.add_argument("--seed", type=int)

    parser = argparse.ArgumentParser(prog="tfrm", description="Transaction fee redistribution experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common])
    lp = sub.add_parser("solve-lp", parents=[common])
    lp.add_argument("--n", type=int, required=True)
    lp.add_argument("--k", type=int, required=True)
    at = sub.add_parser("attack", parents=[common])
    at.add_argument("--strategy", choices=["price-setters", "confirmed", "search"],
                    default="price-setters")
    at.add_argument("--budget", type=int, default=2_000_000)
    mc = sub.add_parser("montecarlo", parents=[common])
    mc.add_argument("--study", choices=["rri", "alpha-bound", "avg-ri", "irm-boundary"],
                    required=True)
    sub.add_parser("check", parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "solve-lp":
            return cmd_solve_lp(args.n, args.k, args.out, args.format or "csv")
        cfg = load_config(args.config, {"seed": args.seed})
        fmt = args.format or cfg.output.get("format", "csv")
        out = args.out or cfg.output.get("path")
        if args.command == "run":
            return cmd_run(cfg, out, fmt)
        if args.command == "attack":
            return cmd_attack(cfg, args.strategy, out, fmt, args.budget)
        if args.command == "montecarlo":
            return cmd_montecarlo(cfg, args.study, out, fmt)
        return cmd_check(cfg, out, fmt)
    except (UsageError, InvalidInput) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
