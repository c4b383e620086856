"""Command line front end: ``adfolio allocate|simulate|variance|frontier``.

Exit codes: 0 ok, 1 bad input or config, 2 infeasible variance bound,
3 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .formats import FormatError, csv_text, fmt, load_experiment, load_market, now_iso, write_csv, write_manifest
from .qp import DEFAULT_Q_GRID, InfeasibleBound, SolverConfig, SolverFailure, make_allocation, solve_map, solve_qmap, trace_frontier
from .simulator import ExperimentConfig, PriorRegime, run_experiment
from .variance import ApproxForm, SingleAdInputs, allocation_variance, build_problem, expected_revenue, single_ad_variance_approx

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_SOLVER = 0, 1, 2, 3
SEED_ENV = "ADFOLIO_SEED"
MONOTONE_TOL = 1e-6

log = logging.getLogger("adfolio")


class UsageError(ValueError):
    pass


def _seed(args) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError as exc:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from exc


def _say(args, text: str) -> None:
    if not args.quiet:
        print(text)


def _parse_q_grid(text: str) -> tuple:
    try:
        grid = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise UsageError(f"bad --q-grid {text!r}") from exc
    if not grid:
        raise UsageError("--q-grid is empty")
    return grid


# -- allocate --------------------------------------------------------------


def cmd_allocate(args) -> int:
    started = now_iso()
    market = load_market(args.market)
    problem = build_problem(market)
    if (args.q is None) == (args.d is None):
        raise UsageError("give exactly one of --q or --d")
    if args.q is not None:
        if args.q < 0:
            raise UsageError("--q must be >= 0")
        sol = solve_qmap(problem, args.q)
        if not sol.converged:
            raise SolverFailure(f"QMAP did not converge (gap {sol.gap:g} after {sol.iterations} iterations)")
        weights = sol.weights
    else:
        weights = solve_map(problem, args.d)
    alloc = make_allocation(weights, market.m)
    vb = allocation_variance(problem, alloc)
    rev = expected_revenue(problem, alloc)

    out = Path(args.out)
    rows = [
        (ad.id, ad.price_type.value, ad.bid, w, int(k))
        for ad, w, k in zip(market.ads, alloc.weights, alloc.counts)
    ]
    csv_path = write_csv(out / "allocation.csv", ["ad_id", "price_type", "bid", "weight", "count"], rows)
    summary = write_csv(
        out / "allocation_summary.csv",
        ["m", "q", "d", "expected_revenue", "uncertainty", "randomness", "total_variance"],
        [(market.m, args.q if args.q is not None else "", args.d if args.d is not None else "",
          rev, vb.uncertainty, vb.randomness, vb.total)],
    )
    write_manifest(
        out / "allocate_manifest.json", "allocate",
        {"market": str(args.market), "q": args.q, "d": args.d}, _seed(args), started, [csv_path, summary],
    )
    lines = [f"{'ad':<12} {'weight':>14} {'count':>8}"]
    lines += [f"{ad.id:<12} {fmt(w):>14} {int(k):>8}" for ad, w, k in zip(market.ads, alloc.weights, alloc.counts)]
    lines += [
        f"expected revenue  {fmt(rev)}",
        f"uncertainty       {fmt(vb.uncertainty)}",
        f"randomness        {fmt(vb.randomness)}",
        f"total variance    {fmt(vb.total)}",
    ]
    _say(args, "\n".join(lines))
    return EXIT_OK


# -- frontier --------------------------------------------------------------


def cmd_frontier(args) -> int:
    started = now_iso()
    market = load_market(args.market)
    problem = build_problem(market)
    grid = _parse_q_grid(args.q_grid) if args.q_grid else DEFAULT_Q_GRID
    if list(grid) != sorted(grid) or min(grid) < 0:
        raise UsageError("--q-grid must be nonnegative and ascending")
    points = trace_frontier(problem, grid, SolverConfig())

    for prev, cur in zip(points, points[1:]):
        for name in ("est_revenue", "est_variance"):
            a, b = getattr(prev, name), getattr(cur, name)
            if b < a - MONOTONE_TOL * (1.0 + abs(a)):
                print(f"warning: {name} decreases between q={prev.q:g} and q={cur.q:g}", file=sys.stderr)

    header = ["q", "est_revenue", "est_variance"] + [f"w_{ad.id}" for ad in market.ads]
    rows = [(p.q, p.est_revenue, p.est_variance, *p.weights) for p in points]
    out = Path(args.out)
    path = write_csv(out / "frontier.csv", header, rows)
    write_manifest(out / "frontier_manifest.json", "frontier",
                   {"market": str(args.market), "q_grid": list(grid)}, _seed(args), started, [path])
    if not args.quiet:
        sys.stdout.write(csv_text(header, rows))
    return EXIT_OK


# -- variance --------------------------------------------------------------


def cmd_variance(args) -> int:
    started = now_iso()
    form = ApproxForm(args.form)
    if args.p is None:
        raise UsageError("--p is required")
    inp = SingleAdInputs(k=args.k, p=args.p, bid=args.bid, sigma=args.sigma, c_comp=args.c_comp, v=args.v)
    unc, rnd, total = single_ad_variance_approx(inp, form)
    if form is ApproxForm.LEARNING:
        ratio = args.k / args.v
    else:
        # U/R = k sigma^2 / (p (1-p)) for both raw and competitive forms
        ratio = args.k * args.sigma**2 / (args.p * (1.0 - args.p)) if 0 < args.p < 1 else float("nan")
    share = unc / total if total > 0 else 0.0
    out = Path(args.out)
    path = write_csv(out / "variance.csv", ["form", "uncertainty", "randomness", "total", "ratio", "uncertainty_share"],
                     [(form.value, unc, rnd, total, ratio, share)])
    write_manifest(out / "variance_manifest.json", "variance", vars_config(args), _seed(args), started, [path])
    _say(args, "\n".join([
        f"uncertainty        {fmt(unc)}",
        f"randomness         {fmt(rnd)}",
        f"total              {fmt(total)}",
        f"ratio (unc:rnd)    {fmt(ratio)}",
        f"uncertainty share  {fmt(share)}",
    ]))
    return EXIT_OK


def vars_config(args) -> dict:
    keys = ("form", "k", "bid", "p", "sigma", "v", "c_comp")
    return {k: getattr(args, k) for k in keys}


# -- simulate --------------------------------------------------------------

SIM_HEADER = ["q", "est_rev_frac", "portfolio_actual_frac", "single_winner_actual_frac", "trials"]
DETAIL_HEADER = [
    "q", "est_rev_frac", "est_rev_se", "portfolio_actual_frac", "portfolio_actual_se",
    "advantage_frac", "advantage_se", "single_winner_est_frac", "single_winner_actual_frac",
    "single_winner_actual_se", "est_rev_pooled", "portfolio_actual_pooled", "single_winner_actual_pooled", "trials",
]


def simulation_rows(res):
    return [
        (q, e, a, res.single_winner_actual_frac, res.trials)
        for q, e, a in zip(res.q_grid, res.est_rev_frac, res.portfolio_actual_frac)
    ]


def detail_rows(res):
    return [
        (q, res.est_rev_frac[j], res.est_rev_se[j], res.portfolio_actual_frac[j], res.portfolio_actual_se[j],
         res.advantage_frac[j], res.advantage_se[j], res.single_winner_est_frac, res.single_winner_actual_frac,
         res.single_winner_actual_se, res.est_rev_pooled[j], res.portfolio_actual_pooled[j],
         res.single_winner_actual_pooled, res.trials)
        for j, q in enumerate(res.q_grid)
    ]


def cmd_simulate(args) -> int:
    started = now_iso()
    cfg = load_experiment(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.trials is not None:
        overrides["trials"] = args.trials
    seed = _seed(args)
    if seed is not None:
        overrides["master_seed"] = seed
    if args.m is not None:
        overrides["m"] = args.m
    if args.q_grid:
        overrides["q_grid"] = _parse_q_grid(args.q_grid)
    cfg = replace(cfg, **overrides)
    regimes = list(PriorRegime) if args.regime == "all" else [PriorRegime(args.regime or cfg.prior_regime)]

    out = Path(args.out)
    outputs, configs = [], []
    for regime in regimes:
        rcfg = replace(cfg, prior_regime=regime)
        res = run_experiment(rcfg, parallel=args.parallel)
        outputs.append(write_csv(out / f"simulate_{regime.value}.csv", SIM_HEADER, simulation_rows(res)))
        outputs.append(write_csv(out / f"simulate_{regime.value}_detail.csv", DETAIL_HEADER, detail_rows(res)))
        configs.append(rcfg.to_dict())
        best = int(np.argmax(res.portfolio_actual_frac))
        _say(args, (
            f"[{regime.value}] trials={res.trials} single-winner actual/ideal={fmt(res.single_winner_actual_frac)} "
            f"best portfolio actual/ideal={fmt(res.portfolio_actual_frac[best])} at q={fmt(res.q_grid[best])}"
        ))
    write_manifest(out / "simulate_manifest.json", "simulate",
                   {"experiments": configs, "parallel": args.parallel,
                    "aggregation": "mean of per-trial fractions of ideal"},
                   cfg.master_seed, started, outputs)
    return EXIT_OK


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"master seed (falls back to ${SEED_ENV})")
    common.add_argument("--out", default=".", help="output directory (default: current directory)")
    common.add_argument("--parallel", type=int, default=1, help="worker processes for simulate")
    common.add_argument("--quiet", action="store_true", help="suppress the human-readable report")

    parser = argparse.ArgumentParser(prog="adfolio", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("allocate", parents=[common], help="allocate one market by QMAP (--q) or MAP (--d)")
    p.add_argument("market", help="market JSON file")
    p.add_argument("--q", type=float, default=None, help="revenue weight for QMAP")
    p.add_argument("--d", type=float, default=None, help="variance cap (money^2, m-call scale) for MAP")
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("frontier", parents=[common], help="trace estimated revenue/variance over a q grid")
    p.add_argument("market", help="market JSON file")
    p.add_argument("--q-grid", default=None, help="comma-separated q values (default: the 70-point grid)")
    p.set_defaults(func=cmd_frontier)

    p = sub.add_parser("variance", parents=[common], help="single-ad uncertainty/randomness approximation")
    p.add_argument("--form", choices=[f.value for f in ApproxForm], default="raw")
    p.add_argument("--k", type=float, required=True, help="ad calls allocated to the ad")
    p.add_argument("--p", type=float, default=None, help="response rate")
    p.add_argument("--bid", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None, help="sd of the rate estimate")
    p.add_argument("--v", type=float, default=None, help="learning ad calls")
    p.add_argument("--c-comp", dest="c_comp", type=float, default=None,
                   help="expected revenue per call needed to be competitive")
    p.set_defaults(func=cmd_variance)

    p = sub.add_parser("simulate", parents=[common], help="portfolio vs single-winner experiment")
    p.add_argument("config", nargs="?", default=None, help="experiment JSON (default: the 20-ad setup)")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--regime", choices=[r.value for r in PriorRegime] + ["all"], default=None)
    p.add_argument("--m", type=int, default=None, help="session ad calls")
    p.add_argument("--q-grid", default=None, help="comma-separated q values")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; 2 is reserved for infeasible bounds
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        if args.parallel < 1:
            raise UsageError("--parallel must be >= 1")
        return args.func(args)
    except InfeasibleBound as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (FormatError, UsageError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
