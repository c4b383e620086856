"""Monte Carlo comparison of portfolio allocation against a single winner.

One trial draws true rates for every ad, simulates a learning history,
forms posteriors under an estimated prior, and then allocates the session's
ad calls for every q on the grid. Revenues are reported as fractions of the
ideal (full-information) expected revenue m * max_i S_i b_i.

Every random draw comes from a stream keyed by (master_seed, trial, ad,
phase), so results do not depend on execution order or worker count.
"""

from __future__ import annotations

import enum
import functools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import AdSpec, LearningRecord, MarketProblem, PosteriorSummary, PriceType, PriorSpec
from .posterior import QuadratureConfig, posterior_beta, posterior_grid, sample_rate, simulate_learning
from .qp import DEFAULT_Q_GRID, SolverConfig, SolverFailure, round_allocation, solve_qmap
from .variance import build_problem

log = logging.getLogger(__name__)

PHASE_RATE = 0
PHASE_LEARNING = 1
MAX_FAILURE_FRACTION = 0.001


class PriorRegime(str, enum.Enum):
    UNIFORM = "uniform"
    APPROXIMATE = "approximate"
    EXACT = "exact"


@dataclass(frozen=True)
class ExperimentConfig:
    n_cpc: int = 10
    n_cpa: int = 10
    cpc_bid: float = 1.0
    cpa_bid: float = 10.0
    cpc_prior: PriorSpec = field(default_factory=lambda: PriorSpec.truncated_gaussian(0.001, 0.0001))
    cpa_prior: PriorSpec = field(default_factory=lambda: PriorSpec.truncated_gaussian(0.0001, 0.00001))
    learning_calls: int = 100_000
    m: int = 10_000
    prior_regime: PriorRegime = PriorRegime.UNIFORM
    q_grid: tuple = DEFAULT_Q_GRID
    trials: int = 10_000
    master_seed: int = 0
    # (mu, sigma) behind the approximate prior; None means the actual prior's moments
    approx_cpc: Optional[tuple] = None
    approx_cpa: Optional[tuple] = None
    quadrature: QuadratureConfig = QuadratureConfig()
    solver: SolverConfig = SolverConfig()

    def __post_init__(self):
        object.__setattr__(self, "prior_regime", PriorRegime(self.prior_regime))
        object.__setattr__(self, "q_grid", tuple(float(q) for q in self.q_grid))
        for name in ("n_cpc", "n_cpa", "learning_calls", "m", "trials"):
            val = getattr(self, name)
            if int(val) != val or val < 0:
                raise ValueError(f"{name} must be a nonnegative integer, got {val}")
        if self.n_cpc + self.n_cpa < 1:
            raise ValueError("need at least one ad")
        for name in ("learning_calls", "m", "trials"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not (self.cpc_bid > 0 and self.cpa_bid > 0):
            raise ValueError("bids must be > 0")
        if not self.q_grid:
            raise ValueError("q_grid is empty")
        if any(q < 0 for q in self.q_grid) or list(self.q_grid) != sorted(self.q_grid):
            raise ValueError("q_grid must be nonnegative and sorted ascending")

    @property
    def n(self) -> int:
        return self.n_cpc + self.n_cpa

    def ads(self) -> list:
        out = [AdSpec(f"cpc-{i}", self.cpc_bid, PriceType.CPC) for i in range(self.n_cpc)]
        out += [AdSpec(f"cpa-{i}", self.cpa_bid, PriceType.CPA) for i in range(self.n_cpa)]
        return out

    def actual_priors(self) -> list:
        return [self.cpc_prior] * self.n_cpc + [self.cpa_prior] * self.n_cpa

    def estimated_priors(self) -> list:
        """Prior used for estimation, per ad."""
        if self.prior_regime is PriorRegime.UNIFORM:
            return [PriorSpec.uniform01()] * self.n
        if self.prior_regime is PriorRegime.EXACT:
            return self.actual_priors()
        cpc = approximate_prior(self.cpc_prior, self.approx_cpc)
        cpa = approximate_prior(self.cpa_prior, self.approx_cpa)
        return [cpc] * self.n_cpc + [cpa] * self.n_cpa

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cpc_prior"] = self.cpc_prior.to_dict()
        d["cpa_prior"] = self.cpa_prior.to_dict()
        d["prior_regime"] = self.prior_regime.value
        d["q_grid"] = list(self.q_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        for key in ("cpc_prior", "cpa_prior"):
            if key in d:
                d[key] = PriorSpec.from_dict(d[key])
        for key in ("approx_cpc", "approx_cpa"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        if "q_grid" in d:
            d["q_grid"] = tuple(d["q_grid"])
        if "quadrature" in d:
            d["quadrature"] = QuadratureConfig(**d["quadrature"])
        if "solver" in d:
            d["solver"] = SolverConfig(**d["solver"])
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment config keys: {sorted(unknown)}")
        return cls(**d)


@functools.lru_cache(maxsize=64)
def approximate_prior(actual: PriorSpec, moments: Optional[tuple] = None) -> PriorSpec:
    """Uniform over mean +/- 4 sd of ``actual``, clipped to [0, 1]."""
    mu, sigma = moments if moments is not None else (actual.mean(), actual.std())
    lo = max(0.0, mu - 4.0 * sigma)
    hi = min(1.0, mu + 4.0 * sigma)
    return PriorSpec.truncated_uniform(lo, hi)


def stream(master_seed: int, trial: int, ad: int, phase: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(trial, ad, phase))
    return np.random.default_rng(seq)


@dataclass(frozen=True)
class TrialResult:
    trial_index: int
    q_grid: tuple
    est_revenue: np.ndarray
    portfolio_actual: np.ndarray
    single_winner: int
    single_winner_est: float
    single_winner_actual: float
    ideal: float
    rates: np.ndarray
    records: tuple
    posteriors: tuple
    counts: Optional[np.ndarray] = None


def single_winner(posteriors: Sequence[PosteriorSummary], ads: Sequence[AdSpec]) -> int:
    """Index of the ad with the largest bid * posterior mean; lowest index on ties."""
    if not ads:
        raise ValueError("no ads")
    scores = [ad.bid * p.s_mean for ad, p in zip(ads, posteriors)]
    return int(np.argmax(scores))


def _estimate(prior: PriorSpec, record: LearningRecord, cfg: ExperimentConfig) -> PosteriorSummary:
    if cfg.prior_regime is PriorRegime.UNIFORM:
        return posterior_beta(record)
    return posterior_grid(prior, record, cfg.quadrature)


def run_trial(cfg: ExperimentConfig, trial_index: int, keep_counts: bool = False) -> TrialResult:
    ads = cfg.ads()
    actual = cfg.actual_priors()
    estimated = cfg.estimated_priors()
    seed = cfg.master_seed

    rates = np.array([sample_rate(p, stream(seed, trial_index, i, PHASE_RATE)) for i, p in enumerate(actual)])
    records = tuple(
        simulate_learning(s, cfg.learning_calls, stream(seed, trial_index, i, PHASE_LEARNING))
        for i, s in enumerate(rates)
    )
    posts = tuple(_estimate(pr, rec, cfg) for pr, rec in zip(estimated, records))

    problem = build_problem(MarketProblem(ads, cfg.m, posts))
    bids = np.array([ad.bid for ad in ads])
    true_rev = rates * bids  # per-call actual expected revenue

    nq = len(cfg.q_grid)
    est = np.empty(nq)
    act = np.empty(nq)
    all_counts = np.empty((nq, len(ads)), dtype=np.int64) if keep_counts else None
    w_prev = None
    for j, q in enumerate(cfg.q_grid):
        sol = solve_qmap(problem, q, cfg.solver, w0=w_prev)
        if not sol.converged:
            raise SolverFailure(f"trial {trial_index}, q={q}: QMAP did not converge (gap {sol.gap:g})")
        w_prev = sol.weights
        k = round_allocation(sol.weights, cfg.m)
        est[j] = float(problem.c_vector @ k)
        act[j] = float(true_rev @ k)
        if keep_counts:
            all_counts[j] = k

    winner = single_winner(posts, ads)
    return TrialResult(
        trial_index=trial_index,
        q_grid=cfg.q_grid,
        est_revenue=est,
        portfolio_actual=act,
        single_winner=winner,
        single_winner_est=cfg.m * float(problem.c_vector[winner]),
        single_winner_actual=cfg.m * float(true_rev[winner]),
        ideal=cfg.m * float(true_rev.max()),
        rates=rates,
        records=records,
        posteriors=posts,
        counts=all_counts,
    )


@dataclass(frozen=True)
class ExperimentResult:
    """Per-q averages over trials, as fractions of ideal revenue.

    The headline ``*_frac`` fields average each trial's own fraction;
    ``*_pooled`` fields divide the mean revenue by the mean ideal. ``*_se``
    are standard errors of the per-trial means.
    """

    q_grid: tuple
    trials: int
    failed_trials: tuple
    est_rev_frac: np.ndarray
    est_rev_se: np.ndarray
    portfolio_actual_frac: np.ndarray
    portfolio_actual_se: np.ndarray
    # portfolio minus single winner, per trial, then averaged
    advantage_frac: np.ndarray
    advantage_se: np.ndarray
    single_winner_est_frac: float
    single_winner_actual_frac: float
    single_winner_actual_se: float
    est_rev_pooled: np.ndarray
    portfolio_actual_pooled: np.ndarray
    single_winner_actual_pooled: float
    config: dict
    aggregation: str = "mean of per-trial fractions of ideal"


def _mean_se(x: np.ndarray, axis=0):
    mean = x.mean(axis=axis)
    n = x.shape[axis]
    se = x.std(axis=axis, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


def _run_trials(args):
    cfg, indices = args
    out = []
    for i in indices:
        try:
            out.append(run_trial(cfg, i))
        except (SolverFailure, ValueError) as exc:
            out.append((i, str(exc)))
    return out


def aggregate(cfg: ExperimentConfig, results: Sequence) -> ExperimentResult:
    good = sorted((r for r in results if isinstance(r, TrialResult)), key=lambda r: r.trial_index)
    failed = tuple(sorted(r for r in results if not isinstance(r, TrialResult)))
    if not good:
        raise SolverFailure(f"every trial failed; first error: {failed[0][1] if failed else 'none'}")
    ideal = np.array([r.ideal for r in good])
    est = np.stack([r.est_revenue for r in good])
    act = np.stack([r.portfolio_actual for r in good])
    sw_est = np.array([r.single_winner_est for r in good])
    sw_act = np.array([r.single_winner_actual for r in good])

    est_f, est_se = _mean_se(est / ideal[:, None])
    act_f, act_se = _mean_se(act / ideal[:, None])
    adv_f, adv_se = _mean_se((act - sw_act[:, None]) / ideal[:, None])
    sw_f, sw_se = _mean_se(sw_act / ideal)
    mean_ideal = ideal.mean()
    return ExperimentResult(
        q_grid=cfg.q_grid,
        trials=len(good),
        failed_trials=failed,
        est_rev_frac=est_f,
        est_rev_se=est_se,
        portfolio_actual_frac=act_f,
        portfolio_actual_se=act_se,
        advantage_frac=adv_f,
        advantage_se=adv_se,
        single_winner_est_frac=float((sw_est / ideal).mean()),
        single_winner_actual_frac=float(sw_f),
        single_winner_actual_se=float(sw_se),
        est_rev_pooled=est.mean(axis=0) / mean_ideal,
        portfolio_actual_pooled=act.mean(axis=0) / mean_ideal,
        single_winner_actual_pooled=float(sw_act.mean() / mean_ideal),
        config=cfg.to_dict(),
    )


def run_experiment(cfg: ExperimentConfig, parallel: int = 1, chunk: Optional[int] = None) -> ExperimentResult:
    """Run ``cfg.trials`` trials and average them.

    ``parallel`` worker processes never change the result. The run fails
    when more than 0.1% of trials fail.
    """
    indices = list(range(cfg.trials))
    if parallel <= 1:
        results = _run_trials((cfg, indices))
    else:
        if chunk is None:
            chunk = max(1, math.ceil(cfg.trials / (4 * parallel)))
        batches = [indices[i:i + chunk] for i in range(0, len(indices), chunk)]
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = [r for part in pool.map(_run_trials, [(cfg, b) for b in batches]) for r in part]
    failed = [r for r in results if not isinstance(r, TrialResult)]
    if failed:
        log.warning("%d of %d trials failed; first: %s", len(failed), cfg.trials, failed[0][1])
    if len(failed) > MAX_FAILURE_FRACTION * cfg.trials:
        raise SolverFailure(f"{len(failed)} of {cfg.trials} trials failed; first: trial {failed[0][0]}: {failed[0][1]}")
    return aggregate(cfg, results)
