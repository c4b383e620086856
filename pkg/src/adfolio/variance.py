"""Revenue mean and variance of allocations, and the single-ad analyses.

Each ad pays its bid with probability S on every call it serves, so

    E[X | S] = bid * S            Var[X | S] = bid**2 * S * (1 - S)

and the variance of total revenue under integer counts k splits into an
uncertainty part k'Ak (the rate is drawn once per ad) and a randomness
part b'k (coin flips per call).
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .model import (
    AdSpec,
    Allocation,
    AllocationProblem,
    MarketProblem,
    MarketValidationError,
    VarianceBreakdown,
    validate_market,
)

COVARIANCE_DIAG_RTOL = 1e-6
EXACT_STATE_LIMIT = 10**6


class ConfigurationConflict(MarketValidationError):
    """Supplied covariance disagrees with the posterior-derived variances."""


def build_problem(market: MarketProblem) -> AllocationProblem:
    validate_market(market)
    bids = market.bids
    bid2 = bids * bids
    s_mean = np.array([p.s_mean for p in market.posteriors])
    s_var = np.array([p.s_var for p in market.posteriors])
    e_s1ms = np.array([p.e_s_one_minus_s for p in market.posteriors])

    diag = bid2 * s_var
    if market.covariance is None:
        a = np.diag(diag)
    else:
        a = np.array(market.covariance, dtype=float)
        given = np.diag(a)
        tol = COVARIANCE_DIAG_RTOL * np.maximum(np.abs(diag), np.abs(given)) + 1e-300
        bad = np.flatnonzero(np.abs(given - diag) > tol)
        if bad.size:
            i = int(bad[0])
            raise ConfigurationConflict(
                f"covariance[{i},{i}]={given[i]:g} but bid^2 * Var[S]={diag[i]:g} for ad {market.ads[i].id!r}"
            )
    return AllocationProblem(a, bid2 * e_s1ms, bids * s_mean, m=market.m)


def allocation_variance(problem: AllocationProblem, alloc: Allocation) -> VarianceBreakdown:
    k = np.asarray(alloc.counts, dtype=float)
    if k.shape != (problem.n,):
        raise ValueError(f"allocation has {k.size} entries, problem has {problem.n} ads")
    return VarianceBreakdown(
        uncertainty=float(k @ problem.a_matrix @ k),
        randomness=float(problem.b_vector @ k),
    )


def expected_revenue(problem: AllocationProblem, alloc: Allocation) -> float:
    k = np.asarray(alloc.counts, dtype=float)
    if k.shape != (problem.n,):
        raise ValueError(f"allocation has {k.size} entries, problem has {problem.n} ads")
    return float(problem.c_vector @ k)


# -- independent check ------------------------------------------------------


@dataclass(frozen=True)
class DiscreteRate:
    """A finite distribution over response rates."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        vals = tuple(float(x) for x in self.values)
        probs = tuple(float(p) for p in self.probs)
        if len(vals) != len(probs) or not vals:
            raise ValueError("values and probs must be nonempty and aligned")
        if any(not (0.0 <= x <= 1.0) for x in vals) or any(p < 0 for p in probs):
            raise ValueError("rates must lie in [0, 1] and probabilities be >= 0")
        if abs(math.fsum(probs) - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def point(cls, p: float) -> "DiscreteRate":
        return cls((p,), (1.0,))


def joint_outcomes(rate_dists: Sequence[DiscreteRate]):
    """Product distribution of independent per-ad rates as (prob, rates) pairs."""
    out = []
    for combo in itertools.product(*(zip(d.probs, d.values) for d in rate_dists)):
        prob = math.prod(p for p, _ in combo)
        out.append((prob, tuple(v for _, v in combo)))
    return out


def moments_from_outcomes(ads: Sequence[AdSpec], outcomes):
    """Exact (A, b, c) for a joint finite rate distribution."""
    bids = np.array([ad.bid for ad in ads])
    probs = np.array([p for p, _ in outcomes])
    rates = np.array([r for _, r in outcomes])
    cond_mean = rates * bids
    c = probs @ cond_mean
    dev = cond_mean - c
    a = (dev * probs[:, None]).T @ dev
    b = probs @ (bids * bids * rates * (1.0 - rates))
    return a, b, c


def _binom_pmf(us: np.ndarray, k: int, s: float) -> np.ndarray:
    # log space so subnormal or extreme rates stay finite
    log_pmf = (
        special.gammaln(k + 1) - special.gammaln(us + 1) - special.gammaln(k - us + 1)
        + special.xlogy(us, s) + special.xlog1py(k - us, -s)
    )
    return np.exp(log_pmf)


def revenue_distribution(bids, counts, outcomes):
    """Exact law of total revenue as (values, probabilities) arrays.

    A mixture over rate outcomes of sums of bid-scaled binomial counts.
    """
    support: dict = {}
    for prob, rates in outcomes:
        if prob == 0:
            continue
        dist = {0.0: 1.0}
        for bid, k, s in zip(bids, counts, rates):
            us = np.arange(k + 1)
            pmf = _binom_pmf(us, k, s)
            nxt: dict = {}
            for val, pv in dist.items():
                for uu in us[pmf > 0]:
                    key = val + bid * float(uu)
                    nxt[key] = nxt.get(key, 0.0) + pv * float(pmf[uu])
            dist = nxt
        for val, pv in dist.items():
            support[val] = support.get(val, 0.0) + prob * pv
    return np.array(list(support.keys())), np.array(list(support.values()))


def _enumerate_revenue(bids, counts, outcomes):
    vals, probs = revenue_distribution(bids, counts, outcomes)
    mean = float(probs @ vals)
    var = float(probs @ (vals - mean) ** 2)
    return mean, var


def variance_oracle(
    ads: Sequence[AdSpec],
    rate_dists: Optional[Sequence[DiscreteRate]],
    counts: Sequence[int],
    trials: int = 200_000,
    rng: Optional[np.random.Generator] = None,
    *,
    outcomes=None,
    exact: Optional[bool] = None,
):
    """Mean and variance of total revenue by enumeration or simulation.

    Works from first principles: draw each rate once, then flip ``k_i``
    coins of that rate for ad ``i``. Pass ``outcomes`` (a list of
    ``(prob, rate_vector)`` pairs) instead of ``rate_dists`` for correlated
    rates. With ``exact=None`` the exact law of total revenue is enumerated
    whenever the outcome space has at most ``EXACT_STATE_LIMIT`` states.
    """
    if outcomes is None:
        outcomes = joint_outcomes(rate_dists)
    bids = [ad.bid for ad in ads]
    counts = [int(k) for k in counts]
    if len(counts) != len(bids):
        raise ValueError("counts and ads must be aligned")
    states = len(outcomes) * math.prod(k + 1 for k in counts)
    if exact is None:
        exact = states <= EXACT_STATE_LIMIT
    if exact:
        return _enumerate_revenue(bids, counts, outcomes)

    if rng is None:
        rng = np.random.default_rng(0)
    probs = np.array([p for p, _ in outcomes])
    rates = np.array([r for _, r in outcomes])
    picks = rng.choice(len(outcomes), size=trials, p=probs / probs.sum())
    svals = rates[picks]
    responses = rng.binomial(np.array(counts), svals)
    revenue = responses @ np.array(bids, dtype=float)
    return float(revenue.mean()), float(revenue.var(ddof=1))


# -- single-ad approximations ---------------------------------------------


class ApproxForm(str, enum.Enum):
    RAW = "raw"
    COMPETITIVE = "competitive"
    LEARNING = "learning"


@dataclass(frozen=True)
class SingleAdInputs:
    """Inputs for the one-ad variance approximations.

    ``c_comp`` is the expected revenue per call an ad needs to be
    competitive; it is unrelated to the revenue vector of a problem.
    """

    k: float
    p: float
    bid: Optional[float] = None
    sigma: Optional[float] = None
    c_comp: Optional[float] = None
    v: Optional[float] = None

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if not (0.0 <= self.p <= 1.0):
            raise ValueError("p must be a probability")


def _require(inp: SingleAdInputs, *names):
    missing = [n for n in names if getattr(inp, n) is None]
    if missing:
        raise ValueError(f"missing inputs: {', '.join(missing)}")


def single_ad_variance_approx(inp: SingleAdInputs, form: ApproxForm = ApproxForm.RAW):
    """(uncertainty, randomness, total) for one ad.

    RAW:         k^2 b^2 sigma^2 + k b^2 p (1-p)
    COMPETITIVE: bid replaced by c/p
    LEARNING:    additionally sigma^2 = p (1-p) / v
    """
    form = ApproxForm(form)
    k, p = float(inp.k), float(inp.p)
    if form is ApproxForm.RAW:
        _require(inp, "bid", "sigma")
        b2 = inp.bid * inp.bid
        unc = k * k * b2 * inp.sigma**2
        rnd = k * b2 * p * (1.0 - p)
    else:
        if not (0.0 < p < 1.0):
            raise ValueError(f"p must be in (0, 1) for the {form.value} form, got {p}")
        c2 = float(inp.c_comp) ** 2 if inp.c_comp is not None else None
        if form is ApproxForm.COMPETITIVE:
            _require(inp, "c_comp", "sigma")
            unc = k * k * c2 * inp.sigma**2 / (p * p)
        else:
            _require(inp, "c_comp", "v")
            if not inp.v > 0:
                raise ValueError("v must be > 0")
            unc = k * k * c2 * (1.0 - p) / (inp.v * p)
        rnd = k * c2 * (1.0 - p) / p
    return unc, rnd, unc + rnd


def uncertainty_randomness_ratio(k: float, v: float) -> float:
    if not v > 0:
        raise ValueError("ratio needs learning data (v > 0)")
    return k / v


def diversification_curve(alpha: float, beta: float, k: float, r_max: int):
    """Variance when k calls are split evenly over r interchangeable ads."""
    if r_max < 1:
        raise ValueError("r_max must be >= 1")
    return [(r, k * k * alpha / r + k * beta) for r in range(1, r_max + 1)]
