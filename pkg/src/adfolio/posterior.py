"""Response-rate posteriors, rate sampling and simulated learning data."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .model import LearningRecord, PosteriorSummary, PriorKind, PriorSpec


class DegeneratePosteriorError(ValueError):
    """The prior puts no usable mass where the data are possible."""


@dataclass(frozen=True)
class QuadratureConfig:
    """Grid settings for :func:`posterior_grid`.

    The grid spans the part of the prior's support where the unnormalized
    posterior is within a factor ``tail_epsilon`` of its peak.
    """

    grid_points: int = 10_001
    tail_epsilon: float = 1e-30

    def __post_init__(self):
        if self.grid_points < 101 or self.grid_points % 2 == 0:
            raise ValueError(f"grid_points must be odd and >= 101, got {self.grid_points}")
        if not (0.0 < self.tail_epsilon < 1.0):
            raise ValueError("tail_epsilon must be in (0, 1)")


def posterior_beta(record: LearningRecord) -> PosteriorSummary:
    """Closed-form moments for a uniform prior: the posterior is Beta(u+1, v-u+1)."""
    a = record.responses + 1.0
    b = record.impressions - record.responses + 1.0
    t = a + b
    mean = a / t
    var = a * b / (t * t * (t + 1.0))
    e_s1ms = a * b / (t * (t + 1.0))
    return PosteriorSummary(mean, var, e_s1ms)


def _log_posterior(prior: PriorSpec, u: int, v: int, s):
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = special.xlogy(u, s) + special.xlog1py(v - u, -s)
    return prior.log_density(s) + ll


def _log_posterior_at(prior: PriorSpec, u: int, v: int, s: float) -> float:
    # scalar twin of _log_posterior for the bracketing searches
    if not (prior.lo <= s <= prior.hi):
        return -math.inf
    if (u > 0 and s <= 0.0) or (v - u > 0 and s >= 1.0):
        return -math.inf
    val = (u * math.log(s) if u else 0.0) + ((v - u) * math.log1p(-s) if v - u else 0.0)
    if prior.kind is PriorKind.TRUNCATED_GAUSSIAN:
        z = (s - prior.mu) / prior.sigma
        val -= 0.5 * z * z
    return val


def _bisect(fn, lo: float, hi: float, iters: int = 200) -> float:
    # fn(lo) and fn(hi) have opposite "sides"; returns the crossing point.
    # Never evaluates the endpoints themselves.
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if fn(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _mode(prior: PriorSpec, u: int, v: int, lo: float, hi: float) -> float:
    # log prior * likelihood is concave for every supported prior, so the
    # sign of its derivative brackets the mode.
    def rising(s):
        return prior.d_log_density(s) + u / s - (v - u) / (1.0 - s) > 0.0

    return _bisect(rising, lo, hi)


def integration_window(prior: PriorSpec, record: LearningRecord, cfg: QuadratureConfig):
    """Interval carrying all but a ``tail_epsilon`` sliver of the posterior."""
    u, v = record.responses, record.impressions
    lo, hi = prior.support
    mode = _mode(prior, u, v, lo, hi)
    peak = _log_posterior_at(prior, u, v, mode)
    if not math.isfinite(peak):
        raise DegeneratePosteriorError(
            f"posterior has no finite mass on [{lo}, {hi}] for record u={u}, v={v}"
        )
    floor = peak + math.log(cfg.tail_epsilon)

    def above(s):
        return _log_posterior_at(prior, u, v, s) >= floor

    left = lo if above(lo) else _bisect(lambda s: not above(s), lo, mode)
    right = hi if above(hi) else _bisect(above, mode, hi)
    if not right > left:
        raise DegeneratePosteriorError(f"posterior window collapsed at s={mode}")
    return left, right


def posterior_grid(
    prior: PriorSpec,
    record: LearningRecord,
    cfg: QuadratureConfig = QuadratureConfig(),
) -> PosteriorSummary:
    """Posterior moments of ``prior(s) * s**u * (1-s)**(v-u)`` by quadrature.

    The likelihood is evaluated in log space and shifted by its maximum
    before exponentiation, so v in the hundreds of thousands is fine.
    Integration uses composite Simpson's rule on a uniform grid.
    """
    u, v = record.responses, record.impressions
    left, right = integration_window(prior, record, cfg)
    s = np.linspace(left, right, cfg.grid_points)
    logf = _log_posterior(prior, u, v, s)
    top = np.max(logf)
    if not math.isfinite(top):
        raise DegeneratePosteriorError("posterior density underflows on the whole grid")
    f = np.exp(logf - top)
    dx = s[1] - s[0]
    z = integrate.simpson(f, dx=dx)
    if not (z > 0 and math.isfinite(z)):
        raise DegeneratePosteriorError("zero normalizing mass")
    mean = integrate.simpson(s * f, dx=dx) / z
    dev = s - mean
    var = integrate.simpson(dev * dev * f, dx=dx) / z
    mean = min(max(mean, 0.0), 1.0)
    return PosteriorSummary.from_moments(mean, max(var, 0.0))


def posterior(prior: PriorSpec, record: LearningRecord, cfg: QuadratureConfig = QuadratureConfig()):
    """Closed form for the uniform prior, quadrature otherwise."""
    if prior.kind is PriorKind.UNIFORM01:
        return posterior_beta(record)
    return posterior_grid(prior, record, cfg)


def sample_rates(prior: PriorSpec, size: int, rng: np.random.Generator) -> np.ndarray:
    if prior.kind is not PriorKind.TRUNCATED_GAUSSIAN:
        return rng.uniform(prior.lo, prior.hi, size=size)
    out = np.empty(size)
    filled = 0
    while filled < size:
        draw = rng.normal(prior.mu, prior.sigma, size=size - filled)
        keep = draw[(draw >= 0.0) & (draw <= 1.0)]
        out[filled:filled + keep.size] = keep
        filled += keep.size
    return out


def sample_rate(prior: PriorSpec, rng: np.random.Generator) -> float:
    """One draw from ``prior``; Gaussian draws outside [0, 1] are rejected."""
    return float(sample_rates(prior, 1, rng)[0])


def simulate_learning(rate: float, v: int, rng: np.random.Generator) -> LearningRecord:
    if not (0.0 <= rate <= 1.0):
        raise ValueError(f"rate must be in [0, 1], got {rate}")
    return LearningRecord(impressions=int(v), responses=int(rng.binomial(v, rate)))
