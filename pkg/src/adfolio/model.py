"""Domain types shared by estimation, optimization and simulation.

Money is a plain float in dollars. Every type is a frozen dataclass; array
fields are stored as read-only float copies so instances can be shared
between workers without defensive copying.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

MOMENT_IDENTITY_TOL = 1e-9
PSD_EIG_TOL = 1e-9
SYMMETRY_RTOL = 1e-9


class MarketValidationError(ValueError):
    """A market or problem violates one of its structural invariants."""


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class PriceType(str, enum.Enum):
    CPC = "CPC"
    CPA = "CPA"


@dataclass(frozen=True)
class AdSpec:
    """An ad's identity and its bid per response.

    CPC and CPA ads pay the same way (the bid, on a response); the price
    type is carried for reporting only.
    """

    id: str
    bid: float
    price_type: PriceType = PriceType.CPC

    def __post_init__(self):
        if not (math.isfinite(self.bid) and self.bid > 0):
            raise MarketValidationError(f"ad {self.id!r}: bid must be > 0, got {self.bid}")
        object.__setattr__(self, "price_type", PriceType(self.price_type))


class PriorKind(str, enum.Enum):
    UNIFORM01 = "uniform01"
    TRUNCATED_UNIFORM = "truncated_uniform"
    TRUNCATED_GAUSSIAN = "truncated_gaussian"


@dataclass(frozen=True)
class PriorSpec:
    """Belief about a response rate before any learning data is seen.

    Use the constructors :meth:`uniform01`, :meth:`truncated_uniform` and
    :meth:`truncated_gaussian` rather than filling fields by hand. The
    Gaussian variant is restricted to [0, 1] and renormalized.
    """

    kind: PriorKind
    lo: float = 0.0
    hi: float = 1.0
    mu: float = float("nan")
    sigma: float = float("nan")

    def __post_init__(self):
        object.__setattr__(self, "kind", PriorKind(self.kind))
        if self.kind is PriorKind.UNIFORM01:
            if (self.lo, self.hi) != (0.0, 1.0):
                raise ValueError("uniform01 prior has fixed support [0, 1]")
        elif self.kind is PriorKind.TRUNCATED_UNIFORM:
            if not (0.0 <= self.lo < self.hi <= 1.0):
                raise ValueError(f"truncated uniform needs 0 <= lo < hi <= 1, got ({self.lo}, {self.hi})")
        else:
            if not math.isfinite(self.mu):
                raise ValueError("truncated gaussian needs a finite mu")
            if not (math.isfinite(self.sigma) and self.sigma > 0):
                raise ValueError(f"truncated gaussian needs sigma > 0, got {self.sigma}")
            if (self.lo, self.hi) != (0.0, 1.0):
                raise ValueError("truncated gaussian is always restricted to [0, 1]")

    @classmethod
    def uniform01(cls) -> "PriorSpec":
        return cls(PriorKind.UNIFORM01)

    @classmethod
    def truncated_uniform(cls, lo: float, hi: float) -> "PriorSpec":
        return cls(PriorKind.TRUNCATED_UNIFORM, lo=float(lo), hi=float(hi))

    @classmethod
    def truncated_gaussian(cls, mu: float, sigma: float) -> "PriorSpec":
        return cls(PriorKind.TRUNCATED_GAUSSIAN, mu=float(mu), sigma=float(sigma))

    @property
    def support(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    def _truncnorm(self):
        from scipy import stats

        a = (0.0 - self.mu) / self.sigma
        b = (1.0 - self.mu) / self.sigma
        return stats.truncnorm(a, b, loc=self.mu, scale=self.sigma)

    def mean(self) -> float:
        if self.kind is PriorKind.TRUNCATED_GAUSSIAN:
            return float(self._truncnorm().mean())
        return 0.5 * (self.lo + self.hi)

    def std(self) -> float:
        if self.kind is PriorKind.TRUNCATED_GAUSSIAN:
            return float(self._truncnorm().std())
        return (self.hi - self.lo) / math.sqrt(12.0)

    def log_density(self, s):
        """Unnormalized log density; ``-inf`` outside the support."""
        s = np.asarray(s, dtype=float)
        inside = (s >= self.lo) & (s <= self.hi)
        if self.kind is PriorKind.TRUNCATED_GAUSSIAN:
            with np.errstate(over="ignore"):
                z = (s - self.mu) / self.sigma
                vals = -0.5 * z * z
        else:
            vals = np.zeros_like(s)
        return np.where(inside, vals, -np.inf)

    def d_log_density(self, s: float) -> float:
        if self.kind is PriorKind.TRUNCATED_GAUSSIAN:
            return -(s - self.mu) / (self.sigma * self.sigma)
        return 0.0

    def to_dict(self) -> dict:
        if self.kind is PriorKind.UNIFORM01:
            return {"kind": self.kind.value}
        if self.kind is PriorKind.TRUNCATED_UNIFORM:
            return {"kind": self.kind.value, "lo": self.lo, "hi": self.hi}
        return {"kind": self.kind.value, "mu": self.mu, "sigma": self.sigma}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        kind = PriorKind(d["kind"])
        if kind is PriorKind.UNIFORM01:
            return cls.uniform01()
        if kind is PriorKind.TRUNCATED_UNIFORM:
            return cls.truncated_uniform(d["lo"], d["hi"])
        return cls.truncated_gaussian(d["mu"], d["sigma"])


@dataclass(frozen=True)
class LearningRecord:
    impressions: int
    responses: int

    def __post_init__(self):
        if not (0 <= self.responses <= self.impressions):
            raise ValueError(
                f"need 0 <= responses <= impressions, got u={self.responses}, v={self.impressions}"
            )


@dataclass(frozen=True)
class PosteriorSummary:
    """First two moments of a response-rate posterior.

    ``e_s_one_minus_s`` is E[S(1-S)], which must equal
    ``s_mean - s_var - s_mean**2``; :meth:`from_moments` fills it that way.
    """

    s_mean: float
    s_var: float
    e_s_one_minus_s: float

    def __post_init__(self):
        m, v, e = self.s_mean, self.s_var, self.e_s_one_minus_s
        if not (0.0 <= m <= 1.0):
            raise ValueError(f"posterior mean {m} outside [0, 1]")
        if v < 0 or e < 0:
            raise ValueError(f"negative posterior moment (var={v}, E[S(1-S)]={e})")
        if v > m * (1.0 - m) + MOMENT_IDENTITY_TOL:
            raise ValueError(f"posterior variance {v} exceeds Bernoulli bound {m * (1 - m)}")
        if abs(e - (m - v - m * m)) > MOMENT_IDENTITY_TOL:
            raise ValueError("E[S(1-S)] inconsistent with mean and variance")

    @classmethod
    def from_moments(cls, s_mean: float, s_var: float) -> "PosteriorSummary":
        e = s_mean - s_var - s_mean * s_mean
        # rounding at tiny scales can push this a hair below zero
        return cls(float(s_mean), float(s_var), float(max(e, 0.0)))

    @classmethod
    def point_mass(cls, rate: float) -> "PosteriorSummary":
        return cls.from_moments(rate, 0.0)


@dataclass(frozen=True)
class MarketProblem:
    """A set of competing ads, their posteriors and the number of ad calls.

    ``covariance`` holds Cov(E[X_i|S_i], E[X_j|S_j]) in money squared. When
    omitted the ads are treated as independently estimated.
    """

    ads: tuple
    m: int
    posteriors: tuple
    covariance: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "ads", tuple(self.ads))
        object.__setattr__(self, "posteriors", tuple(self.posteriors))
        if self.covariance is not None:
            object.__setattr__(self, "covariance", _frozen_array(self.covariance))

    @property
    def n(self) -> int:
        return len(self.ads)

    @property
    def bids(self) -> np.ndarray:
        return np.array([ad.bid for ad in self.ads], dtype=float)


def check_symmetric_psd(mat: np.ndarray, what: str) -> None:
    scale = max(1.0, float(np.max(np.abs(mat)))) if mat.size else 1.0
    if not np.all(np.isfinite(mat)):
        raise MarketValidationError(f"{what} has non-finite entries")
    if np.max(np.abs(mat - mat.T), initial=0.0) > SYMMETRY_RTOL * scale:
        raise MarketValidationError(f"{what} is not symmetric")
    lam_min = float(np.linalg.eigvalsh(mat)[0])
    if lam_min < -PSD_EIG_TOL * scale:
        raise MarketValidationError(f"{what} is not positive semidefinite (min eigenvalue {lam_min:g})")


def validate_market(market: MarketProblem) -> MarketProblem:
    """Check cross-field invariants of ``market`` and return it unchanged."""
    n = market.n
    if n < 1:
        raise MarketValidationError("market needs at least one ad")
    if len(market.posteriors) != n:
        raise MarketValidationError(
            f"dimension mismatch: {n} ads but {len(market.posteriors)} posteriors"
        )
    if int(market.m) != market.m or market.m <= 0:
        raise MarketValidationError(f"m must be a positive integer, got {market.m}")
    ids = [ad.id for ad in market.ads]
    if len(set(ids)) != n:
        raise MarketValidationError("ad ids must be unique within a market")
    for ad in market.ads:
        if not ad.bid > 0:
            raise MarketValidationError(f"ad {ad.id!r}: bid must be > 0")
    if market.covariance is not None:
        cov = market.covariance
        if cov.shape != (n, n):
            raise MarketValidationError(f"dimension mismatch: covariance shape {cov.shape}, expected {(n, n)}")
        check_symmetric_psd(cov, "covariance")
    return market


@dataclass(frozen=True)
class AllocationProblem:
    """Quadratic-program data: variance is k'Ak + b'k, revenue is c'k.

    ``b_vector`` here is the per-call randomness term, not a bid.
    """

    a_matrix: np.ndarray
    b_vector: np.ndarray
    c_vector: np.ndarray
    m: int = 1

    def __post_init__(self):
        a = _frozen_array(self.a_matrix)
        b = _frozen_array(self.b_vector)
        c = _frozen_array(self.c_vector)
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "b_vector", b)
        object.__setattr__(self, "c_vector", c)
        n = b.shape[0]
        if a.shape != (n, n) or c.shape != (n,):
            raise MarketValidationError(f"inconsistent shapes A{a.shape} b{b.shape} c{c.shape}")
        check_symmetric_psd(a, "A")
        if np.any(b < 0) or np.any(c < 0):
            raise MarketValidationError("b and c must be elementwise nonnegative")
        if int(self.m) != self.m or self.m < 0:
            raise MarketValidationError(f"m must be a nonnegative integer, got {self.m}")

    @property
    def n(self) -> int:
        return self.b_vector.shape[0]


@dataclass(frozen=True)
class Allocation:
    """Simplex weights together with the integer ad-call counts they round to."""

    weights: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        w = _frozen_array(self.weights)
        k = _frozen_array(self.counts, dtype=np.int64)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "counts", k)
        if w.shape != k.shape or w.ndim != 1:
            raise ValueError("weights and counts must be 1-d and the same length")
        if np.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValueError("weights must lie on the unit simplex")
        if np.any(k < 0):
            raise ValueError("counts must be nonnegative")

    @property
    def m(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_counts(cls, counts: Sequence[int]) -> "Allocation":
        k = np.asarray(counts, dtype=np.int64)
        total = k.sum()
        w = k / total if total > 0 else np.full(k.shape, 1.0 / k.size)
        return cls(w, k)


@dataclass(frozen=True)
class VarianceBreakdown:
    uncertainty: float
    randomness: float
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", self.uncertainty + self.randomness)
