"""Range-inference analysis for masked values ``x0 = x + alpha``.

An observer who knows ``x`` lies in ``[l_x, r_x]`` and ``alpha`` in
``[l_a, r_a]`` learns ``x`` in ``[x0 - r_a, x0 - l_a]``. The prior is not
narrowed exactly when ``x0`` falls in the safe interval
``[r_x + l_a, l_x + r_a]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DegeneratePriorError

WILSON_Z = 1.959963984540054  # two-sided 95%
MIN_TRIALS = 10_000


@dataclass(frozen=True)
class PriorInterval:
    low: float
    high: float

    def __post_init__(self):
        if not self.low <= self.high:
            raise ConfigurationError(f"prior interval needs low <= high, got [{self.low}, {self.high}]")

    @property
    def length(self) -> float:
        return self.high - self.low


@dataclass(frozen=True)
class SafeInterval:
    """Like :class:`PriorInterval` but may be empty (``low > high``)."""

    low: float
    high: float

    @property
    def empty(self) -> bool:
        return self.low > self.high

    @property
    def length(self) -> float:
        return max(0.0, self.high - self.low)


def theta(x_prior: PriorInterval, alpha_prior: PriorInterval) -> float:
    if x_prior.length == 0:
        raise DegeneratePriorError("the prior on x has zero length")
    return alpha_prior.length / x_prior.length


def safe_interval(x_prior: PriorInterval, alpha_prior: PriorInterval) -> SafeInterval:
    return SafeInterval(x_prior.high + alpha_prior.low, x_prior.low + alpha_prior.high)


def non_narrowing_probability(x_prior: PriorInterval, alpha_prior: PriorInterval) -> float:
    """Closed form ``max(0, 1 - 2 / (theta + 1))``."""
    t = theta(x_prior, alpha_prior)
    return max(0.0, 1.0 - 2.0 / (t + 1.0))


def exact_uniform_probability(x_prior: PriorInterval, alpha_prior: PriorInterval) -> float:
    """Exact value for independent uniform ``x`` and ``alpha``: the density of
    ``x + alpha`` is flat at ``1 / L_a`` over the safe interval, giving
    ``max(0, 1 - 1 / theta)``."""
    t = theta(x_prior, alpha_prior)
    return max(0.0, 1.0 - 1.0 / t) if t > 0 else 0.0


def alpha_range_from_prg(low: float, high: float) -> PriorInterval:
    """Support of a zero-sharing mask ``r_i - r_{i+1}`` with PRG draws in
    ``[low, high]``: length ``2 (high - low)``."""
    width = high - low
    if width < 0:
        raise ConfigurationError(f"PRG range needs low <= high, got [{low}, {high}]")
    return PriorInterval(-width, width)


def wilson_interval(successes: int, trials: int, z: float = WILSON_Z) -> tuple[float, float]:
    if trials <= 0:
        raise ConfigurationError("trials must be positive")
    p = successes / trials
    denom = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class MonteCarloResult:
    probability: float
    ci95: tuple[float, float]
    trials: int
    hits: int


def monte_carlo_narrowing(x_prior: PriorInterval, alpha_prior: PriorInterval, trials: int = 1_000_000,
                          seed: Optional[int] = 0, chunk: int = 1 << 20) -> MonteCarloResult:
    """Draw ``x`` and ``alpha`` uniformly and count how often the posterior
    interval ``[l_x, r_x] & [x0 - r_a, x0 - l_a]`` is the whole prior."""
    if trials < MIN_TRIALS:
        raise ConfigurationError(f"need at least {MIN_TRIALS} trials, got {trials}")
    rng = np.random.default_rng(seed)
    hits, left = 0, trials
    while left:
        m = min(chunk, left)
        x = rng.uniform(x_prior.low, x_prior.high, m)
        x0 = x + rng.uniform(alpha_prior.low, alpha_prior.high, m)
        lo = np.maximum(x_prior.low, x0 - alpha_prior.high)
        hi = np.minimum(x_prior.high, x0 - alpha_prior.low)
        hits += int(np.count_nonzero((lo == x_prior.low) & (hi == x_prior.high)))
        left -= m
    return MonteCarloResult(hits / trials, wilson_interval(hits, trials), trials, hits)


def analyze(lx: float, rx: float, l_r: float, r_r: float, trials: int = 1_000_000, seed: int = 0) -> dict:
    """Report for a PRG range ``[l_r, r_r]`` against a prior ``[lx, rx]``."""
    xp = PriorInterval(lx, rx)
    ap = alpha_range_from_prg(l_r, r_r)
    mc = monte_carlo_narrowing(xp, ap, trials, seed)
    si = safe_interval(xp, ap)
    return {"theta": theta(xp, ap), "closed_form": non_narrowing_probability(xp, ap),
            "empirical": mc.probability, "ci95": list(mc.ci95),
            "safe_interval": None if si.empty else [si.low, si.high]}
