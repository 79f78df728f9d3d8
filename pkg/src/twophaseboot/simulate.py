"""Synthetic two-phase Cox data with a misclassified surrogate.

Strata: 1 = events (always sampled), 2 = censored with V=0,
3 = censored with V=1 (each subsampled at a fixed fraction).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .design import TwoPhaseSample, phase2_size, sample_phase2_indicators
from .errors import DataError, DegenerateStratum


@dataclass(frozen=True)
class CoxSimConfig:
    N: int = 400
    theta: float = math.log(2.0)
    lambda0: float = 0.1
    cens_upper: float = 1.1
    sens: float = 0.9
    spec: float = 0.9
    exposure_prev: float = 0.5
    phase2_fraction: float = 0.3
    seed: int | None = None

    def check(self) -> None:
        if not 0 < self.exposure_prev < 1:
            raise DataError(f"exposure_prev must lie in (0, 1), got {self.exposure_prev}")
        # perfect classification (1.0) is allowed for the surrogate
        for name in ("sens", "spec"):
            p = getattr(self, name)
            if not 0 < p <= 1:
                raise DataError(f"{name} must lie in (0, 1], got {p}")
        if not 0 < self.phase2_fraction <= 1:
            raise DataError("phase2_fraction must lie in (0, 1]")
        if self.lambda0 <= 0 or self.cens_upper <= 0:
            raise DataError("lambda0 and cens_upper must be positive")
        if self.N < 3:
            raise DataError("N must be at least 3")


def generate_cox_sample(config: CoxSimConfig, rng=None) -> TwoPhaseSample:
    """Draw one phase-I cohort and its stratified phase-II subsample.

    ``v`` holds the surrogate V as its single column, ``x`` the exposure.
    Raises DegenerateStratum if any of the three strata is empty.
    """
    config.check()
    if rng is None:
        rng = np.random.default_rng(config.seed)
    N = config.N
    x = (rng.random(N) < config.exposure_prev).astype(float)
    u = rng.random(N)
    # P(V=1|X=1) = sens, P(V=0|X=0) = spec
    v = np.where(x == 1, u < config.sens, u >= config.spec).astype(float)
    rate = config.lambda0 * np.exp(config.theta * x)
    t = rng.exponential(1.0 / rate)
    c = rng.uniform(0.0, config.cens_upper, size=N)
    y = np.minimum(t, c)
    delta = (t <= c).astype(np.int64)

    stratum = np.where(delta == 1, 1, np.where(v == 0, 2, 3))
    for j in (1, 2, 3):
        if not np.any(stratum == j):
            raise DegenerateStratum(f"stratum {j} is empty; reseed")
    fractions = {1: 1.0, 2: config.phase2_fraction, 3: config.phase2_fraction}
    ids = np.arange(1, N + 1)
    xi = sample_phase2_indicators(stratum, fractions, rng, ids=ids)
    xs = np.where(xi == 1, x, np.nan)
    return TwoPhaseSample(ids=ids, stratum=stratum, xi=xi, v=v[:, None],
                          x=xs[:, None], y=y, delta=delta)


def expected_censoring(config: CoxSimConfig) -> float:
    """Population censoring proportion P(T > C) under the configuration."""
    out = 0.0
    for xval, px in ((1.0, config.exposure_prev), (0.0, 1 - config.exposure_prev)):
        lam = config.lambda0 * math.exp(config.theta * xval)
        a = config.cens_upper
        out += px * (1 - math.exp(-lam * a)) / (lam * a)
    return out


def expected_phase2_size(config: CoxSimConfig) -> float:
    """Rough expected phase-II size (events plus fraction of censored units)."""
    cens = expected_censoring(config)
    return config.N * (1 - cens) + config.phase2_fraction * config.N * cens


__all__ = ["CoxSimConfig", "generate_cox_sample", "expected_censoring",
           "expected_phase2_size", "phase2_size"]
