"""Two-phase product bootstrap weights.

Phase-I weights are i.i.d. within a stratum with mean 1 and variance
``p_j / (2 - p_j)``.  Phase-II weights are exchangeable among the sampled
units of a stratum and follow a two-component mixture of multivariate
hypergeometric laws, so they always sum to ``n_j``.  The replicate weight is
the product of the two.

Every generator accepts ``size``: ``None`` gives one replicate as an
``(N,)`` array, an integer gives a ``(size, N)`` batch from the same stream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize, special, stats

from .design import TwoPhaseSample
from .errors import DataError, DimensionMismatch

__all__ = [
    "BootstrapWeights",
    "Phase2MixtureParams",
    "phase1_variance",
    "phase1_weights",
    "phase2_mixture_params",
    "phase2_weights",
    "stratum_phase2_weights",
    "mh_sample",
    "combine_weights",
    "write_weights_csv",
]


def phase1_variance(p: float) -> float:
    """Target phase-I weight variance c^2 = p / (2 - p)."""
    if not 0 < p <= 1:
        raise DataError(f"sampling fraction must lie in (0, 1], got {p}")
    return p / (2.0 - p)


@lru_cache(maxsize=256)
def _truncated_gamma_params(c2: float, bound: float) -> tuple[float, float]:
    """Shape/scale of a Gamma law truncated at ``bound`` with mean 1, variance c2."""
    if bound <= 1.0:
        raise DataError("phase-I weight bound must exceed 1")

    def moments(log_params):
        a, s = np.exp(log_params)
        z = bound / s
        f0 = special.gammainc(a, z)
        m1 = a * s * special.gammainc(a + 1, z) / f0
        m2 = a * (a + 1) * s * s * special.gammainc(a + 2, z) / f0
        return np.array([m1 - 1.0, (m2 - m1 * m1) - c2])

    start = np.log([1.0 / c2, c2])
    sol = optimize.root(moments, start, method="hybr", tol=1e-13)
    if not sol.success or np.max(np.abs(moments(sol.x))) > 1e-9:
        raise DataError(
            f"no Gamma law truncated at {bound} has mean 1 and variance {c2:.6g}")
    a, s = np.exp(sol.x)
    return float(a), float(s)


def phase1_weights(sample: TwoPhaseSample, rng, size=None, bound=None) -> np.ndarray:
    """Draw phase-I weights for every unit.

    Within stratum j the weights are Gamma(1/c_j^2, scale=c_j^2).  With
    ``bound`` set, the Gamma law is truncated at ``bound`` and its parameters
    re-solved so the mean and variance targets still hold exactly.
    """
    shape = (sample.N,) if size is None else (size, sample.N)
    out = np.empty(shape)
    for s in sample.strata:
        pos = sample.stratum_members(s.stratum_id)
        c2 = phase1_variance(s.n_j / s.N_j)
        draw_shape = (pos.size,) if size is None else (size, pos.size)
        if bound is None:
            draws = rng.gamma(1.0 / c2, c2, size=draw_shape)
        else:
            a, scale = _truncated_gamma_params(c2, float(bound))
            top = stats.gamma.cdf(bound, a, scale=scale)
            u = rng.random(draw_shape) * top
            draws = stats.gamma.ppf(u, a, scale=scale)
            # ppf can underflow to exactly 0 for tiny u
            draws = np.maximum(draws, np.finfo(float).tiny)
        out[..., pos] = draws
    return out


@dataclass(frozen=True)
class Phase2MixtureParams:
    k_j: int
    r_j: int
    s_j: float


def phase2_mixture_params(N_j: int, n_j: int) -> Phase2MixtureParams:
    if not 1 <= n_j <= N_j:
        raise DataError(f"need 1 <= n_j <= N_j, got n_j={n_j}, N_j={N_j}")
    k, r = divmod(N_j, n_j)
    if r == 0:
        s = 1.0
    else:
        s = (1.0 - r / n_j) * (1.0 - r / (N_j - 1))
    return Phase2MixtureParams(k_j=k, r_j=r, s_j=s)


def mh_sample(total, draws, groups, rng, size=None) -> np.ndarray:
    """Exact multivariate hypergeometric draw.

    Draws ``draws`` balls without replacement from ``total`` balls split into
    groups of sizes ``groups`` and returns the count taken from each group.
    Group i is drawn as Hypergeometric(m_i, remaining - m_i, remaining draws)
    given the earlier groups.

    ``total``, ``draws`` and each group size may be arrays broadcastable to
    ``size`` to vectorise over replicates.
    """
    groups = [np.asarray(m, dtype=np.int64) for m in groups]
    total = np.asarray(total, dtype=np.int64)
    left = np.asarray(draws, dtype=np.int64)
    check_total = sum(groups) if groups else np.zeros_like(total)
    if np.any(check_total != total):
        raise DataError("group sizes must sum to the population total")
    if np.any(left < 0) or np.any(left > total):
        raise DataError("number of draws must lie in [0, total]")
    bshape = np.broadcast_shapes(total.shape, left.shape, *(g.shape for g in groups))
    if size is not None:
        bshape = np.broadcast_shapes(bshape, (size,))
    out = np.empty(bshape + (len(groups),), dtype=np.int64)
    remaining = np.broadcast_to(total, bshape).copy()
    left = np.broadcast_to(left, bshape).copy()
    for i, m in enumerate(groups):
        m = np.broadcast_to(m, bshape)
        if i == len(groups) - 1:
            got = left.copy()
        else:
            got = rng.hypergeometric(m, remaining - m, left, size=bshape or None)
            got = np.asarray(got, dtype=np.int64).reshape(bshape)
        out[..., i] = got
        remaining -= m
        left -= got
    return out


def stratum_phase2_weights(N_j: int, n_j: int, rng, size=None):
    """Exchangeable phase-II weights for the n_j sampled units of one stratum.

    Returns ``(weights, second)`` where ``weights`` has trailing length n_j
    and ``second`` flags replicates drawn from the (k_j + 1)-copy component.
    """
    par = phase2_mixture_params(N_j, n_j)
    shape = () if size is None else (size,)
    if par.r_j == 0:
        second = np.zeros(shape, dtype=bool)
    else:
        second = rng.random(shape) >= par.s_j
    copies = par.k_j + second.astype(np.int64)
    w = mh_sample(n_j * copies, n_j, [copies] * n_j, rng, size=size)
    return w, second


def phase2_weights(sample: TwoPhaseSample, rng, size=None) -> np.ndarray:
    """Draw phase-II weights; zero on unsampled units."""
    shape = (sample.N,) if size is None else (size, sample.N)
    out = np.zeros(shape)
    for s in sample.strata:
        pos = sample.stratum_members(s.stratum_id)
        # k-th sampled unit in id order receives the k-th exchangeable weight
        sampled = pos[sample.xi[pos] == 1]
        w, _ = stratum_phase2_weights(s.N_j, s.n_j, rng, size=size)
        out[..., sampled] = w
    return out


@dataclass(frozen=True, eq=False)
class BootstrapWeights:
    """One replicate of weights, aligned with the rows of a sample."""

    ids: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    w: np.ndarray

    def as_dict(self) -> dict:
        return {
            int(i): (float(a), float(b), float(c))
            for i, a, b, c in zip(self.ids, self.w1, self.w2, self.w)
        }


def combine_weights(w1, w2, ids=None) -> BootstrapWeights:
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    if w1.shape != w2.shape:
        raise DimensionMismatch(f"phase-I weights {w1.shape} vs phase-II {w2.shape}")
    if ids is None:
        ids = np.arange(w1.shape[-1])
    ids = np.asarray(ids)
    if ids.shape[-1] != w1.shape[-1]:
        raise DimensionMismatch("ids do not match the weight vectors")
    return BootstrapWeights(ids=ids, w1=w1, w2=w2, w=w1 * w2)


def write_weights_csv(replicates, path) -> None:
    """Write ``(replicate_index, BootstrapWeights)`` pairs as delimited text."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["replicate", "id", "w1", "w2", "w"])
        for b, bw in replicates:
            for i, a, c, d in zip(bw.ids, bw.w1, bw.w2, bw.w):
                out.writerow([b, int(i), format(a, ".17g"), format(c, ".17g"),
                              format(d, ".17g")])
