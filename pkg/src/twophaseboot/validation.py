"""Monte-Carlo checks of the bootstrap against the exact oracles.

Each check returns a :class:`Check` with a pass flag and the numbers behind
it; ``run_suite`` bundles them for the ``validate`` subcommand.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .calibration import solve_calibration
from .design import TwoPhaseSample
from .measures import FunctionPanel, boot_process_value
from .oracle import (
    DiscreteModel,
    balanced_sample_counts,
    limit_covariance_matrix,
    phase2_weight_pmf,
)
from .weights import phase1_variance, phase1_weights, phase2_weights, stratum_phase2_weights


@dataclass
class Check:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name} ({self.seconds:.1f}s)"

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed),
                "seconds": self.seconds, "details": self.details}


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        chk = fn(*args, **kwargs)
        chk.seconds = time.perf_counter() - t0
        return chk
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# four atoms (v, x), two strata, stratum 1 sampled in full
REF_V = np.array([0.0, 1.0, 2.0, 3.0])
REF_X = np.array([1.0, 0.0, 1.0, 3.0])
REF_PROBS = np.array([0.25, 0.25, 0.20, 0.30])
REF_STRATUM = np.array([1, 1, 2, 2])
REF_P = {1: 1.0, 2: 0.5}
REF_CONST = 2.0


def reference_panel(v, x):
    """Three index functions: a constant, the payload, and a payload-auxiliary product."""
    v, x = np.asarray(v, float), np.asarray(x, float)
    return np.column_stack([np.full(v.shape, REF_CONST), x, x * v + v])


def reference_aux(v, cal):
    v = np.asarray(v, float)
    return np.column_stack([np.ones_like(v), v]) if cal == "c" else v[:, None]


def reference_model(cal: str = "c") -> DiscreteModel:
    return DiscreteModel(probs=REF_PROBS, stratum=REF_STRATUM, p=dict(REF_P),
                         panel=reference_panel(REF_V, REF_X), aux=reference_aux(REF_V, cal))


def reference_sample(N: int = 1000) -> TwoPhaseSample:
    """Phase-I and phase-II samples whose empirical laws equal the reference model."""
    model = reference_model()
    counts, sampled = balanced_sample_counts(model, N)
    atom = np.repeat(np.arange(model.K), counts)
    xi = np.concatenate([[1] * sampled[a] + [0] * (counts[a] - sampled[a])
                         for a in range(model.K)])
    x = np.where(xi == 1, REF_X[atom], np.nan)
    return TwoPhaseSample(ids=np.arange(1, N + 1), stratum=REF_STRATUM[atom], xi=xi,
                          v=REF_V[atom][:, None], x=x[:, None],
                          y=REF_V[atom], delta=np.zeros(N, dtype=int))


def mc_process_draws(sample: TwoPhaseSample, B: int, rng, flavor: str,
                     boot_variant: str | None = None, cal: str | None = None,
                     chunk: int = 2000) -> np.ndarray:
    """B draws (B, 3) of a bootstrap process on the reference panel."""
    v = sample.v[:, 0]
    panel = FunctionPanel.from_values(reference_panel(v, np.nan_to_num(sample.x[:, 0])), sample)
    aux = reference_aux(v, cal) if cal else None
    orig = solve_calibration(sample, cal, V=aux) if cal else None
    out = []
    for start in range(0, B, chunk):
        m = min(chunk, B - start)
        w1 = phase1_weights(sample, rng, size=m)
        w2 = phase2_weights(sample, rng, size=m)
        W = w1 * w2
        if boot_variant is None:
            out.append(boot_process_value(panel, sample, W, flavor))
            continue
        g = np.empty_like(W)
        last = None
        for b in range(m):
            last = solve_calibration(sample, boot_variant, w2=w2[b], V=aux)
            g[b] = last.g_values
        out.append(boot_process_value(panel, sample, W, flavor, boot_calibration=last,
                                      calibration=orig, boot_g=g))
    return np.vstack(out)


def _compare(mc, oracle, rel_tol, floor=0.01):
    mask = np.abs(oracle) > floor
    rel = np.where(mask, np.abs(mc - oracle) / np.where(mask, np.abs(oracle), 1.0), 0.0)
    return bool(np.all(rel[mask] <= rel_tol)), float(rel[mask].max()) if mask.any() else 0.0


@_timed
def check_covariance(B: int = 20000, seed: int = 2024, N: int = 1000,
                     rel_tol: float = 0.05) -> Check:
    """MC covariance of uncentered/centered bootstrap processes versus the limit."""
    sample = reference_sample(N)
    rng = np.random.default_rng(seed)
    cases = [
        ("uncentered-plain", None, None, "uncentered"),
        ("centered-plain", None, None, "plain"),
        ("uncentered-cal", "bc", "c", "uncentered"),
        ("uncentered-cal", "bsc", "c", "uncentered"),
        ("uncentered-cal", "bcc", "cc", "uncentered"),
        ("centered-cal", "bc", "c", "plain"),
        ("centered-cal", "bcc", "cc", "recentered"),
    ]
    details = {}
    ok = True
    for flavor, bv, cal, oflavor in cases:
        draws = mc_process_draws(sample, B, rng, flavor, bv, cal)
        mc = np.cov(draws, rowvar=False)
        oracle = limit_covariance_matrix(reference_model(cal or "c"), oflavor, cal)
        passed, worst = _compare(mc, oracle, rel_tol)
        key = flavor if bv is None else f"{flavor}:{bv}"
        details[key] = {"mc": mc, "oracle": oracle, "max_rel_err": worst, "passed": passed}
        ok &= passed
    const_tilde = details["uncentered-plain"]["mc"][0, 0]
    const_hat = details["centered-plain"]["mc"][0, 0]
    distinguish = abs(const_tilde - REF_CONST ** 2) <= rel_tol * REF_CONST ** 2 and const_hat < 1e-12
    details["constant_variance"] = {"uncentered": const_tilde, "centered": const_hat,
                                    "target_uncentered": REF_CONST ** 2, "passed": bool(distinguish)}
    return Check("covariance_vs_oracle", bool(ok and distinguish), details)


@_timed
def check_phase2_weight_sums(draws: int = 10**6, seed: int = 7,
                             designs=((9, 3), (10, 3), (181, 54))) -> Check:
    """Every phase-II draw sums to n_j within the stratum."""
    rng = np.random.default_rng(seed)
    details = {}
    ok = True
    for N_j, n_j in designs:
        bad = 0
        for start in range(0, draws, 250000):
            m = min(250000, draws - start)
            w, _ = stratum_phase2_weights(N_j, n_j, rng, size=m)
            bad += int(np.sum(w.sum(axis=1) != n_j))
        details[f"{N_j},{n_j}"] = {"violations": bad, "draws": draws}
        ok &= bad == 0
    return Check("phase2_weight_sums", ok, details)


def _chisq_pvalue(counts: dict, pmf: dict, total: int) -> float:
    keys = sorted(pmf)
    expected = np.array([float(pmf[k]) * total for k in keys])
    observed = np.array([counts.get(k, 0) for k in keys], dtype=float)
    unexpected = sum(c for k, c in counts.items() if k not in pmf)
    if unexpected:
        return 0.0
    if len(keys) == 1:
        return 1.0
    # pool sparse cells so every expected count is at least 5
    order = np.argsort(expected)
    e_pool, o_pool = [], []
    acc_e = acc_o = 0.0
    for i in order:
        acc_e += expected[i]
        acc_o += observed[i]
        if acc_e >= 5:
            e_pool.append(acc_e)
            o_pool.append(acc_o)
            acc_e = acc_o = 0.0
    if acc_e > 0:
        if e_pool:
            e_pool[-1] += acc_e
            o_pool[-1] += acc_o
        else:
            e_pool.append(acc_e)
            o_pool.append(acc_o)
    if len(e_pool) < 2:
        return 1.0
    return float(stats.chisquare(o_pool, e_pool).pvalue)


@_timed
def check_phase2_pmf(draws: int = 10**5, seed: int = 11, max_N: int = 8,
                     alpha: float = 0.001) -> Check:
    """Empirical phase-II weight vectors versus the enumerated pmf, all N_j <= max_N."""
    rng = np.random.default_rng(seed)
    details = {}
    ok = True
    for N_j in range(1, max_N + 1):
        for n_j in range(1, N_j + 1):
            pmf = phase2_weight_pmf(N_j, n_j)
            w, _ = stratum_phase2_weights(N_j, n_j, rng, size=draws)
            uniq, cnt = np.unique(w, axis=0, return_counts=True)
            counts = {tuple(int(a) for a in u): int(c) for u, c in zip(uniq, cnt)}
            pval = _chisq_pvalue(counts, pmf, draws)
            details[f"{N_j},{n_j}"] = {"pvalue": pval, "cells": len(pmf)}
            ok &= pval > alpha
    return Check("phase2_exact_pmf", ok, details)


@_timed
def check_phase1_moments(draws: int = 10**6, seed: int = 5,
                         fractions=(0.1, 0.3, 0.5, 1.0)) -> Check:
    """Phase-I weights: mean within 3 s.e. of 1, variance within 2% of p/(2-p)."""
    rng = np.random.default_rng(seed)
    details = {}
    ok = True
    for p in fractions:
        N_j = 1000
        n_j = int(round(p * N_j))
        sample = TwoPhaseSample(ids=np.arange(N_j), stratum=np.ones(N_j, dtype=int),
                                xi=np.r_[np.ones(n_j, dtype=int), np.zeros(N_j - n_j, dtype=int)],
                                v=np.zeros((N_j, 0)), x=np.zeros((N_j, 0)),
                                y=np.zeros(N_j), delta=np.zeros(N_j, dtype=int))
        w = phase1_weights(sample, rng, size=draws // N_j).ravel()
        target = phase1_variance(p)
        mean, var = float(w.mean()), float(w.var(ddof=1))
        se = np.sqrt(target / w.size)
        passed = abs(mean - 1) <= 3 * se and abs(var - target) <= 0.02 * target and w.min() > 0
        details[str(p)] = {"mean": mean, "var": var, "target_var": target,
                           "min": float(w.min()), "passed": bool(passed)}
        ok &= passed
    return Check("phase1_moments", ok, details)


def run_suite(quick: bool = False, seed: int = 0) -> list[Check]:
    scale = 10 if quick else 1
    return [
        check_phase2_weight_sums(draws=10**6 // scale, seed=seed + 7),
        check_phase2_pmf(draws=10**5 // scale, seed=seed + 11),
        check_phase1_moments(draws=10**6 // scale, seed=seed + 5),
        check_covariance(B=20000 // scale, seed=seed + 2024,
                         rel_tol=0.15 if quick else 0.05),
    ]


__all__ = ["Check", "reference_model", "reference_sample", "reference_panel",
           "mc_process_draws", "check_covariance", "check_phase2_weight_sums",
           "check_phase2_pmf", "check_phase1_moments", "run_suite"]
