"""Acceptance criteria, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line to the terminal.  The
module also runs standalone: ``python tests/test_acceptance.py``.
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import make_sample, random_design  # noqa: E402
from twophaseboot import serialize  # noqa: E402
from twophaseboot.calibration import VARIANTS, calibration_residual, solve_calibration  # noqa: E402
from twophaseboot.cox import fit_wle  # noqa: E402
from twophaseboot.engine import BootstrapPlan, run_bootstrap  # noqa: E402
from twophaseboot.errors import Collinear, NoConvergence  # noqa: E402
from twophaseboot.measures import ipw_mean  # noqa: E402
from twophaseboot.simulate import CoxSimConfig, generate_cox_sample  # noqa: E402
from twophaseboot.validation import (  # noqa: E402
    check_covariance,
    check_phase1_moments,
    check_phase2_pmf,
    check_phase2_weight_sums,
)
from twophaseboot.weights import phase2_weights  # noqa: E402

COX_SEED = 1
BOOT_SEED = 2024
B = 1000
COX_CONFIG = CoxSimConfig(N=400, theta=math.log(2.0), lambda0=0.1, cens_upper=1.1,
                          sens=0.9, spec=0.9, exposure_prev=0.5, phase2_fraction=0.3,
                          seed=COX_SEED)

_cache = {}


def report(number, passed, message, seconds):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {message} ({seconds:.1f}s)"
    return passed, line


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def criterion_1():
    chk, sec = _timed(lambda: check_phase2_weight_sums(draws=10**6))
    bad = {k: v["violations"] for k, v in chk.details.items()}
    ok = chk.passed and sec < 30
    return report(1, ok, f"phase-II weight sums exact over 1e6 draws, violations {bad}", sec)


def criterion_2():
    chk, sec = _timed(lambda: check_phase2_pmf(draws=10**5, max_N=8, alpha=0.001))
    worst = min(v["pvalue"] for v in chk.details.values())
    ok = chk.passed and sec < 60
    return report(2, ok, f"{len(chk.details)} designs with N_j <= 8, min chi-square p {worst:.4f}",
                  sec)


def criterion_3():
    chk, sec = _timed(lambda: check_phase1_moments(draws=10**6))
    parts = ", ".join(f"p={p}: var {d['var']:.4f} vs {d['target_var']:.4f}"
                      for p, d in chk.details.items())
    return report(3, chk.passed and sec < 30, parts, sec)


def _calibration_designs():
    rng = np.random.default_rng(4)
    solved = failed = bc_worst = worst = 0
    for _ in range(50):
        s = random_design(rng)
        w2 = phase2_weights(s, rng)
        for variant in VARIANTS:
            V = np.column_stack([np.ones(s.N), s.v]) if variant in ("c", "bc", "bsc") else s.v
            try:
                res = solve_calibration(s, variant, w2=w2 if variant.startswith("b") else None,
                                        V=V)
            except (NoConvergence, Collinear):
                failed += 1
                continue
            solved += 1
            r = calibration_residual(s, w2, res.alpha_hat, variant, V=V)
            worst = max(worst, float(np.max(np.abs(r))))
            if variant == "c":
                bc = solve_calibration(s, "bc", w2=s.xi.astype(float), V=V)
                bc_worst = max(bc_worst, float(np.max(np.abs(bc.g_values - res.g_values))),
                               float(np.max(np.abs(bc.alpha_hat - res.alpha_hat))))
    return solved, failed, worst, bc_worst


def criterion_4():
    (solved, failed, worst, bc_worst), sec = _timed(_calibration_designs)
    ok = worst <= 1e-9 and bc_worst <= 1e-10 and solved > 0 and sec < 30
    msg = (f"{solved} solves (+{failed} infeasible/collinear) max residual {worst:.2e}; "
           f"bc(w2=1) vs c {bc_worst:.2e}")
    return report(4, ok, msg, sec)


def criterion_5():
    chk, sec = _timed(lambda: check_covariance(B=20000, seed=2024, N=1000, rel_tol=0.05))
    errs = ", ".join(f"{k} {v['max_rel_err']:.3f}" for k, v in chk.details.items()
                     if "max_rel_err" in v)
    const = chk.details["constant_variance"]
    msg = (f"max rel err {errs}; const var tilde {const['uncentered']:.3f} (c^2=4), "
           f"hat {const['centered']:.1e}")
    return report(5, chk.passed and sec < 180, msg, sec)


def _cox_runs(workers=1, key="first"):
    if key in _cache:
        return _cache[key]
    t0 = time.perf_counter()
    sample = generate_cox_sample(COX_CONFIG)
    plain = run_bootstrap(sample, BootstrapPlan(B=B, seed=BOOT_SEED, workers=workers))
    bcc = run_bootstrap(sample, BootstrapPlan(B=B, seed=BOOT_SEED, calibration="wcc",
                                              boot_calibration="bcc", workers=workers))
    bscc = run_bootstrap(sample, BootstrapPlan(B=B, seed=BOOT_SEED, calibration="wcc",
                                               boot_calibration="bscc", workers=workers))
    out = {"sample": sample, "plain": plain, "bcc": bcc, "bscc": bscc,
           "seconds": time.perf_counter() - t0}
    _cache[key] = out
    return out


def criterion_6():
    runs, sec = _timed(_cox_runs)
    sample, plain = runs["sample"], runs["plain"]
    fit = fit_wle(sample)
    wle = float(fit.theta_hat[0])
    std_var = float(fit.var_theta[0, 0])
    boot_var = float(plain.boot_var[0, 0])
    boot_mean = float(plain.boot_mean[0])
    cens = float(1 - sample.delta.mean())
    a = abs(boot_var - std_var) <= 0.25 * std_var
    b = abs(boot_mean - wle) <= 2 * math.sqrt(boot_var)
    c = 0.90 <= cens <= 0.95
    msg = (f"WLE {wle:.3f} (var {std_var:.3f}); boot mean {boot_mean:.3f} var {boot_var:.3f}; "
           f"(a) {a} (b) {b} (c) censoring {cens:.3f} {c}")
    return report(6, a and b and c and runs["seconds"] < 300, msg, sec)


def criterion_7():
    runs, sec = _timed(_cox_runs)
    bcc, bscc = runs["bcc"], runs["bscc"]
    plain = float(bcc.center_plain[0])
    cal = float(bcc.center_calibrated[0])
    m_bcc, m_bscc = float(bcc.boot_mean[0]), float(bscc.boot_mean[0])
    mc_se = max(math.sqrt(bcc.boot_var[0, 0] / bcc.successes),
                math.sqrt(bscc.boot_var[0, 0] / bscc.successes))
    gap = abs(plain - cal)
    if gap <= 2 * mc_se:
        return report(7, True, f"indistinguishable: |WLE - cal WLE| = {gap:.4f} "
                                f"<= 2 MC s.e. = {2 * mc_se:.4f}", sec)
    single_ok = abs(m_bscc - plain) < abs(m_bscc - cal)
    matched_ok = abs(m_bcc - cal) < abs(m_bcc - plain)
    msg = (f"WLE {plain:.3f}, calibrated {cal:.3f}; bscc mean {m_bscc:.3f} "
           f"(near plain: {single_ok}); bcc mean {m_bcc:.3f} (near calibrated: {matched_ok})")
    return report(7, single_ok and matched_ok, msg, sec)


def criterion_8():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    N = 60
    stratum = np.repeat([1, 2, 3], 20)
    x = rng.normal(size=N)
    t = rng.exponential(np.exp(-0.5 * x))
    c = rng.uniform(0, 2, size=N)
    s = make_sample(stratum, np.ones(N, dtype=int), v=rng.normal(size=N), x=x,
                    y=np.minimum(t, c), delta=(t <= c).astype(int))
    fit = fit_wle(s)
    inv_info = np.linalg.inv(fit.info / N)
    var_ok = np.array_equal(fit.sigma_hat, inv_info)
    w2 = phase2_weights(s, rng, size=1000)
    w2_ok = bool(np.all(w2 == 1.0))
    F = np.column_stack([x, x ** 2, np.ones(N)])
    mean_ok = (np.array_equal(ipw_mean(F, s), np.ones(N) @ F / N)
               and np.allclose(ipw_mean(F, s), F.mean(axis=0), rtol=1e-14, atol=0))
    sec = time.perf_counter() - t0
    msg = f"Sigma = inv(I) exactly {var_ok}; W2 == 1 {w2_ok}; ipw mean == sample mean {mean_ok}"
    return report(8, var_ok and w2_ok and mean_ok and sec < 1, msg, sec)


def _summary_bytes(runs):
    return {k: serialize.dumps(runs[k].to_dict()).encode() for k in ("plain", "bcc", "bscc")}


def criterion_9():
    t0 = time.perf_counter()
    first = _summary_bytes(_cox_runs())
    second = _summary_bytes(_cox_runs(key="second"))
    parallel = _summary_bytes(_cox_runs(workers=2, key="parallel"))
    same_seed = first == second
    same_workers = first == parallel
    sec = time.perf_counter() - t0
    msg = f"rerun byte-identical {same_seed}; workers=2 byte-identical {same_workers}"
    return report(9, same_seed and same_workers and sec < 600, msg, sec)


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9]


@pytest.mark.parametrize("criterion", CRITERIA, ids=lambda f: f.__name__)
def test_criterion(criterion, capsys):
    passed, line = criterion()
    with capsys.disabled():
        print("\n" + line)
    assert passed, line


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    for _, line in results:
        print(line)
    sys.exit(0 if all(p for p, _ in results) else 1)
