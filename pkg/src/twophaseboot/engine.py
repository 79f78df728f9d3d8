"""Bootstrap replication and summaries.

Replicate ``b`` draws its phase-I and phase-II weights from two dedicated
streams derived from ``(seed, b, phase)``, so results do not depend on the
order in which replicates run or on how they are split across workers.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import serialize
from .calibration import (
    BOOT_VARIANTS,
    METHODS,
    auxiliary_matrix,
    check_boot_variant,
    original_variant,
    solve_calibration,
)
from .cox import CoxOptions, fit_wle, weighted_cox_fit
from .design import TwoPhaseSample, validate_sample
from .errors import DataError, TooFewReplicates, TooManyFailures, TwoPhaseError
from .measures import FunctionPanel
from .weights import phase1_weights, phase2_weights

log = logging.getLogger(__name__)

ESTIMATORS = ("cox", "ipw-mean")
WEIGHT_MODES = ("full", "phase1", "phase2", "none")


def derive_substream(seed: int, replicate_index: int, phase: int) -> np.random.Generator:
    """Independent generator for one (replicate, phase) pair."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replicate_index), int(phase)))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class BootstrapPlan:
    """What to replicate and how.

    ``calibration`` is one of ``none``, ``c``, ``cc``, ``wcc``;
    ``boot_calibration`` one of ``bc``, ``bcc``, ``bsc``, ``bscc`` and
    defaults to the matched variant when a calibration is requested.
    ``weight_mode`` restricts the replicate weights to one phase (or to
    unit weights with ``none``) for diagnostics.
    """

    B: int = 1000
    estimator: str = "cox"
    panel: FunctionPanel | None = None
    calibration: str = "none"
    boot_calibration: str | None = None
    seed: int = 0
    workers: int = 1
    max_failure_frac: float = 0.05
    weight_mode: str = "full"
    phase1_bound: float | None = None
    cal_tol: float = 1e-9
    aux_base: np.ndarray | None = field(default=None, compare=False)
    cox_options: CoxOptions = CoxOptions()

    def resolved(self) -> "BootstrapPlan":
        if self.B < 1:
            raise DataError(f"B must be at least 1, got {self.B}")
        if self.estimator not in ESTIMATORS:
            raise DataError(f"unknown estimator {self.estimator!r}")
        if self.estimator == "ipw-mean" and self.panel is None:
            raise DataError("the ipw-mean estimator needs a function panel")
        if self.calibration not in METHODS:
            raise DataError(f"unknown calibration method {self.calibration!r}")
        if self.weight_mode not in WEIGHT_MODES:
            raise DataError(f"unknown weight mode {self.weight_mode!r}")
        if self.workers < 1:
            raise DataError("workers must be at least 1")
        boot = self.boot_calibration
        if boot is None and self.calibration != "none":
            boot = "bc" if self.calibration == "c" else "bcc"
        check_boot_variant(self.calibration, boot)
        return BootstrapPlan(**{**self.__dict__, "boot_calibration": boot})


@dataclass(frozen=True, eq=False)
class BootstrapSummary:
    estimates: np.ndarray
    converged: np.ndarray
    boot_mean: np.ndarray
    boot_var: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    center_plain: np.ndarray
    center_calibrated: np.ndarray | None
    center: np.ndarray
    center_kind: str
    failures: int
    standard_var_plain: np.ndarray | None = None
    standard_var_calibrated: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def B(self) -> int:
        return int(self.estimates.shape[0])

    @property
    def successes(self) -> int:
        return self.B - self.failures

    def to_dict(self) -> dict:
        return {
            "B": self.B,
            "successes": self.successes,
            "failures": self.failures,
            "boot_mean": self.boot_mean,
            "boot_var": self.boot_var,
            "boot_se": np.sqrt(np.diag(self.boot_var)),
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "center_kind": self.center_kind,
            "center": self.center,
            "center_plain": self.center_plain,
            "center_calibrated": self.center_calibrated,
            "standard_var_plain": self.standard_var_plain,
            "standard_var_calibrated": self.standard_var_calibrated,
            **self.info,
        }


def summarize(estimates, centers: dict | None = None, converged=None,
              level: float = 0.95) -> BootstrapSummary:
    """Bootstrap mean, covariance (denominator B - 1) and percentile interval.

    Rows of ``estimates`` flagged unconverged (or containing NaN) are
    excluded.  With a single successful row the covariance is NaN.  ``centers`` may carry ``plain``, ``calibrated`` and ``kind``.
    """
    est = np.asarray(estimates, dtype=float)
    if est.ndim == 1:
        est = est[:, None]
    ok = np.all(np.isfinite(est), axis=1)
    if converged is not None:
        ok &= np.asarray(converged, dtype=bool)
    good = est[ok]
    if good.shape[0] < 1:
        raise TooFewReplicates("no successful replicates")
    mean = good.mean(axis=0)
    if good.shape[0] == 1:
        # a single replicate carries no spread information
        var = np.full((est.shape[1], est.shape[1]), np.nan)
    else:
        var = np.atleast_2d(np.cov(good, rowvar=False, ddof=1))
    tail = 100 * (1 - level) / 2
    lo = np.percentile(good, tail, axis=0, method="linear")
    hi = np.percentile(good, 100 - tail, axis=0, method="linear")
    centers = centers or {}
    plain = np.asarray(centers.get("plain", np.full(est.shape[1], np.nan)), dtype=float)
    cal = centers.get("calibrated")
    cal = None if cal is None else np.asarray(cal, dtype=float)
    kind = centers.get("kind", "plain")
    center = cal if kind == "calibrated" else plain
    return BootstrapSummary(
        estimates=est, converged=ok, boot_mean=mean, boot_var=var,
        ci_lower=lo, ci_upper=hi, center_plain=plain, center_calibrated=cal,
        center=center, center_kind=kind, failures=int((~ok).sum()),
    )


@dataclass(frozen=True, eq=False)
class _Context:
    sample: TwoPhaseSample
    plan: BootstrapPlan
    aux: np.ndarray | None
    init: np.ndarray | None
    p: int


def _replicate(ctx: _Context, b: int):
    sample, plan = ctx.sample, ctx.plan
    rng1 = derive_substream(plan.seed, b, 1)
    rng2 = derive_substream(plan.seed, b, 2)
    w1 = phase1_weights(sample, rng1, bound=plan.phase1_bound)
    w2 = phase2_weights(sample, rng2)
    if plan.weight_mode == "none":
        w1 = np.ones(sample.N)
        w2 = sample.xi.astype(float)
    elif plan.weight_mode == "phase1":
        w2 = sample.xi.astype(float)
    elif plan.weight_mode == "phase2":
        w1 = np.ones(sample.N)
    a = w1 * w2 * sample.ipw()
    try:
        if plan.boot_calibration is not None:
            cal = solve_calibration(sample, plan.boot_calibration, w2=w2, V=ctx.aux,
                                    tol=plan.cal_tol)
            a = a * cal.g_values
        if plan.estimator == "cox":
            opts = CoxOptions(**{**plan.cox_options.__dict__, "init": tuple(ctx.init)})
            return weighted_cox_fit(sample, a, opts).theta_hat, True
        F = plan.panel.filled()
        return (a @ F) / sample.N, True
    except TwoPhaseError as exc:
        log.debug("replicate %d failed: %s", b, exc)
        return np.full(ctx.p, np.nan), False


def _run_chunk(ctx: _Context, indices):
    return [(b, *_replicate(ctx, b)) for b in indices]


def original_estimates(sample: TwoPhaseSample, plan: BootstrapPlan) -> dict:
    """Plain and (when requested) calibrated estimates on the original sample."""
    out = {"aux": None, "calibration": None}
    if plan.calibration != "none":
        aux = auxiliary_matrix(sample, plan.calibration, plan.aux_base)
        cal = solve_calibration(sample, original_variant(plan.calibration), V=aux,
                                tol=plan.cal_tol)
        out["aux"], out["calibration"] = aux, cal
    if plan.estimator == "cox":
        fit = fit_wle(sample, options=plan.cox_options)
        out["plain"] = fit.theta_hat
        out["standard_var_plain"] = fit.var_theta
        out["fit_plain"] = fit
        if out["calibration"] is not None:
            variant = original_variant(plan.calibration)
            fc = fit_wle(sample, sample.ipw() * out["calibration"].g_values,
                         variant=variant, V=out["aux"], options=plan.cox_options)
            out["calibrated"] = fc.theta_hat
            out["standard_var_calibrated"] = fc.var_theta
            out["fit_calibrated"] = fc
    else:
        F = plan.panel.filled()
        out["plain"] = sample.ipw() @ F / sample.N
        if out["calibration"] is not None:
            out["calibrated"] = (sample.ipw() * out["calibration"].g_values) @ F / sample.N
    return out


def run_bootstrap(sample: TwoPhaseSample, plan: BootstrapPlan,
                  order=None) -> BootstrapSummary:
    """Run ``plan.B`` replicates and summarise them.

    ``order`` optionally permutes the execution order of replicate indices
    (results are keyed by index, so the summary is unaffected).
    """
    validate_sample(sample)
    plan = plan.resolved()
    orig = original_estimates(sample, plan)
    p = len(np.atleast_1d(orig["plain"]))
    init = np.atleast_1d(orig["plain"]) if plan.estimator == "cox" else None
    ctx = _Context(sample=sample, plan=plan, aux=orig["aux"], init=init, p=p)

    indices = list(range(plan.B)) if order is None else [int(b) for b in order]
    if sorted(indices) != list(range(plan.B)):
        raise DataError("order must be a permutation of the replicate indices")
    results = {}
    if plan.workers == 1:
        for b, est, ok in _run_chunk(ctx, indices):
            results[b] = (est, ok)
    else:
        chunks = [indices[i::plan.workers] for i in range(plan.workers)]
        with ProcessPoolExecutor(max_workers=plan.workers) as ex:
            for part in ex.map(partial(_run_chunk, ctx), chunks):
                for b, est, ok in part:
                    results[b] = (est, ok)
    estimates = np.vstack([np.atleast_1d(results[b][0]) for b in range(plan.B)])
    converged = np.array([results[b][1] for b in range(plan.B)])
    failures = int((~converged).sum())
    if failures > plan.max_failure_frac * plan.B:
        raise TooManyFailures(f"{failures} of {plan.B} replicates failed")

    kind = "calibrated" if plan.boot_calibration in ("bc", "bcc") else "plain"
    centers = {"plain": np.atleast_1d(orig["plain"]), "kind": kind,
               "calibrated": None if "calibrated" not in orig else np.atleast_1d(orig["calibrated"])}
    summary = summarize(estimates, centers, converged)
    info = {
        "estimator": plan.estimator,
        "calibration": plan.calibration,
        "boot_calibration": plan.boot_calibration,
        "seed": plan.seed,
        "N": sample.N,
        "n": sample.n,
    }
    return BootstrapSummary(
        **{**summary.__dict__,
           "standard_var_plain": orig.get("standard_var_plain"),
           "standard_var_calibrated": orig.get("standard_var_calibrated"),
           "info": info})


def write_replicates_csv(summary: BootstrapSummary, path) -> None:
    p = summary.estimates.shape[1]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["replicate"] + [f"theta_{i + 1}" for i in range(p)] + ["converged"])
        for b, (row, ok) in enumerate(zip(summary.estimates, summary.converged)):
            out.writerow([b] + [serialize.fmt_float(v) for v in row] + [int(ok)])


def write_summary_json(summary: BootstrapSummary, path) -> None:
    serialize.dump(summary.to_dict(), path)


__all__ = ["BootstrapPlan", "BootstrapSummary", "derive_substream", "summarize",
           "run_bootstrap", "original_estimates", "write_replicates_csv",
           "write_summary_json", "BOOT_VARIANTS"]
