"""Weighted Cox partial likelihood with Breslow ties.

The weighted log partial likelihood is

    sum_i w_i delta_i [x_i' theta - log sum_{k: y_k >= y_i} w_k exp(x_k' theta)]

and is maximised by Newton-Raphson.  The same code serves plain IPW,
calibrated and bootstrap fits; only the weight vector changes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .calibration import CENTERED, project_Q
from .design import TwoPhaseSample
from .errors import (
    DataError,
    Nonconvergence,
    NoEvents,
    SeparationDetected,
    SingularInformation,
)


@dataclass(frozen=True)
class CoxOptions:
    tol: float = 1e-8
    max_iter: int = 50
    max_halvings: int = 30
    theta_bound: float = 50.0
    init: tuple | None = None


@dataclass(frozen=True, eq=False)
class BreslowBaseline:
    """Right-continuous step function for the cumulative baseline hazard."""

    times: np.ndarray
    cumhaz: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right")
        padded = np.concatenate([[0.0], self.cumhaz])
        return padded[idx]


@dataclass(frozen=True, eq=False)
class CoxFit:
    theta_hat: np.ndarray
    info: np.ndarray
    baseline: BreslowBaseline
    score: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    n_events: int
    n_total: int
    influence: np.ndarray | None = None
    sigma_hat: np.ndarray | None = None

    @property
    def var_theta(self) -> np.ndarray:
        """Plug-in variance of theta_hat (``sigma_hat / N``)."""
        if self.sigma_hat is None:
            raise DataError("standard variance has not been computed for this fit")
        return self.sigma_hat / self.n_total

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.var_theta))


class _RiskSets:
    """Sorted-time bookkeeping shared by all evaluations for one weight vector."""

    def __init__(self, y, delta, X, w):
        order = np.argsort(y, kind="stable")
        self.order = order
        self.y = y[order]
        self.d = delta[order].astype(float)
        self.X = X[order]
        self.w = w[order]
        # first position of each unit's tie group: risk set is [first, end)
        self.first = np.searchsorted(self.y, self.y, side="left")
        self.last = np.searchsorted(self.y, self.y, side="right") - 1


def _rev_cumsum(a):
    return np.cumsum(a[::-1], axis=0)[::-1]


def _sums(rs, theta):
    eta = rs.X @ theta
    # shift for overflow safety; cancels in every ratio below
    shift = eta.max() if eta.size else 0.0
    r = rs.w * np.exp(eta - shift)
    S0 = _rev_cumsum(r)[rs.first]
    S1 = _rev_cumsum(r[:, None] * rs.X)[rs.first]
    S2 = _rev_cumsum(r[:, None, None] * rs.X[:, :, None] * rs.X[:, None, :])[rs.first]
    return eta, shift, S0, S1, S2


def _evaluate(rs, theta):
    eta, shift, S0, S1, S2 = _sums(rs, theta)
    wd = rs.w * rs.d
    ev = wd > 0
    xbar = S1[ev] / S0[ev, None]
    loglik = float(np.sum(wd[ev] * (eta[ev] - shift - np.log(S0[ev]))))
    score = (wd[ev, None] * (rs.X[ev] - xbar)).sum(axis=0)
    cov = S2[ev] / S0[ev, None, None] - xbar[:, :, None] * xbar[:, None, :]
    info = (wd[ev, None, None] * cov).sum(axis=0)
    return loglik, score, info


def _prepare(sample: TwoPhaseSample, weights):
    w = np.asarray(weights, dtype=float)
    if w.shape != (sample.N,):
        raise DataError(f"weight vector has shape {w.shape}, expected ({sample.N},)")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DataError("weights must be finite and nonnegative")
    if np.any(w[~sample.sampled] != 0):
        raise DataError("weights must vanish on unsampled units")
    keep = w > 0
    X = sample.x[keep]
    if X.shape[1] == 0:
        raise DataError("sample carries no phase-II covariates")
    if not np.all(np.isfinite(X)):
        raise DataError("covariates missing on a unit with positive weight")
    return keep, _RiskSets(sample.y[keep], sample.delta[keep], X, w[keep])


def weighted_cox_fit(sample: TwoPhaseSample, weights, options: CoxOptions = CoxOptions()) -> CoxFit:
    """Maximise the weighted log partial likelihood.

    Parameters
    ----------
    sample : TwoPhaseSample
        Uses ``y``, ``delta`` and the phase-II payload ``x`` as covariates.
    weights : (N,) array
        Nonnegative unit weights, zero on unsampled units (for example
        ``sample.ipw()`` or bootstrap-multiplied IPW weights).
    options : CoxOptions

    Returns
    -------
    CoxFit
        ``influence`` and ``sigma_hat`` are left empty; see
        :func:`influence_contributions` and :func:`standard_variance`.
    """
    keep, rs = _prepare(sample, weights)
    n_events = int(np.sum((rs.w > 0) & (rs.d > 0)))
    if n_events == 0:
        raise NoEvents("no events carry positive weight")
    p = rs.X.shape[1]
    theta = np.zeros(p) if options.init is None else np.asarray(options.init, dtype=float).copy()
    loglik, score, info = _evaluate(rs, theta)
    it = 0
    while np.max(np.abs(score)) > options.tol:
        if it >= options.max_iter:
            raise Nonconvergence(f"Cox fit did not converge in {options.max_iter} iterations "
                                 f"(score {np.max(np.abs(score)):.3g})")
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise SingularInformation("weighted information is singular") from None
        t = 1.0
        for _ in range(options.max_halvings + 1):
            cand = theta + t * step
            ll_c, sc_c, in_c = _evaluate(rs, cand)
            if ll_c >= loglik - 1e-12 * abs(loglik):
                break
            t *= 0.5
        else:
            raise Nonconvergence("Cox step halving failed")
        theta, loglik, score, info = cand, ll_c, sc_c, in_c
        it += 1
        if np.linalg.norm(theta) > options.theta_bound:
            raise SeparationDetected(f"|theta| exceeded {options.theta_bound}: "
                                     "monotone likelihood")
    eigs = np.linalg.eigvalsh(info)
    if eigs.min() <= 0:
        raise SingularInformation("weighted information is not positive definite")
    # a vanishing score with vanishing information means theta ran off to infinity
    ref = np.linalg.eigvalsh(_evaluate(rs, np.zeros(p))[2]).max()
    if eigs.min() < 1e-6 * ref:
        raise SeparationDetected(f"information collapsed at theta={theta}: monotone likelihood")
    baseline = breslow_baseline(rs, theta)
    return CoxFit(theta_hat=theta, info=info, baseline=baseline, score=score,
                  loglik=loglik, converged=True, iterations=it, n_events=n_events,
                  n_total=sample.N)


def breslow_baseline(rs: _RiskSets, theta) -> BreslowBaseline:
    eta, shift, S0, _, _ = _sums(rs, theta)
    wd = rs.w * rs.d
    # hazard jumps per distinct event time; S0 carries the exp(-shift) factor
    jumps = np.where(wd > 0, wd / (S0 * np.exp(shift)), 0.0)
    times, start = np.unique(rs.y, return_index=True)
    per_time = np.add.reduceat(jumps, start) if jumps.size else jumps
    has_event = np.add.reduceat(wd, start) > 0 if wd.size else wd > 0
    return BreslowBaseline(times=times[has_event], cumhaz=np.cumsum(per_time[has_event]))


def score_residuals(sample: TwoPhaseSample, weights, theta) -> np.ndarray:
    """Per-unit martingale score residuals at ``theta`` (NaN on zero-weight units).

    Residual i is ``delta_i (x_i - xbar(y_i)) - exp(x_i' theta) *
    sum_{events k: y_k <= y_i} w_k (x_i - xbar(y_k)) / S0(y_k)``; their
    weighted sum is the score.
    """
    keep, rs = _prepare(sample, weights)
    theta = np.asarray(theta, dtype=float)
    eta, shift, S0, S1, _ = _sums(rs, theta)
    wd = rs.w * rs.d
    xbar = S1 / S0[:, None]
    hz = np.where(wd > 0, wd / S0, 0.0)
    # cumulative sums up to and including each unit's last tied time
    A = np.cumsum(hz)[rs.last]
    Bm = np.cumsum(hz[:, None] * xbar, axis=0)[rs.last]
    r = rs.d[:, None] * (rs.X - xbar) - np.exp(eta - shift)[:, None] * (rs.X * A[:, None] - Bm)
    out = np.full((sample.N, rs.X.shape[1]), np.nan)
    pos = np.flatnonzero(keep)[rs.order]
    out[pos] = r
    return out


def influence_contributions(fit: CoxFit, sample: TwoPhaseSample, weights) -> np.ndarray:
    """Estimated influence ``(info / N)^{-1} r_i`` for every positively weighted unit."""
    r = score_residuals(sample, weights, fit.theta_hat)
    try:
        inv = np.linalg.inv(fit.info / fit.n_total)
    except np.linalg.LinAlgError:
        raise SingularInformation("weighted information is singular") from None
    return r @ inv.T


def stratum_covariances(values, sample: TwoPhaseSample) -> dict:
    """Within-stratum sample covariance (denominator n_j - 1) over sampled units."""
    out = {}
    for s in sample.strata:
        rows = values[sample.sampled & (sample.stratum == s.stratum_id)]
        p = values.shape[1]
        if rows.shape[0] < 2:
            out[s.stratum_id] = np.zeros((p, p))
        else:
            out[s.stratum_id] = np.atleast_2d(np.cov(rows, rowvar=False, ddof=1))
    return out


def standard_variance(fit: CoxFit, sample: TwoPhaseSample, influence=None,
                      variant: str | None = None, V=None) -> np.ndarray:
    """Plug-in asymptotic variance of ``sqrt(N) (theta_hat - theta)``.

    ``inv(info / N) + sum_j (N_j / N) ((1 - p_j) / p_j) Cov_j(l)`` where l
    is the influence contribution, first residualised against the
    calibration span when ``variant`` is given.
    """
    l = fit.influence if influence is None else influence
    if l is None:
        raise DataError("influence contributions are required")
    l = np.asarray(l, dtype=float)
    if variant is not None:
        Ql = project_Q(l, sample, variant, V=V, weights=sample.ipw())
        l = l - Ql
    N = sample.N
    sigma = np.linalg.inv(fit.info / N)
    covs = stratum_covariances(l, sample)
    for s in sample.strata:
        p = s.n_j / s.N_j
        if p < 1:
            sigma = sigma + (s.N_j / N) * ((1 - p) / p) * covs[s.stratum_id]
    return 0.5 * (sigma + sigma.T)


def fit_wle(sample: TwoPhaseSample, weights=None, variant: str | None = None, V=None,
            options: CoxOptions = CoxOptions()) -> CoxFit:
    """Fit, attach influence contributions and the plug-in variance.

    ``weights`` defaults to the IPW weights; pass calibrated weights together
    with ``variant``/``V`` for a calibrated WLE.
    """
    w = sample.ipw() if weights is None else weights
    fit = weighted_cox_fit(sample, w, options)
    infl = influence_contributions(fit, sample, w)
    sigma = standard_variance(fit, sample, infl, variant=variant, V=V)
    return replace(fit, influence=infl, sigma_hat=sigma)


__all__ = ["CoxOptions", "CoxFit", "BreslowBaseline", "weighted_cox_fit",
           "score_residuals", "influence_contributions", "standard_variance",
           "stratum_covariances", "fit_wle", "CENTERED"]
