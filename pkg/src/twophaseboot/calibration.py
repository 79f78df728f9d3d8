"""Calibration of inverse-probability weights.

The calibrated weight of a sampled unit is ``xi / pi0 * G(arg . alpha)``
where the argument row is ``V`` (plain calibration) or
``(1/pi0 - 1) * (V - P_N V)`` (centered calibration).  Six estimating
equations are supported:

========  ==============================  =========================
variant   weighted quantity               right-hand side
========  ==============================  =========================
c         P_N^pi G_c V                    P_N V
cc        P_N^pi G_cc (V - P_N V)         0
bc        P_N^pi W2 G_c V                 P_N V
bcc       P_N^pi W2 G_cc (V - P_N V)      0
bsc       P_N^pi W2 G_c V                 P_N^pi V
bscc      P_N^pi W2 G_cc (V - P_N^pi V)   0
========  ==============================  =========================

Bootstrap variants only see the phase-II weights ``W2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .design import TwoPhaseSample
from .errors import (
    Collinear,
    DataError,
    NoConvergence,
    SingularJacobian,
    SingularMoment,
    VariantRequiresWeights,
)

VARIANTS = ("c", "cc", "bc", "bcc", "bsc", "bscc")
BOOT_VARIANTS = ("bc", "bcc", "bsc", "bscc")
CENTERED = ("cc", "bcc", "bscc")
METHODS = ("none", "c", "cc", "wcc")


@dataclass(frozen=True)
class GFunction:
    """Bounded logistic link ``L + (U - L) * expit(sigma * t + b)``.

    The offset ``b`` is fixed by ``G(0) = 1``; the defaults give
    ``G'(0) = 1``.
    """

    lower: float = 0.0
    upper: float = 2.0
    sigma: float = 2.0

    def __post_init__(self):
        if not self.lower < 1.0 < self.upper:
            raise DataError("G bounds must satisfy lower < 1 < upper")
        if self.sigma <= 0:
            raise DataError("G slope must be positive")

    @property
    def offset(self) -> float:
        return float(logit((1.0 - self.lower) / (self.upper - self.lower)))

    def __call__(self, t):
        return self.lower + (self.upper - self.lower) * expit(self.sigma * np.asarray(t) + self.offset)

    def deriv(self, t):
        e = expit(self.sigma * np.asarray(t) + self.offset)
        return (self.upper - self.lower) * self.sigma * e * (1.0 - e)


DEFAULT_G = GFunction()


def g_eval(t, g: GFunction = DEFAULT_G):
    return g(t)


def g_deriv(t, g: GFunction = DEFAULT_G):
    return g.deriv(t)


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    variant: str
    alpha_hat: np.ndarray
    residual_norm: float
    iterations: int
    g_values: np.ndarray


def _aux(sample, V):
    V = sample.v if V is None else np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[0] != sample.N:
        raise DataError(f"auxiliary matrix has {V.shape[0]} rows, sample has {sample.N}")
    return V


class _Equation:
    """Residual and Jacobian of one calibration equation, with alpha free."""

    def __init__(self, sample, variant, w2=None, V=None, g=DEFAULT_G):
        if variant not in VARIANTS:
            raise DataError(f"unknown calibration variant {variant!r}")
        if variant in BOOT_VARIANTS and w2 is None:
            raise VariantRequiresWeights(f"variant {variant} needs phase-II weights")
        V = _aux(sample, V)
        N = sample.N
        pi = sample.pi0()
        a = sample.ipw()
        if variant in BOOT_VARIANTS:
            a = a * np.asarray(w2, dtype=float)
        mean_v = V.sum(axis=0) / N
        ipw_mean_v = (sample.ipw()[:, None] * V).sum(axis=0) / N
        if variant in CENTERED:
            arg_rows = (1.0 / pi - 1.0)[:, None] * (V - mean_v)
            center = ipw_mean_v if variant == "bscc" else mean_v
            rhs_rows = V - center
            target = np.zeros(V.shape[1])
        else:
            arg_rows = V
            rhs_rows = V
            target = ipw_mean_v if variant == "bsc" else mean_v
        keep = a != 0
        self.N = N
        self.g = g
        self.a = a[keep]
        self.arg_rows = arg_rows[keep]
        self.rhs_rows = rhs_rows[keep]
        self.full_arg_rows = arg_rows
        self.target = target
        self.k = V.shape[1]

    def check_rank(self):
        if self.k == 0:
            raise Collinear("no auxiliary columns")
        for rows in (self.arg_rows, self.rhs_rows):
            if rows.shape[0] < self.k or np.linalg.matrix_rank(rows) < self.k:
                raise Collinear("auxiliary variables are collinear on the sampled set")

    def residual(self, alpha):
        gv = self.g(self.arg_rows @ alpha)
        return (self.a * gv) @ self.rhs_rows / self.N - self.target

    def jacobian(self, alpha):
        d = self.g.deriv(self.arg_rows @ alpha)
        return (self.rhs_rows * (self.a * d)[:, None]).T @ self.arg_rows / self.N


def calibration_residual(sample: TwoPhaseSample, w2, alpha, variant: str,
                         V=None, g: GFunction = DEFAULT_G) -> np.ndarray:
    """Left-minus-right side of the variant's calibration equation at ``alpha``.

    ``w2`` is ignored by the non-bootstrap variants ``c`` and ``cc``.
    """
    eq = _Equation(sample, variant, w2, V, g)
    return eq.residual(np.asarray(alpha, dtype=float).reshape(eq.k))


def solve_calibration(sample: TwoPhaseSample, variant: str, w2=None, V=None,
                      tol: float = 1e-9, max_iter: int = 100,
                      max_halvings: int = 30,
                      g: GFunction = DEFAULT_G) -> CalibrationResult:
    """Solve a calibration equation by damped Newton from alpha = 0.

    Parameters
    ----------
    sample : TwoPhaseSample
    variant : {'c', 'cc', 'bc', 'bcc', 'bsc', 'bscc'}
    w2 : (N,) array, optional
        Phase-II bootstrap weights; required for the bootstrap variants.
    V : (N, k) array, optional
        Auxiliary matrix, defaults to ``sample.v``.
    tol : float
        Convergence threshold on the infinity norm of the residual.

    Returns
    -------
    CalibrationResult

    Raises
    ------
    Collinear
        If the auxiliary columns are rank deficient on the sampled units.
    SingularJacobian
        If the Newton system at alpha = 0 cannot be solved.
    NoConvergence
        If the residual cannot be reduced below ``tol``, typically because
        the bounds of G make the constraint unattainable (G saturates and
        the Jacobian vanishes).
    """
    eq = _Equation(sample, variant, w2, V, g)
    alpha = np.zeros(eq.k)
    r = eq.residual(alpha)
    norm = float(np.max(np.abs(r)))
    if norm > tol:
        eq.check_rank()
    it = 0
    while norm > tol:
        if it >= max_iter:
            raise NoConvergence(f"{variant}: no convergence after {max_iter} iterations "
                                f"(residual {norm:.3g})", norm)
        J = eq.jacobian(alpha)
        try:
            step = np.linalg.solve(J, -r)
            if not np.all(np.isfinite(step)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            if it == 0:
                raise SingularJacobian(f"{variant}: singular Jacobian at alpha = 0") from None
            # G has saturated on every unit: the target lies outside its range
            raise NoConvergence(f"{variant}: Jacobian vanished at iteration {it} "
                                f"(residual {norm:.3g}); the constraint may be "
                                "unattainable with this G", norm) from None
        t = 1.0
        for _ in range(max_halvings + 1):
            cand = alpha + t * step
            r_cand = eq.residual(cand)
            n_cand = float(np.max(np.abs(r_cand)))
            if n_cand < norm:
                break
            t *= 0.5
        else:
            raise NoConvergence(f"{variant}: step halving failed (residual {norm:.3g}); "
                                "the constraint may be unattainable with this G", norm)
        alpha, r, norm = cand, r_cand, n_cand
        it += 1
    gvals = g(eq.full_arg_rows @ alpha)
    return CalibrationResult(variant=variant, alpha_hat=alpha, residual_norm=norm,
                             iterations=it, g_values=np.asarray(gvals, dtype=float))


def project_Q(f_values, sample: TwoPhaseSample, variant: str, V=None, weights=None):
    """Plug-in projection of function values onto the calibration span.

    ``Q_c f = E(f V')[E(V V')]^{-1} V`` and
    ``Q_cc f = E(h f Vt')[E(h Vt Vt')]^{-1} Vt`` with ``h = 1/pi0 - 1`` and
    ``Vt = V - mean(V)``.  Moments of V alone use the phase-I mean.  Moments
    involving f use the phase-I mean when ``weights`` is None, otherwise
    ``(1/N) sum weights * (.)`` (pass ``sample.ipw()`` when f is known only
    on sampled units).

    Returns Qf for every unit, shaped like ``f_values``.
    """
    V = _aux(sample, V)
    f = np.asarray(f_values, dtype=float)
    vec = f.ndim == 1
    F = f[:, None] if vec else f
    N = sample.N
    if weights is None:
        if not np.all(np.isfinite(F)):
            raise DataError("f must be finite on every unit when no weights are given")
        wf = np.ones(N)
    else:
        wf = np.asarray(weights, dtype=float)
    Fz = np.where(wf[:, None] != 0, F, 0.0)
    if variant in ("c", "bc", "bsc"):
        basis, h = V, np.ones(N)
    elif variant in CENTERED:
        basis, h = V - V.mean(axis=0), 1.0 / sample.pi0() - 1.0
    else:
        raise DataError(f"unknown calibration variant {variant!r}")
    M = (basis * h[:, None]).T @ basis / N
    C = (Fz * (wf * h)[:, None]).T @ basis / N
    try:
        if np.linalg.cond(M) > 1e12:
            raise np.linalg.LinAlgError
        coef = np.linalg.solve(M, C.T)
    except np.linalg.LinAlgError:
        raise SingularMoment("calibration moment matrix is singular") from None
    Q = basis @ coef
    return Q[:, 0] if vec else Q


def auxiliary_matrix(sample: TwoPhaseSample, method: str, base=None) -> np.ndarray:
    """Auxiliary columns for a calibration method.

    ``base`` defaults to the follow-up time ``y``.  Method ``c`` prepends an
    intercept, ``cc`` uses ``base`` as is, and ``wcc`` builds one
    stratum-centered interaction column per base column and per stratum with
    n_j < N_j (strata sampled in full carry no phase-II variation).
    """
    B = sample.y[:, None] if base is None else np.asarray(base, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if method == "c":
        return np.column_stack([np.ones(sample.N), B])
    if method == "cc":
        return B.copy()
    if method == "wcc":
        cols = []
        for s in sample.strata:
            if s.n_j == s.N_j:
                continue
            inside = sample.stratum == s.stratum_id
            for c in range(B.shape[1]):
                col = np.zeros(sample.N)
                col[inside] = B[inside, c] - B[inside, c].mean()
                cols.append(col)
        if not cols:
            raise Collinear("within-stratum centered calibration needs a stratum with n_j < N_j")
        return np.column_stack(cols)
    raise DataError(f"unknown calibration method {method!r}")


def original_variant(method: str) -> str | None:
    return {"none": None, "c": "c", "cc": "cc", "wcc": "cc"}[method]


def check_boot_variant(method: str, boot_variant: str | None) -> None:
    if boot_variant is None:
        return
    if boot_variant not in BOOT_VARIANTS:
        raise DataError(f"unknown bootstrap calibration {boot_variant!r}")
    if method == "none":
        raise DataError("bootstrap calibration requires an original calibration method")
    centered = method in ("cc", "wcc")
    if centered != (boot_variant in CENTERED):
        raise DataError(f"bootstrap calibration {boot_variant} does not match method {method}")
