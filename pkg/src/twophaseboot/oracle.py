"""Reference computations kept apart from the production code paths.

Limit covariances are computed atom by atom on a finite model with plain
Python loops, and phase-II weight laws are enumerated exactly with rational
arithmetic.  Nothing here calls into :mod:`weights`, :mod:`calibration` or
:mod:`measures`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np

from .errors import DataError, SingularMoment, TooLarge

MAX_ENUM = 8


@dataclass(frozen=True, eq=False)
class DiscreteModel:
    """Finite law of (V, X) with strata determined by V.

    Parameters
    ----------
    probs : (K,) atom probabilities
    stratum : (K,) stratum label per atom
    p : mapping stratum -> limiting phase-II fraction p_j
    panel : (K, q) values of the index functions at each atom
    aux : (K, k) calibration variables V at each atom
    """

    probs: np.ndarray
    stratum: np.ndarray
    p: dict
    panel: np.ndarray
    aux: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if np.any(probs < 0) or abs(probs.sum() - 1) > 1e-12:
            raise DataError("atom probabilities must be nonnegative and sum to 1")
        for j, pj in self.p.items():
            if not 0 < pj <= 1:
                raise DataError(f"p_{j} must lie in (0, 1]")
        object.__setattr__(self, "probs", probs)
        aux = np.asarray(self.aux, dtype=float)
        object.__setattr__(self, "aux", aux[:, None] if aux.ndim == 1 else aux)
        panel = np.asarray(self.panel, dtype=float)
        object.__setattr__(self, "panel", panel[:, None] if panel.ndim == 1 else panel)
        object.__setattr__(self, "stratum", np.asarray(self.stratum))

    @property
    def K(self) -> int:
        return len(self.probs)

    def nu(self, j) -> float:
        return sum(self.probs[a] for a in range(self.K) if self.stratum[a] == j)

    def pi_inf(self, a) -> float:
        return self.p[self.stratum[a]]


def _mean(model, values, atoms=None):
    atoms = range(model.K) if atoms is None else atoms
    tot = sum(model.probs[a] for a in atoms)
    return sum(model.probs[a] * values[a] for a in atoms) / tot


def _solve(M, c):
    M = np.array(M, dtype=float)
    if abs(np.linalg.det(M)) < 1e-13:
        raise SingularMoment("model moment matrix is singular")
    return np.linalg.solve(M, np.array(c, dtype=float))


def projection(model: DiscreteModel, values, cal: str) -> list:
    """Q_c or Q_cc applied to per-atom values, returned per atom."""
    K, k = model.K, model.aux.shape[1]
    if cal == "c":
        basis = [list(model.aux[a]) for a in range(K)]
        h = [1.0] * K
    elif cal == "cc":
        mv = [_mean(model, [model.aux[a][c] for a in range(K)]) for c in range(k)]
        basis = [[model.aux[a][c] - mv[c] for c in range(k)] for a in range(K)]
        h = [1.0 / model.pi_inf(a) - 1.0 for a in range(K)]
    else:
        raise DataError(f"unknown calibration {cal!r}")
    M = [[_mean(model, [h[a] * basis[a][r] * basis[a][c] for a in range(K)])
          for c in range(k)] for r in range(k)]
    cvec = [_mean(model, [h[a] * values[a] * basis[a][c] for a in range(K)]) for c in range(k)]
    coef = _solve(M, cvec)
    return [sum(coef[c] * basis[a][c] for c in range(k)) for a in range(K)]


def limit_covariance(model: DiscreteModel, f, g, flavor: str = "plain",
                     cal: str | None = None) -> float:
    """Covariance of the limiting process at (f, g).

    ``flavor='plain'`` uses a Brownian bridge for the phase-I part,
    ``flavor='uncentered'`` a Brownian motion (no mean subtraction).  With
    ``cal`` in {'c', 'cc'} the stratum terms act on ``f - Qf``.

    ``flavor='recentered'`` is the plain flavor with f replaced by
    ``f - P0 f`` before projecting; it is the limit of a bootstrap process
    recentred at the calibrated mean.  It differs from ``plain`` only when
    Q does not map constants to themselves (centered calibration).
    """
    if flavor not in ("plain", "uncentered", "recentered"):
        raise DataError(f"unknown flavor {flavor!r}")
    K = model.K
    f = [float(v) for v in f]
    g = [float(v) for v in g]
    fg = _mean(model, [f[a] * g[a] for a in range(K)])
    if flavor == "uncentered":
        phase1 = fg
    else:
        phase1 = fg - _mean(model, f) * _mean(model, g)
    if flavor == "recentered":
        mf, mg = _mean(model, f), _mean(model, g)
        f = [v - mf for v in f]
        g = [v - mg for v in g]
    if cal is not None:
        qf, qg = projection(model, f, cal), projection(model, g, cal)
        f = [f[a] - qf[a] for a in range(K)]
        g = [g[a] - qg[a] for a in range(K)]
    phase2 = 0.0
    for j, pj in sorted(model.p.items()):
        atoms = [a for a in range(K) if model.stratum[a] == j]
        nu = model.nu(j)
        if nu == 0 or pj == 1:
            continue
        mf = _mean(model, f, atoms)
        mg = _mean(model, g, atoms)
        cov_j = _mean(model, [(f[a] - mf) * (g[a] - mg) for a in range(K)], atoms)
        phase2 += nu * (1 - pj) / pj * cov_j
    return phase1 + phase2


def limit_covariance_matrix(model: DiscreteModel, flavor: str = "plain",
                            cal: str | None = None) -> np.ndarray:
    q = model.panel.shape[1]
    out = np.empty((q, q))
    for r in range(q):
        for c in range(q):
            out[r, c] = limit_covariance(model, model.panel[:, r], model.panel[:, c],
                                         flavor, cal)
    return out


def mixing_probability(N_j: int, n_j: int) -> Fraction:
    r = N_j % n_j
    return (1 - Fraction(r, n_j)) * (1 - Fraction(r, N_j - 1)) if r else Fraction(1)


def _compositions(total, parts, cap):
    if parts == 0:
        if total == 0:
            yield ()
        return
    for first in range(min(total, cap) + 1):
        for rest in _compositions(total - first, parts - 1, cap):
            yield (first,) + rest


def mh_pmf(copies: int, n: int) -> dict:
    """Exact pmf of MH(n * copies, n, (copies, ..., copies))."""
    denom = comb(n * copies, n)
    out = {}
    for c in _compositions(n, n, copies):
        num = 1
        for ci in c:
            num *= comb(copies, ci)
        out[c] = Fraction(num, denom)
    return out


def phase2_weight_pmf(N_j: int, n_j: int) -> dict:
    """Exact pmf of the exchangeable phase-II weight vector of one stratum.

    Only the n_j sampled coordinates are enumerated, so N_j itself is not
    limited, only n_j.
    """
    if not 1 <= n_j <= N_j:
        raise DataError("need 1 <= n_j <= N_j")
    if n_j > MAX_ENUM:
        raise TooLarge(f"enumeration limited to n_j <= {MAX_ENUM}")
    k = N_j // n_j
    s = mixing_probability(N_j, n_j)
    out = {}
    for comp, prob in ((k, s), (k + 1, 1 - s)):
        if prob == 0:
            continue
        for w, pw in mh_pmf(comp, n_j).items():
            out[w] = out.get(w, Fraction(0)) + prob * pw
    return out


def enumerate_phase2_design(N_j: int, n_j: int) -> dict:
    """Exact joint pmf of (xi, W2) for one stratum.

    Keys are ``(xi_tuple, w2_tuple)`` over the N_j units; the subset is
    uniform over all C(N_j, n_j) choices and the weights of the sampled units
    follow :func:`phase2_weight_pmf` in ascending unit order.
    """
    if N_j > MAX_ENUM:
        raise TooLarge(f"enumeration limited to N_j <= {MAX_ENUM}")
    wpmf = phase2_weight_pmf(N_j, n_j)
    subsets = list(itertools.combinations(range(N_j), n_j))
    p_sub = Fraction(1, len(subsets))
    out = {}
    for sub in subsets:
        xi = tuple(1 if i in sub else 0 for i in range(N_j))
        for w, pw in wpmf.items():
            full = [0] * N_j
            for pos, unit in enumerate(sub):
                full[unit] = w[pos]
            out[(xi, tuple(full))] = p_sub * pw
    return out


def weight_moments(pmf: dict) -> tuple[Fraction, Fraction]:
    """Exact mean and variance of the first coordinate under a weight pmf."""
    m1 = sum(p * w[0] for w, p in pmf.items())
    m2 = sum(p * w[0] * w[0] for w, p in pmf.items())
    return m1, m2 - m1 * m1


def balanced_sample_counts(model: DiscreteModel, N: int) -> tuple[list, dict]:
    """Integer atom counts for a phase-I sample of size N matching the model
    exactly, together with the phase-II count per atom (``p_j`` fraction)."""
    counts = [model.probs[a] * N for a in range(model.K)]
    if any(abs(c - round(c)) > 1e-9 for c in counts):
        raise DataError("N does not reproduce the atom probabilities exactly")
    counts = [int(round(c)) for c in counts]
    sampled = {}
    for a in range(model.K):
        m = counts[a] * model.pi_inf(a)
        if abs(m - round(m)) > 1e-9:
            raise DataError("phase-II fraction does not split atom counts exactly")
        sampled[a] = int(round(m))
    return counts, sampled


__all__ = ["DiscreteModel", "projection", "limit_covariance", "limit_covariance_matrix",
           "mixing_probability", "mh_pmf", "phase2_weight_pmf",
           "enumerate_phase2_design", "weight_moments", "balanced_sample_counts"]
