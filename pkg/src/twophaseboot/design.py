"""Two-phase stratified design: sample container, validation, probabilities.

Phase-I variables (stratum, time ``y``, status ``delta`` and the auxiliary
columns ``v``) are observed on every unit.  The phase-II payload ``x`` is
observed only on units with ``xi == 1``; elsewhere it is stored as NaN.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DataError,
    EmptyStratum,
    MissingPayload,
    StratumCountMismatch,
)

__all__ = [
    "StratumSpec",
    "Unit",
    "TwoPhaseSample",
    "DesignProbabilities",
    "validate_sample",
    "design_probabilities",
    "phase2_size",
    "sample_phase2_indicators",
    "read_sample_csv",
    "write_sample_csv",
]


@dataclass(frozen=True)
class StratumSpec:
    stratum_id: int
    N_j: int
    n_j: int

    @property
    def fraction(self) -> float:
        return self.n_j / self.N_j


@dataclass(frozen=True)
class Unit:
    """One row of observed data.  ``x`` is ``None`` when the unit is unsampled."""

    id: int
    stratum_id: int
    xi: int
    v: tuple = ()
    x: tuple | None = None
    y: float = float("nan")
    delta: int = 0


def _as_columns(a, n):
    a = np.asarray(a, dtype=float)
    if a.ndim == 2 and a.shape[0] == n:
        return a
    if a.size == 0:
        return np.zeros((n, 0))
    return a.reshape(n, -1)


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TwoPhaseSample:
    """Observed two-phase data in column form.

    Parameters
    ----------
    ids : (N,) int array
        Stable unit identifiers; within-stratum ordering of bootstrap
        weights follows ascending id.
    stratum : (N,) int array
        Stratum label of every unit.
    xi : (N,) int array
        Phase-II sampling indicator.
    v : (N, k) float array
        Auxiliary phase-I covariates.
    x : (N, m) float array
        Phase-II payload, NaN on unsampled rows.
    y, delta : (N,) arrays
        Follow-up time and event indicator (phase-I variables).
    strata : sequence of StratumSpec
        Declared design.  Derived from the data when omitted.
    """

    ids: np.ndarray
    stratum: np.ndarray
    xi: np.ndarray
    v: np.ndarray
    x: np.ndarray
    y: np.ndarray
    delta: np.ndarray
    strata: tuple = field(default=())

    def __post_init__(self):
        n = len(np.asarray(self.ids))
        set_ = lambda name, value: object.__setattr__(self, name, _readonly(value))
        set_("ids", np.asarray(self.ids, dtype=np.int64))
        set_("stratum", np.asarray(self.stratum, dtype=np.int64))
        set_("xi", np.asarray(self.xi, dtype=np.int64))
        set_("v", _as_columns(self.v, n))
        set_("x", _as_columns(self.x, n))
        y = np.asarray(self.y, dtype=float)
        set_("y", y if y.shape == (n,) else np.full(n, np.nan))
        d = np.asarray(self.delta, dtype=np.int64)
        set_("delta", d if d.shape == (n,) else np.zeros(n, dtype=np.int64))
        if not self.strata:
            labels = np.unique(self.stratum)
            specs = tuple(
                StratumSpec(int(j), int(np.sum(self.stratum == j)),
                            int(np.sum(self.xi[self.stratum == j])))
                for j in labels
            )
            object.__setattr__(self, "strata", specs)
        else:
            object.__setattr__(self, "strata", tuple(self.strata))

    @classmethod
    def from_units(cls, units: Iterable[Unit], strata: Sequence[StratumSpec] = ()):
        units = list(units)
        m = max((len(u.x) for u in units if u.x is not None), default=0)
        x = np.full((len(units), m), np.nan)
        for i, u in enumerate(units):
            if u.x is not None and len(u.x) == m:
                x[i] = u.x
            elif u.x is not None:
                raise DataError(f"unit {u.id}: payload has {len(u.x)} columns, expected {m}")
        return cls(
            ids=[u.id for u in units],
            stratum=[u.stratum_id for u in units],
            xi=[u.xi for u in units],
            v=np.array([list(u.v) for u in units], dtype=float),
            x=x,
            y=[u.y for u in units],
            delta=[u.delta for u in units],
            strata=strata,
        )

    @property
    def N(self) -> int:
        return int(self.ids.shape[0])

    @property
    def n(self) -> int:
        return int(self.xi.sum())

    @property
    def sampled(self) -> np.ndarray:
        return self.xi == 1

    @property
    def stratum_ids(self) -> tuple:
        return tuple(s.stratum_id for s in self.strata)

    def spec(self, stratum_id: int) -> StratumSpec:
        for s in self.strata:
            if s.stratum_id == stratum_id:
                return s
        raise KeyError(stratum_id)

    def stratum_members(self, stratum_id: int) -> np.ndarray:
        """Positions of the units in a stratum, ordered by ascending id."""
        pos = np.flatnonzero(self.stratum == stratum_id)
        return pos[np.argsort(self.ids[pos], kind="stable")]

    def pi0(self) -> np.ndarray:
        """Per-unit sampling probability n_j/N_j."""
        out = np.empty(self.N)
        for s in self.strata:
            out[self.stratum == s.stratum_id] = s.n_j / s.N_j
        return out

    def ipw(self) -> np.ndarray:
        """Per-unit xi / pi0 (zero on unsampled units)."""
        return np.where(self.sampled, 1.0 / self.pi0(), 0.0)

    def with_v(self, v) -> "TwoPhaseSample":
        return TwoPhaseSample(self.ids, self.stratum, self.xi, v, self.x,
                              self.y, self.delta, self.strata)


@dataclass(frozen=True)
class DesignProbabilities:
    pi0: Mapping[int, float]
    nu_hat: Mapping[int, float]


def validate_sample(sample: TwoPhaseSample) -> None:
    """Raise if the sample violates the design invariants; return None otherwise."""
    if not sample.strata:
        raise EmptyStratum("design declares no strata")
    declared = set()
    for s in sample.strata:
        if s.N_j < 1 or s.n_j < 1:
            raise EmptyStratum(f"stratum {s.stratum_id}: N_j={s.N_j}, n_j={s.n_j}")
        if s.n_j > s.N_j:
            raise StratumCountMismatch(
                f"stratum {s.stratum_id}: n_j={s.n_j} exceeds N_j={s.N_j}")
        declared.add(s.stratum_id)
    if len(declared) != len(sample.strata):
        raise StratumCountMismatch("duplicate stratum labels")
    unknown = set(np.unique(sample.stratum).tolist()) - declared
    if unknown:
        raise StratumCountMismatch(f"units in undeclared strata {sorted(unknown)}")
    if len(np.unique(sample.ids)) != sample.N:
        raise DataError("unit ids are not unique")
    if not np.isin(sample.xi, (0, 1)).all():
        raise DataError("xi must be 0 or 1")
    for s in sample.strata:
        members = sample.stratum == s.stratum_id
        N_obs = int(members.sum())
        n_obs = int(sample.xi[members].sum())
        if N_obs != s.N_j or n_obs != s.n_j:
            raise StratumCountMismatch(
                f"stratum {s.stratum_id}: declared (N_j, n_j)=({s.N_j}, {s.n_j}), "
                f"observed ({N_obs}, {n_obs})")
    if sample.x.shape[1]:
        missing = np.isnan(sample.x).any(axis=1)
        bad = np.flatnonzero(sample.sampled & missing)
        if bad.size:
            raise MissingPayload(f"sampled unit id {sample.ids[bad[0]]} has no payload")
        extra = np.flatnonzero(~sample.sampled & ~np.isnan(sample.x).all(axis=1))
        if extra.size:
            raise DataError(f"unsampled unit id {sample.ids[extra[0]]} carries a payload")


def design_probabilities(sample: TwoPhaseSample) -> DesignProbabilities:
    validate_sample(sample)
    N = sample.N
    pi0 = {s.stratum_id: s.n_j / s.N_j for s in sample.strata}
    nu = {s.stratum_id: s.N_j / N for s in sample.strata}
    return DesignProbabilities(pi0=pi0, nu_hat=nu)


def phase2_size(N_j: int, fraction: float) -> int:
    """Integer part of ``fraction * N_j`` clamped to ``[1, N_j]``."""
    if not 0 < fraction <= 1:
        raise DataError(f"sampling fraction must lie in (0, 1], got {fraction}")
    # the tiny offset absorbs binary representation error, e.g. 0.29 * 100
    n = math.floor(fraction * N_j + 1e-9)
    return min(max(n, 1), N_j)


def sample_phase2_indicators(stratum, fractions: Mapping[int, float], rng,
                             ids=None) -> np.ndarray:
    """Draw a stratified simple random sample without replacement.

    Parameters
    ----------
    stratum : (N,) array of stratum labels
    fractions : mapping stratum label -> sampling fraction f_j
    rng : numpy.random.Generator
    ids : optional (N,) array; units are visited in ascending id order so the
        draw does not depend on row order.

    Returns
    -------
    (N,) int array of 0/1 indicators with exactly ``phase2_size(N_j, f_j)``
    ones in stratum j.
    """
    stratum = np.asarray(stratum)
    ids = np.arange(stratum.size) if ids is None else np.asarray(ids)
    xi = np.zeros(stratum.size, dtype=np.int64)
    for j in sorted(np.unique(stratum).tolist()):
        pos = np.flatnonzero(stratum == j)
        pos = pos[np.argsort(ids[pos], kind="stable")]
        n_j = phase2_size(pos.size, fractions[j])
        chosen = rng.choice(pos.size, size=n_j, replace=False)
        xi[pos[chosen]] = 1
    return xi


def _fmt(value: float) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if math.isnan(value):
        return ""
    return format(float(value), ".17g")


def write_sample_csv(sample: TwoPhaseSample, path) -> None:
    k, m = sample.v.shape[1], sample.x.shape[1]
    header = ["id", "stratum", "xi", "y", "delta"]
    header += [f"v{i + 1}" for i in range(k)] + [f"x{i + 1}" for i in range(m)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(sample.N):
            row = [str(sample.ids[i]), str(sample.stratum[i]), str(sample.xi[i]),
                   _fmt(sample.y[i]), str(sample.delta[i])]
            row += [_fmt(a) for a in sample.v[i]]
            row += [_fmt(a) for a in sample.x[i]]
            w.writerow(row)


def read_sample_csv(path) -> TwoPhaseSample:
    """Read the delimited sample format and validate it."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    header = [h.strip() for h in header]
    required = ["id", "stratum", "xi", "y", "delta"]
    for name in required:
        if name not in header:
            raise DataError(f"{path}: missing column {name!r}")
    vcols = sorted((h for h in header if h.startswith("v") and h[1:].isdigit()),
                   key=lambda h: int(h[1:]))
    xcols = sorted((h for h in header if h.startswith("x") and h[1:].isdigit()),
                   key=lambda h: int(h[1:]))
    col = {h: i for i, h in enumerate(header)}

    def num(r, name, lineno):
        s = r[col[name]].strip()
        if s == "":
            return np.nan
        try:
            return float(s)
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad value {s!r} in column {name}") from None

    N = len(rows)
    ids = np.empty(N, dtype=np.int64)
    strat = np.empty(N, dtype=np.int64)
    xi = np.empty(N, dtype=np.int64)
    delta = np.empty(N, dtype=np.int64)
    y = np.empty(N)
    v = np.empty((N, len(vcols)))
    x = np.empty((N, len(xcols)))
    for i, r in enumerate(rows):
        lineno = i + 2
        if len(r) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(r)}")
        for arr, name in ((ids, "id"), (strat, "stratum"), (xi, "xi"), (delta, "delta")):
            val = num(r, name, lineno)
            if np.isnan(val) or val != int(val):
                raise DataError(f"{path}:{lineno}: column {name} must be an integer")
            arr[i] = int(val)
        y[i] = num(r, "y", lineno)
        v[i] = [num(r, c, lineno) for c in vcols]
        x[i] = [num(r, c, lineno) for c in xcols]
    sample = TwoPhaseSample(ids=ids, stratum=strat, xi=xi, v=v, x=x, y=y, delta=delta)
    validate_sample(sample)
    return sample
