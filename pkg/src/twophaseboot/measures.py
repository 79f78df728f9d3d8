"""IPW, calibrated and bootstrap empirical measures on finite function panels.

A panel holds the values of q index functions at each unit.  Functions of
phase-II data are only defined on sampled units; the other rows are ignored
(they always meet a zero weight).

Bootstrap inputs may be a single replicate ``(N,)`` or a batch ``(B, N)``;
results are ``(q,)`` or ``(B, q)`` accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import CalibrationResult
from .design import TwoPhaseSample
from .errors import DataError, DimensionMismatch
from .weights import BootstrapWeights

FLAVORS = ("uncentered-plain", "centered-plain", "uncentered-cal", "centered-cal")


@dataclass(frozen=True, eq=False)
class FunctionPanel:
    values: np.ndarray
    available: np.ndarray

    @classmethod
    def from_values(cls, values, sample: TwoPhaseSample | None = None,
                    phase2: bool = True):
        """Wrap an ``(N,)`` or ``(N, q)`` array; phase-II panels are masked to
        the sampled units of ``sample``."""
        vals = np.asarray(values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if sample is not None and phase2:
            avail = sample.sampled.copy()
        else:
            avail = np.ones(vals.shape[0], dtype=bool)
        if not np.all(np.isfinite(vals[avail])):
            raise DataError("panel values must be finite where available")
        return cls(values=vals, available=avail)

    @property
    def q(self) -> int:
        return self.values.shape[1]

    def filled(self) -> np.ndarray:
        return np.where(self.available[:, None], self.values, 0.0)


def _panel(panel, sample):
    if isinstance(panel, FunctionPanel):
        p = panel
    else:
        p = FunctionPanel.from_values(panel, sample)
    if p.values.shape[0] != sample.N:
        raise DimensionMismatch(f"panel has {p.values.shape[0]} rows, sample has {sample.N}")
    return p.filled()


def _weighted_mean(coef, F, N):
    # coef: (N,) or (B, N); F: (N, q)
    return (np.asarray(coef) @ F) / N


def ipw_mean(panel, sample: TwoPhaseSample) -> np.ndarray:
    """IPW mean ``(1/N) sum xi_i f_i / pi0_i`` of each panel column."""
    F = _panel(panel, sample)
    return _weighted_mean(sample.ipw(), F, sample.N)


def _unit_weights(weights, mode):
    if isinstance(weights, BootstrapWeights):
        return {"full": weights.w, "phase1": weights.w1, "phase2": weights.w2}[mode]
    if mode != "full":
        raise DataError("phase-specific modes need a BootstrapWeights instance")
    return np.asarray(weights, dtype=float)


def boot_ipw_mean(panel, sample: TwoPhaseSample, weights, mode: str = "full"):
    """Bootstrap IPW mean with product (``full``), phase-I or phase-II weights."""
    if mode not in ("full", "phase1", "phase2"):
        raise DataError(f"unknown weight mode {mode!r}")
    F = _panel(panel, sample)
    W = _unit_weights(weights, mode)
    return _weighted_mean(W * sample.ipw(), F, sample.N)


def calibrated_mean(panel, sample: TwoPhaseSample, calibration: CalibrationResult):
    """IPW mean with each sampled unit's weight multiplied by ``G(.; alpha_hat)``."""
    F = _panel(panel, sample)
    return _weighted_mean(sample.ipw() * calibration.g_values, F, sample.N)


def boot_process_value(panel, sample: TwoPhaseSample, weights, flavor: str,
                       boot_calibration: CalibrationResult | None = None,
                       calibration: CalibrationResult | None = None,
                       boot_g=None):
    """Value of a bootstrap IPW empirical process at each panel function.

    Parameters
    ----------
    weights : BootstrapWeights or (N,) / (B, N) array of product weights
    flavor : {'uncentered-plain', 'centered-plain', 'uncentered-cal', 'centered-cal'}
        Plain flavors compare the bootstrap IPW measure with the IPW measure,
        the second one after replacing f by ``f - P_N^pi f``.  Calibrated
        flavors use the bootstrap-calibrated measure; matched variants
        (bc/bcc) are compared with the calibrated measure and single
        variants (bsc/bscc) with the IPW measure.  The centered calibrated
        flavor replaces f with ``f - P_N^{pi,#} f``.
    boot_calibration : CalibrationResult
        Bootstrap calibration solved on the same replicate (calibrated flavors).
    calibration : CalibrationResult
        Calibration of the original sample (calibrated flavors).
    boot_g : (B, N) array, optional
        Batched alternative to ``boot_calibration.g_values``; the variant tag
        is still read from ``boot_calibration``.
    """
    if flavor not in FLAVORS:
        raise DataError(f"unknown process flavor {flavor!r}")
    F = _panel(panel, sample)
    N = sample.N
    a = sample.ipw()
    W = _unit_weights(weights, "full")
    base = _weighted_mean(a, F, N)
    if flavor.endswith("plain"):
        if flavor == "centered-plain":
            F = F - base
            base = np.zeros_like(base)
        boot = _weighted_mean(W * a, F, N)
        return np.sqrt(N) * (boot - base)
    if boot_calibration is None or calibration is None:
        raise DataError("calibrated flavors need both the original and bootstrap calibrations")
    variant = boot_calibration.variant
    if variant not in ("bc", "bcc", "bsc", "bscc"):
        raise DataError(f"{variant!r} is not a bootstrap calibration variant")
    cal_mean = _weighted_mean(a * calibration.g_values, F, N)
    gb = boot_calibration.g_values if boot_g is None else np.asarray(boot_g)
    if flavor == "centered-cal":
        F = F - cal_mean
    center = a * calibration.g_values if variant in ("bc", "bcc") else a
    base = _weighted_mean(center, F, N)
    boot = _weighted_mean(W * gb * a, F, N)
    return np.sqrt(N) * (boot - base)


__all__ = ["FunctionPanel", "FLAVORS", "ipw_mean", "boot_ipw_mean",
           "calibrated_mean", "boot_process_value"]
