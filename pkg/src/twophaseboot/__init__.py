"""Bootstrap inference for calibrated estimators under two-phase stratified sampling."""

from .calibration import GFunction, project_Q, solve_calibration
from .cox import CoxOptions, fit_wle, weighted_cox_fit
from .design import TwoPhaseSample, read_sample_csv, validate_sample, write_sample_csv
from .engine import BootstrapPlan, run_bootstrap, summarize
from .errors import DataError, NumericalError, TwoPhaseError
from .measures import FunctionPanel, boot_process_value, calibrated_mean, ipw_mean
from .simulate import CoxSimConfig, generate_cox_sample
from .weights import phase1_weights, phase2_weights

__version__ = "0.1.0"

__all__ = [
    "BootstrapPlan", "CoxOptions", "CoxSimConfig", "DataError", "FunctionPanel", "GFunction",
    "NumericalError", "TwoPhaseError", "TwoPhaseSample", "boot_process_value",
    "calibrated_mean", "fit_wle", "generate_cox_sample", "ipw_mean", "phase1_weights",
    "phase2_weights", "project_Q", "read_sample_csv", "run_bootstrap", "solve_calibration",
    "summarize", "validate_sample", "weighted_cox_fit", "write_sample_csv",
]
