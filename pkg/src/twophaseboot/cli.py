"""Command-line front end: ``simulate``, ``fit``, ``bootstrap``, ``validate``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
The seed comes from ``--seed``, falling back to ``TPB_SEED`` and then 0.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import serialize
from .calibration import (BOOT_VARIANTS, METHODS, auxiliary_matrix, check_boot_variant,
                          original_variant, solve_calibration)
from .cox import fit_wle
from .design import read_sample_csv, validate_sample, write_sample_csv
from .engine import ESTIMATORS, BootstrapPlan, run_bootstrap, write_replicates_csv, write_summary_json
from .errors import DataError, NumericalError
from .measures import FunctionPanel
from .simulate import CoxSimConfig, generate_cox_sample

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("twophaseboot")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass
class RunConfig:
    subcommand: str
    seed: int
    options: dict = field(default_factory=dict)

    def check(self) -> None:
        o = self.options
        if self.subcommand == "bootstrap":
            if o["B"] < 1:
                raise UsageError(f"--B must be at least 1, got {o['B']}")
            if o["workers"] < 1:
                raise UsageError("--workers must be at least 1")
            if o["boot_calibration"] is not None:
                try:
                    check_boot_variant(o["calibration"], o["boot_calibration"])
                except DataError as exc:
                    raise UsageError(f"inconsistent calibration flags: {exc}") from None
        if self.subcommand in ("fit", "bootstrap") and not o["cal_tol"] > 0:
            raise UsageError("--cal-tol must be positive")
        if self.subcommand == "simulate" and o["n"] < 3:
            raise UsageError("--n must be at least 3")


def _add_seed(p):
    p.add_argument("--seed", type=int, default=None,
                   help="random seed (overrides the TPB_SEED environment variable)")


def _add_calibration(p):
    p.add_argument("--calibration", choices=METHODS, default="none",
                   help="calibration of the original weights (default: none)")
    p.add_argument("--cal-tol", type=float, default=1e-9,
                   help="infinity-norm tolerance of the calibration solver")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="twophaseboot",
                     description="Bootstrap inference for two-phase stratified samples.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a two-phase Cox cohort as CSV")
    p.add_argument("--n", type=int, default=400, help="phase-I sample size")
    p.add_argument("--theta", type=float, default=math.log(2.0), help="log hazard ratio")
    p.add_argument("--lambda0", type=float, default=0.1, help="baseline hazard")
    p.add_argument("--cens-upper", type=float, default=1.1,
                   help="upper end of the uniform censoring law")
    p.add_argument("--sens", type=float, default=0.9, help="surrogate sensitivity")
    p.add_argument("--spec", type=float, default=0.9, help="surrogate specificity")
    p.add_argument("--prev", type=float, default=0.5, help="exposure prevalence")
    p.add_argument("--fraction", type=float, default=0.3,
                   help="phase-II fraction in the censored strata")
    _add_seed(p)
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("fit", help="fit the weighted Cox model and its plug-in variance")
    p.add_argument("input", help="sample CSV")
    _add_calibration(p)
    p.add_argument("--out", default=None, help="write the JSON here instead of stdout")

    p = sub.add_parser("bootstrap", help="bootstrap a plain or calibrated estimator")
    p.add_argument("input", help="sample CSV")
    p.add_argument("--B", type=int, default=1000, help="number of replicates")
    p.add_argument("--workers", type=int, default=1, help="worker processes")
    p.add_argument("--estimator", choices=ESTIMATORS, default="cox")
    _add_calibration(p)
    p.add_argument("--boot-calibration", choices=BOOT_VARIANTS, default=None,
                   help="replicate calibration (default: matched to --calibration)")
    _add_seed(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("validate", help="Monte-Carlo checks against exact oracles")
    p.add_argument("--quick", action="store_true", help="ten-fold fewer draws")
    _add_seed(p)
    p.add_argument("--out", default=None, help="write the JSON report here instead of stdout")
    return parser


def _resolve_seed(arg) -> int:
    if arg is not None:
        return int(arg)
    env = os.environ.get("TPB_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"TPB_SEED must be an integer, got {env!r}") from None


def _emit(obj, out) -> None:
    text = serialize.dumps(obj)
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _cmd_simulate(cfg: RunConfig) -> None:
    o = cfg.options
    sim = CoxSimConfig(N=o["n"], theta=o["theta"], lambda0=o["lambda0"],
                       cens_upper=o["cens_upper"], sens=o["sens"], spec=o["spec"],
                       exposure_prev=o["prev"], phase2_fraction=o["fraction"], seed=cfg.seed)
    sample = generate_cox_sample(sim)
    write_sample_csv(sample, o["out"])
    log.info("wrote %d units (%d in phase II) to %s", sample.N, sample.n, o["out"])


def _fit_report(fit) -> dict:
    return {"theta_hat": fit.theta_hat, "se_standard": fit.se, "var_standard": fit.var_theta,
            "converged": bool(fit.converged), "iterations": fit.iterations,
            "n_events": fit.n_events}


def _cmd_fit(cfg: RunConfig) -> None:
    o = cfg.options
    sample = read_sample_csv(o["input"])
    validate_sample(sample)
    fit = fit_wle(sample)
    report = {**_fit_report(fit), "N": sample.N, "n": sample.n, "calibration": o["calibration"]}
    if o["calibration"] != "none":
        variant = original_variant(o["calibration"])
        aux = auxiliary_matrix(sample, o["calibration"])
        cal = solve_calibration(sample, variant, V=aux, tol=o["cal_tol"])
        fc = fit_wle(sample, sample.ipw() * cal.g_values, variant=variant, V=aux)
        report["calibrated"] = {**_fit_report(fc), "alpha_hat": cal.alpha_hat,
                                "calibration_residual": cal.residual_norm}
    _emit(report, o["out"])


def _cmd_bootstrap(cfg: RunConfig) -> None:
    o = cfg.options
    sample = read_sample_csv(o["input"])
    validate_sample(sample)
    panel = FunctionPanel.from_values(sample.x, sample) if o["estimator"] == "ipw-mean" else None
    plan = BootstrapPlan(B=o["B"], estimator=o["estimator"], panel=panel,
                         calibration=o["calibration"], boot_calibration=o["boot_calibration"],
                         seed=cfg.seed, workers=o["workers"], cal_tol=o["cal_tol"])
    summary = run_bootstrap(sample, plan)
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_replicates_csv(summary, out / "replicates.csv")
    write_summary_json(summary, out / "summary.json")
    log.info("%d of %d replicates succeeded; wrote %s", summary.successes, summary.B, out)


def _cmd_validate(cfg: RunConfig) -> bool:
    from .validation import run_suite

    checks = run_suite(quick=cfg.options["quick"], seed=cfg.seed)
    for c in checks:
        print(c.line(), file=sys.stderr)
    passed = all(c.passed for c in checks)
    report = {"passed": passed, "seed": cfg.seed, "quick": cfg.options["quick"],
              "checks": [c.as_dict() for c in checks]}
    _emit(report, cfg.options["out"])
    return passed


COMMANDS = {"simulate": _cmd_simulate, "fit": _cmd_fit,
            "bootstrap": _cmd_bootstrap, "validate": _cmd_validate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        opts = {k: v for k, v in vars(args).items() if k not in ("subcommand", "seed", "verbose")}
        cfg = RunConfig(args.subcommand, _resolve_seed(getattr(args, "seed", None)), opts)
        cfg.check()
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        result = COMMANDS[cfg.subcommand](cfg)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    if result is False:
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
