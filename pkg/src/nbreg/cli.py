"""Command-line surface.

Subcommands:
  fit        penalized fit on a CSV file (fixed level or a data-driven rule)
  simulate   run a scenario grid and write the summary CSV
  cv         cross-validated penalty-level selection on a CSV file
  lambda     print the penalty levels given (n, p, v_n) or a data file
  diagnose   condition report, derived-constant ledger, tail diagnostic
  split-fit  train/test split, CV, final fits, held-out prediction error

All commands honor --seed for bit-reproducible output and write JSON
reports with the fixed schema {command, config, results, warnings}
(simulate writes CSV).  Exit codes: 0 success, 1 invalid input or usage,
2 numeric failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
import warnings

import numpy as np

from .data_io import (
    DataFile,
    load_csv,
    render_report,
    scenario_csv_header,
    scenario_csv_row,
    standardize,
)
from .diagnostics import check_conditions, tail_diagnostic, theorem_ledger
from .errors import ConfigError, DomainError, NBRegError, NumericError, ParseError
from .experiments import (
    CVSpec,
    ScenarioSpec,
    cross_validate,
    default_lambda_grid,
    run_scenario,
    train_test_pipeline,
)
from .model import Dataset, NBModel, v_weights
from .penalty import PenaltyChoice, lambda_asymptotic, lambda_exact, pilot_beta
from .solver import FitConfig, fit

__all__ = ["cli_dispatch", "main"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; the contract here is 1.
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _comma_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip() != ""]


def _comma_ints(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip() != ""]


def _write(text: str, output: str | None) -> None:
    if output is None or output == "-":
        sys.stdout.write(text + "\n")
    else:
        with open(output, "w", encoding="utf-8") as handle:
            handle.write(text + "\n")


def _load(args) -> Dataset:
    covariates = "all-others"
    if getattr(args, "covariates", None):
        covariates = [name.strip() for name in args.covariates.split(",")]
    return load_csv(
        DataFile(
            path=args.data,
            response_column=args.response,
            covariate_columns=covariates,
            has_header=not getattr(args, "no_header", False),
            delimiter=getattr(args, "delimiter", ","),
        )
    )


def _build_parser() -> _Parser:
    parser = _Parser(prog="nbreg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_options(p):
        p.add_argument("--data", required=True, help="input CSV path")
        p.add_argument("--response", required=True, help="response column name")
        p.add_argument("--covariates", help="comma-separated covariate names (default: all others)")
        p.add_argument("--delimiter", default=",")
        p.add_argument("--no-header", action="store_true")

    p_fit = sub.add_parser("fit", help="penalized fit on a data file")
    add_data_options(p_fit)
    p_fit.add_argument("--r", type=float, required=True, help="dispersion parameter")
    p_fit.add_argument("--lam", type=float, help="fixed penalty level")
    p_fit.add_argument("--rule", choices=("asymptotic", "exact"), help="data-driven penalty rule (pilot plug-in)")
    p_fit.add_argument("--c", type=float, default=1.1)
    p_fit.add_argument("--alpha", type=float, default=0.05)
    p_fit.add_argument("--mc-reps", type=int, default=2000)
    p_fit.add_argument("--intercept", action="store_true", help="add an unpenalized intercept column")
    p_fit.add_argument("--max-iter", type=int, default=5000)
    p_fit.add_argument("--tol-kkt", type=float, default=1e-6)
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--output")

    p_sim = sub.add_parser("simulate", help="run a scenario grid, write summary CSV")
    p_sim.add_argument("--config", help="JSON grid config (overrides the grid flags)")
    p_sim.add_argument("--n", default="100", help="comma-separated sample sizes")
    p_sim.add_argument("--p", default="30", help="comma-separated dimensions")
    p_sim.add_argument("--r", default="2.0", help="comma-separated dispersions")
    p_sim.add_argument("--rho", default="0.5", help="comma-separated correlations")
    p_sim.add_argument("--s", type=int, default=5)
    p_sim.add_argument("--reps", type=int, default=25)
    p_sim.add_argument("--beta-range", default="-1,1")
    p_sim.add_argument("--penalty", choices=("asymptotic", "exact", "fixed"), default="asymptotic")
    p_sim.add_argument("--c", type=float, default=1.1)
    p_sim.add_argument("--alpha", type=float, default=0.05)
    p_sim.add_argument("--mc-reps", type=int, default=2000)
    p_sim.add_argument("--lam", type=float, help="penalty level when --penalty fixed")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--threads", type=int, default=int(os.environ.get("NBREG_THREADS", "1")))
    p_sim.add_argument("--output")

    p_cv = sub.add_parser("cv", help="cross-validated penalty selection")
    add_data_options(p_cv)
    p_cv.add_argument("--r", type=float, required=True)
    p_cv.add_argument("--grid", help="comma-separated penalty levels")
    p_cv.add_argument("--grid-size", type=int, default=20)
    p_cv.add_argument("--folds", type=int, default=10)
    p_cv.add_argument("--score", choices=("deviance", "prediction_error"), default="deviance")
    p_cv.add_argument("--seed", type=int, default=0)
    p_cv.add_argument("--output")

    p_lam = sub.add_parser("lambda", help="penalty levels from both rules")
    p_lam.add_argument("--n", type=int)
    p_lam.add_argument("--p", type=int)
    p_lam.add_argument("--vn", type=float, help="max weight v_n (closed-form mode)")
    p_lam.add_argument("--data")
    p_lam.add_argument("--response")
    p_lam.add_argument("--covariates")
    p_lam.add_argument("--delimiter", default=",")
    p_lam.add_argument("--no-header", action="store_true")
    p_lam.add_argument("--r", type=float)
    p_lam.add_argument("--c", type=float, default=1.1)
    p_lam.add_argument("--alpha", type=float, default=0.05)
    p_lam.add_argument("--mc-reps", type=int, default=2000)
    p_lam.add_argument("--seed", type=int, default=0)
    p_lam.add_argument("--output")

    p_diag = sub.add_parser("diagnose", help="condition report, ledger, tail diagnostic")
    add_data_options(p_diag)
    p_diag.add_argument("--r", type=float, required=True)
    p_diag.add_argument("--truth", help="file of coefficients on the standardized scale (one per line); default: pilot estimate")
    p_diag.add_argument("--gamma", type=float, default=3.0)
    p_diag.add_argument("--cone-samples", type=int, default=2000)
    p_diag.add_argument("--lam", type=float, help="penalty level for the smallness check and ledger")
    p_diag.add_argument("--c", type=float, default=1.1)
    p_diag.add_argument("--c1", type=float, default=3.0)
    p_diag.add_argument("--alpha", type=float, default=0.05, help="pilot rule level when no truth file is given")
    p_diag.add_argument("--tail-grid", default="0,0.5,1,1.5,2,2.5,3,3.5,4,4.5,5,5.5,6")
    p_diag.add_argument("--tail-mc-reps", type=int, default=20000)
    p_diag.add_argument("--seed", type=int, default=0)
    p_diag.add_argument("--output")

    p_split = sub.add_parser("split-fit", help="train/test pipeline with CV")
    add_data_options(p_split)
    p_split.add_argument("--r", type=float, required=True)
    p_split.add_argument("--train-size", type=int, required=True)
    p_split.add_argument("--test-size", type=int, required=True)
    p_split.add_argument("--grid", help="comma-separated penalty levels")
    p_split.add_argument("--grid-size", type=int, default=20)
    p_split.add_argument("--folds", type=int, default=10)
    p_split.add_argument("--score", choices=("deviance", "prediction_error"), default="deviance")
    p_split.add_argument("--no-intercept", action="store_true")
    p_split.add_argument("--seed", type=int, default=0)
    p_split.add_argument("--output")

    return parser


def _cmd_fit(args) -> str:
    raw = _load(args)
    data, record = standardize(raw)
    names = list(data.feature_names or (f"x{j}" for j in range(data.p)))
    unpenalized: tuple[int, ...] = ()
    if args.intercept:
        X = np.column_stack([np.ones(data.n), data.X])
        data = Dataset(X=X, y=data.y, standardized=None)
        names = ["Intercept"] + names
        unpenalized = (0,)

    rng = np.random.default_rng(args.seed)
    if args.lam is not None and args.rule:
        raise ConfigError("give either --lam or --rule, not both")
    if args.lam is not None:
        lam = float(args.lam)
        rule = "fixed"
    elif args.rule:
        pilot = pilot_beta(
            Dataset(X=data.X[:, 1:] if args.intercept else data.X, y=data.y),
            args.r,
            c=args.c,
            alpha=args.alpha,
        )
        pilot_model = NBModel(args.r, pilot)
        core = Dataset(X=data.X[:, 1:] if args.intercept else data.X, y=data.y)
        if args.rule == "asymptotic":
            _, v_n = v_weights(pilot_model, core)
            lam = lambda_asymptotic(v_n, core.n, core.p, args.c, args.alpha)
        else:
            lam = lambda_exact(core, pilot_model, args.c, args.alpha, args.mc_reps, rng)
        rule = args.rule
    else:
        raise ConfigError("one of --lam or --rule is required")

    result = fit(
        data,
        args.r,
        FitConfig(lam=lam, max_iter=args.max_iter, tol_kkt=args.tol_kkt, unpenalized=unpenalized),
    )
    beta = result.beta_hat
    if args.intercept:
        slopes, icept = record.original_scale_coefficients(beta[1:], beta[0])
        original = np.concatenate([[icept], slopes])
    else:
        original, _ = record.original_scale_coefficients(beta, 0.0)

    results = {
        "lambda": lam,
        "rule": rule,
        "converged": result.converged,
        "iterations": result.iterations,
        "kkt_residual": result.kkt_residual,
        "objective": result.objective,
        "active_variables": [names[j] for j in result.active_set],
        "coefficients_standardized": dict(zip(names, beta)),
        "coefficients_original_scale": dict(zip(names, original)),
        "standardization": record.to_dict(),
    }
    config = {
        "data": args.data,
        "response": args.response,
        "r": args.r,
        "intercept": bool(args.intercept),
        "max_iter": args.max_iter,
        "tol_kkt": args.tol_kkt,
        "seed": args.seed,
        "c": args.c,
        "alpha": args.alpha,
    }
    return "fit", config, results


def _iter_grid(values: dict) -> list[tuple[float, float, int, int]]:
    return list(
        itertools.product(values["r"], values["rho"], values["p"], values["n"])
    )


def _cmd_simulate(args) -> str:
    if args.config:
        with open(args.config, encoding="utf-8") as handle:
            cfg = json.load(handle)
        as_list = lambda v: list(v) if isinstance(v, (list, tuple)) else [v]
        grid = {
            "n": [int(v) for v in as_list(cfg.get("n", 100))],
            "p": [int(v) for v in as_list(cfg.get("p", 30))],
            "r": [float(v) for v in as_list(cfg.get("r", 2.0))],
            "rho": [float(v) for v in as_list(cfg.get("rho", 0.5))],
        }
        s = int(cfg.get("s", 5))
        reps = int(cfg.get("reps", 25))
        seed = int(cfg.get("seed", args.seed))
        beta_range = tuple(cfg.get("beta_range", (-1.0, 1.0)))
        pen_cfg = cfg.get("penalty", {})
        penalty = PenaltyChoice(
            kind=pen_cfg.get("kind", "asymptotic"),
            c=float(pen_cfg.get("c", 1.1)),
            alpha=float(pen_cfg.get("alpha", 0.05)),
            mc_reps=int(pen_cfg.get("mc_reps", 2000)),
            lam=pen_cfg.get("lam"),
        )
    else:
        grid = {
            "n": _comma_ints(args.n),
            "p": _comma_ints(args.p),
            "r": _comma_floats(args.r),
            "rho": _comma_floats(args.rho),
        }
        s = args.s
        reps = args.reps
        seed = args.seed
        beta_range = tuple(_comma_floats(args.beta_range))
        penalty = PenaltyChoice(
            kind=args.penalty, c=args.c, alpha=args.alpha, mc_reps=args.mc_reps, lam=args.lam
        )
    if len(beta_range) != 2:
        raise ConfigError("beta-range must be 'lo,hi'")

    lines = [scenario_csv_header()]
    for idx, (r, rho, p, n) in enumerate(_iter_grid(grid)):
        cell_seed = int(np.random.SeedSequence([seed, idx]).generate_state(1, np.uint64)[0])
        spec = ScenarioSpec(
            n=n, p=p, r=r, rho=rho, s=s, reps=reps, seed=cell_seed,
            penalty=penalty, beta_range=beta_range,
        )
        summary = run_scenario(spec, n_jobs=max(1, args.threads))
        lines.append(scenario_csv_row(spec, summary))
    return "\n".join(lines)


def _cmd_cv(args) -> tuple:
    raw = _load(args)
    data, _ = standardize(raw)
    if args.grid:
        grid = tuple(_comma_floats(args.grid))
    else:
        grid = default_lambda_grid(data, args.r, size=args.grid_size)
    cv = CVSpec(lambda_grid=grid, folds=args.folds, score=args.score, seed=args.seed)
    lambda_star, table = cross_validate(data, args.r, cv)
    config = {
        "data": args.data,
        "response": args.response,
        "r": args.r,
        "folds": args.folds,
        "score": args.score,
        "seed": args.seed,
    }
    results = {
        "lambda_star": lambda_star,
        "score_table": [list(pair) for pair in table],
    }
    return "cv", config, results


def _cmd_lambda(args) -> tuple:
    results: dict = {"c": args.c, "alpha": args.alpha}
    if args.data:
        if args.r is None or not args.response:
            raise ConfigError("data mode needs --response and --r")
        raw = _load(args)
        data, _ = standardize(raw)
        rng = np.random.default_rng(args.seed)
        pilot = pilot_beta(data, args.r, c=args.c, alpha=args.alpha)
        pilot_model = NBModel(args.r, pilot)
        _, v_n = v_weights(pilot_model, data)
        results["v_n"] = v_n
        results["pilot_active"] = int(np.count_nonzero(pilot))
        results["lambda_asymptotic"] = lambda_asymptotic(
            v_n, data.n, data.p, args.c, args.alpha
        )
        results["lambda_exact"] = lambda_exact(
            data, pilot_model, args.c, args.alpha, args.mc_reps, rng
        )
        config = {"data": args.data, "r": args.r, "seed": args.seed, "mc_reps": args.mc_reps}
    else:
        if args.n is None or args.p is None or args.vn is None:
            raise ConfigError("closed-form mode needs --n, --p and --vn")
        results["v_n"] = args.vn
        results["lambda_asymptotic"] = lambda_asymptotic(
            args.vn, args.n, args.p, args.c, args.alpha
        )
        config = {"n": args.n, "p": args.p, "vn": args.vn}
    return "lambda", config, results


def _read_truth(path: str, p: int) -> np.ndarray:
    with open(path, encoding="utf-8") as handle:
        tokens = handle.read().replace(",", " ").split()
    try:
        values = np.array([float(tok) for tok in tokens])
    except ValueError as exc:
        raise ParseError(f"truth file {path}: {exc}") from None
    if values.shape[0] != p:
        raise ParseError(f"truth file holds {values.shape[0]} values, expected {p}")
    return values


def _cmd_diagnose(args) -> tuple:
    raw = _load(args)
    data, _ = standardize(raw)
    rng = np.random.default_rng(args.seed)
    if args.truth:
        beta = _read_truth(args.truth, data.p)
        beta_source = "file"
    else:
        beta = pilot_beta(data, args.r, c=args.c, alpha=args.alpha)
        beta_source = "pilot"
    truth = NBModel(args.r, beta)

    report = check_conditions(
        data, truth, gamma=args.gamma, n_cone_samples=args.cone_samples,
        rng=rng, lam=args.lam, c=args.c if args.lam is not None else None,
    )
    results = {
        "beta_source": beta_source,
        "condition_report": {
            "s": report.s,
            "R": report.R,
            "re_phi0_sq": report.re_phi0_sq,
            "gamma": report.gamma,
            "c3_ok": report.c3_ok,
            "lambda_smallness_ok": report.lambda_smallness_ok,
            "n_cone_samples": report.n_cone_samples,
            "full_sphere_fallback": report.full_sphere_fallback,
        },
    }
    if args.lam is not None and report.s > 0:
        ledger = theorem_ledger(report, args.lam, args.c, args.c1)
        results["theorem_ledger"] = {
            "c": ledger.c, "c1": ledger.c1, "C": ledger.C,
            "R_tilde": ledger.R_tilde, "h": ledger.h,
            "bound_l1": ledger.bound_l1, "bound_loss": ledger.bound_loss,
        }
    tail = tail_diagnostic(
        truth, data, np.array(_comma_floats(args.tail_grid)),
        mc_reps=args.tail_mc_reps, rng=rng,
    )
    results["tail"] = {
        "thresholds": tail.thresholds,
        "exceedance": tail.exceedance,
        "w1_hat": tail.w1_hat,
        "tail_r_squared": tail.tail_r_squared,
    }
    config = {
        "data": args.data, "r": args.r, "gamma": args.gamma,
        "cone_samples": args.cone_samples, "lam": args.lam, "c": args.c,
        "c1": args.c1, "seed": args.seed, "tail_mc_reps": args.tail_mc_reps,
    }
    return "diagnose", config, results


def _cmd_split_fit(args) -> tuple:
    raw = _load(args)
    if args.grid:
        grid = tuple(_comma_floats(args.grid))
    else:
        std_all, _ = standardize(raw)
        grid = default_lambda_grid(std_all, args.r, size=args.grid_size)
    cv = CVSpec(lambda_grid=grid, folds=args.folds, score=args.score, seed=args.seed)
    report = train_test_pipeline(
        raw,
        args.r,
        (args.train_size, args.test_size, args.seed),
        cv,
        intercept=not args.no_intercept,
    )
    config = {
        "data": args.data, "response": args.response, "r": args.r,
        "train_size": args.train_size, "test_size": args.test_size,
        "folds": args.folds, "score": args.score, "seed": args.seed,
        "intercept": not args.no_intercept,
    }
    return "split-fit", config, report.to_dict()


def cli_dispatch(argv: list[str] | None = None) -> int:
    """Parse argv, run the command, print the report; return the exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        sys.stderr.write(str(exc) + "\n")
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            if args.command == "simulate":
                _write(_cmd_simulate(args), args.output)
                return 0
            handler = {
                "fit": _cmd_fit,
                "cv": _cmd_cv,
                "lambda": _cmd_lambda,
                "diagnose": _cmd_diagnose,
                "split-fit": _cmd_split_fit,
            }[args.command]
            command, config, results = handler(args)
            notes = [str(w.message) for w in caught]
            _write(render_report(command, config, results, notes), args.output)
        return 0
    except (ParseError, ConfigError, DomainError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except NumericError as exc:
        sys.stderr.write(f"numeric failure: {exc}\n")
        return 2
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except NBRegError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


def main() -> None:
    sys.exit(cli_dispatch())
