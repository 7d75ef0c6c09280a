"""Command line interface.

Usage examples::

    fqr test covariates.csv responses.csv --levels 0.1,0.2,0.3,0.4
    fqr fit covariates.csv responses.csv --levels 0.5 --out beta.csv
    fqr composite covariates.csv responses.csv --levels 0.8,0.825,0.85 --method CRQ
    fqr bootstrap covariates.csv responses.csv --levels U1 --B 200 --seed 1 --out boot.csv
    fqr cv covariates.csv responses.csv --levels 0.8,0.85,0.9 --reps 100 --out cv.csv
    fqr simulate type1 --n 1000 --sigma 1 --levels U1 --reps 1000 --seed 7 --out table.csv
    fqr simulate power --gamma 1 --sizes 100,200,500 --methods adjusted_wald,ssqr --out power.csv
    fqr simulate dataset --n 200 --gamma 1 --seed 3 --covariates-out w.csv --responses-out y.csv

Exit codes: 0 on success, 2 for input or configuration errors, 3 for
numerical failures. Output files are written atomically.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import __version__
from .errors import DataError, FQRError, InvalidConfig, NumericalError
from .funcdata import atomic_write_text, load_dataset, make_grid, write_dataset
from .pipeline import estimate_scores, fit_and_test, write_intermediates
from .quantreg import fit_crq, fit_multi, fit_qae
from .simharness import (
    ALPHAS,
    COMPOSITE_METHODS,
    LEVELS_U1,
    LEVELS_U2,
    METHODS,
    SimConfig,
    bootstrap_curves,
    cross_validate,
    default_workers,
    generate_dataset,
    run_power_study,
    run_type1_study,
)

EXIT_OK, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3
NAMED_LEVELS = {"U1": LEVELS_U1, "U2": LEVELS_U2}

# defaults applied after merging the optional JSON config file
DEFAULTS = {
    "levels": "U1",
    "pve": 0.95,
    "grid": 101,
    "design": "auto",
    "method": "CRQ",
    "methods": None,
    "B": 200,
    "reps": 100,
    "seed": 0,
    "n": 1000,
    "sim_design": "dense",
    "sigma": 1.0,
    "gamma": 0.0,
    "alphas": "0.01,0.05,0.1",
    "sizes": None,
    "replicate": 0,
    "ssqr_summary": "mean",
}

logger = logging.getLogger("fqr")


class StageError(Exception):
    """Wraps a package error with the name of the stage that failed."""

    def __init__(self, stage: str, error: Exception):
        super().__init__(f"{stage}: {error}")
        self.stage = stage
        self.error = error


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        logger.info("stage: %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, (FQRError, ValueError, OSError)) and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def parse_levels(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(float(t) for t in text)
    text = str(text).strip()
    if text in NAMED_LEVELS:
        return NAMED_LEVELS[text]
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise InvalidConfig(f"cannot parse levels {text!r}") from exc


def _floats(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(float(t) for t in text)
    try:
        return tuple(float(t) for t in str(text).split(",") if t.strip())
    except ValueError as exc:
        raise InvalidConfig(f"cannot parse number list {text!r}") from exc


def _names(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(str(t) for t in text)
    return tuple(t.strip() for t in str(text).split(",") if t.strip())


def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset options from ``--config`` then from :data:`DEFAULTS`."""
    file_values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_values = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(file_values, dict):
            raise InvalidConfig("config file must hold a JSON object")
        unknown = sorted(k for k in file_values if not hasattr(args, k))
        if unknown:
            raise InvalidConfig(f"unknown config keys: {unknown}")
    for key, default in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, file_values.get(key, default))
    for key, value in file_values.items():
        if getattr(args, key) is None:
            setattr(args, key, value)
    return args


def _emit(text: str, out: str | None) -> None:
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _load(args):
    with _Stage("loading data"):
        try:
            ds = load_dataset(args.covariates, args.responses)
        except FileNotFoundError as exc:
            raise DataError(f"MissingSubject or file not found: {exc.filename}") from exc
    grid = make_grid(args.grid)
    design = None if args.design == "auto" else args.design
    if design not in (None, "dense", "sparse"):
        raise InvalidConfig("--design must be auto, dense or sparse")
    return ds, grid, design


def _check_levels(levels) -> tuple:
    if not levels or any(not 0 < t < 1 for t in levels) or any(b <= a for a, b in zip(levels, levels[1:])):
        raise InvalidConfig("levels must be strictly ascending values in (0, 1)")
    return levels


def cmd_test(args) -> int:
    levels = _check_levels(parse_levels(args.levels))
    if len(levels) < 2:
        raise InvalidConfig("the test needs at least two levels")
    ds, grid, design = _load(args)
    with _Stage("score estimation and adjusted Wald test"):
        report = fit_and_test(ds, levels, grid, args.pve, design)
    if args.dump:
        with _Stage("writing intermediates"):
            write_intermediates(report.estimate, args.dump, ds.subject_ids)
    text = report.wald.to_json() + "\n"
    if args.out:
        atomic_write_text(args.out, text)
        print(f"p_value {report.wald.p_value:.6g}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _theta_dict(levels, thetas) -> dict:
    return {f"{t:g}": [float(v) for v in th] for t, th in zip(levels, thetas)}


def cmd_fit(args) -> int:
    levels = _check_levels(parse_levels(args.levels))
    ds, grid, design = _load(args)
    with _Stage("score estimation and fitting"):
        report = fit_and_test(ds, levels, grid, args.pve, design)
        curves = report.curves()
    rows = ["tau,t,beta_hat,se"]
    for c in curves:
        rows += [f"{c.tau:g},{t:.10g},{b:.17g},{s:.17g}" for t, b, s in zip(c.grid.points, c.beta_hat, c.se)]
    _emit("\n".join(rows) + "\n", args.out)
    if args.json:
        payload = {
            "levels": list(levels),
            "K": report.estimate.eigen.K,
            "theta": _theta_dict(levels, [f.theta for f in report.multi.fits]),
        }
        atomic_write_text(args.json, json.dumps(payload, indent=2) + "\n")
    return EXIT_OK


def cmd_composite(args) -> int:
    levels = _check_levels(parse_levels(args.levels))
    if args.method not in ("QAE", "CRQ"):
        raise InvalidConfig("--method must be QAE or CRQ")
    ds, grid, design = _load(args)
    with _Stage("score estimation"):
        est = estimate_scores(ds, grid, args.pve, design)
    with _Stage(f"{args.method} fit"):
        X, y = est.scores.design, ds.responses
        fit = fit_qae(fit_multi(X, y, levels)) if args.method == "QAE" else fit_crq(X, y, levels)
    payload = {
        "method": fit.method,
        "levels": list(levels),
        "K": est.eigen.K,
        "shared_slope": [float(v) for v in fit.shared_slope],
        "intercepts": [float(v) for v in fit.intercepts],
        "weights": [float(v) for v in fit.weights],
        "theta": _theta_dict(levels, [fit.theta(t) for t in levels]),
    }
    _emit(json.dumps(payload, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    levels = _check_levels(parse_levels(args.levels))
    methods = _names(args.methods) if args.methods else COMPOSITE_METHODS
    ds, grid, design = _load(args)
    with _Stage("bootstrap"):
        res = bootstrap_curves(ds, levels, int(args.B), int(args.seed), methods, grid, args.pve, design)
    if res.failures:
        print(f"{res.failures} of {res.resamples} resamples failed and were skipped", file=sys.stderr)
    _emit(res.to_csv(), args.out)
    return EXIT_OK


def cmd_cv(args) -> int:
    levels = _check_levels(parse_levels(args.levels))
    methods = _names(args.methods) if args.methods else COMPOSITE_METHODS
    ds, grid, design = _load(args)
    with _Stage("cross-validation"):
        res = cross_validate(ds, levels, int(args.reps), int(args.seed), methods, grid, args.pve, design)
    if res.failures:
        print(f"{res.failures} replications failed and were skipped", file=sys.stderr)
    _emit(res.to_csv(), args.out)
    return EXIT_OK


def _sim_config(args, methods_default) -> SimConfig:
    methods = _names(args.methods) if args.methods else methods_default
    return SimConfig(
        n=int(args.n),
        design=args.sim_design,
        sigma=float(args.sigma),
        gamma=float(args.gamma),
        levels=parse_levels(args.levels),
        pve=float(args.pve),
        replications=int(args.reps),
        seed=int(args.seed),
        alpha_list=_floats(args.alphas),
        methods=methods,
        grid_size=int(args.grid),
        ssqr_summary=args.ssqr_summary,
    )


def _workers(args) -> int:
    w = default_workers() if args.workers is None else int(args.workers)
    if w < 1:
        raise InvalidConfig("--workers must be at least 1")
    return w


def cmd_simulate(args) -> int:
    if args.kind == "type1":
        cfg = _sim_config(args, ("adjusted_wald",))
        workers = _workers(args)
        with _Stage("type I study"):
            res = run_type1_study(cfg, workers)
        _emit(res.to_csv(), args.out)
    elif args.kind == "power":
        cfg = _sim_config(args, ("adjusted_wald", "ssqr"))
        sizes = [int(s) for s in _floats(args.sizes)] if args.sizes else None
        workers = _workers(args)
        with _Stage("power study"):
            res = run_power_study(cfg, sizes, workers)
        _emit(res.to_csv(), args.out)
    else:
        cfg = _sim_config(args, ("adjusted_wald",))
        if not args.covariates_out or not args.responses_out:
            raise InvalidConfig("dataset needs --covariates-out and --responses-out")
        sim = generate_dataset(cfg, int(args.replicate))
        write_dataset(sim.dataset, args.covariates_out, args.responses_out)
    return EXIT_OK


def _data_parser(sub, name, help_text):
    p = sub.add_parser(name, help=help_text)
    p.add_argument("covariates", help="long-format CSV with columns subject_id,t,w")
    p.add_argument("responses", help="CSV with columns subject_id,y")
    p.add_argument("--levels", help="comma-separated quantile levels, or U1 / U2")
    p.add_argument("--pve", type=float, help="variance fraction used to choose K (default 0.95)")
    p.add_argument("--grid", type=int, help="number of evaluation grid points (default 101)")
    p.add_argument("--design", choices=["auto", "dense", "sparse"], help="score-estimation route")
    p.add_argument("--config", help="JSON file with option values; flags take precedence")
    p.add_argument("--out", help="output file (stdout when omitted)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fqr", description="Functional quantile regression tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = _data_parser(sub, "test", "adjusted Wald test of equal slope functions across levels")
    p.add_argument("--dump", help="directory for mean, covariance, eigensystem and score CSVs")
    p.set_defaults(func=cmd_test)

    p = _data_parser(sub, "fit", "slope function estimates with pointwise standard errors")
    p.add_argument("--json", help="also write fitted coefficients as JSON")
    p.set_defaults(func=cmd_fit)

    p = _data_parser(sub, "composite", "slope shared across levels (QAE or CRQ)")
    p.add_argument("--method", choices=["QAE", "CRQ"])
    p.set_defaults(func=cmd_composite)

    p = _data_parser(sub, "bootstrap", "pairs bootstrap mean and SE of slope functions")
    p.add_argument("--B", type=int, help="number of resamples (default 200)")
    p.add_argument("--seed", type=int)
    p.add_argument("--methods", help=f"comma-separated subset of {','.join(COMPOSITE_METHODS)}")
    p.set_defaults(func=cmd_bootstrap)

    p = _data_parser(sub, "cv", "random half-split prediction error of RQ, QAE and CRQ")
    p.add_argument("--reps", type=int, help="number of splits (default 100)")
    p.add_argument("--seed", type=int)
    p.add_argument("--methods", help=f"comma-separated subset of {','.join(COMPOSITE_METHODS)}")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("simulate", help="simulated data and Monte Carlo studies")
    p.add_argument("kind", choices=["type1", "power", "dataset"])
    p.add_argument("--config", help="JSON file with option values; flags take precedence")
    p.add_argument("--n", type=int, help="sample size (default 1000)")
    p.add_argument("--design", dest="sim_design", choices=["dense", "sparse50", "sparse90"])
    p.add_argument("--sigma", type=float, help="measurement noise sd (default 1)")
    p.add_argument("--gamma", type=float, help="heteroscedasticity (0 under the null)")
    p.add_argument("--levels", help="comma-separated quantile levels, or U1 / U2")
    p.add_argument("--pve", type=float)
    p.add_argument("--grid", type=int)
    p.add_argument("--reps", type=int, help="replications (default 100)")
    p.add_argument("--seed", type=int)
    p.add_argument("--alphas", help="comma-separated significance levels")
    p.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--ssqr-summary", dest="ssqr_summary", choices=["mean", "median"])
    p.add_argument("--sizes", help="power: comma-separated sample sizes")
    p.add_argument("--workers", type=int, help="worker processes (default $FQR_WORKERS or 1)")
    p.add_argument("--replicate", type=int, help="dataset: replicate index")
    p.add_argument("--covariates-out", dest="covariates_out")
    p.add_argument("--responses-out", dest="responses_out")
    p.add_argument("--out", help="output CSV (stdout when omitted)")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO if args.verbose == 1 else logging.DEBUG, format="%(message)s")
    try:
        _merge_config(args)
        return args.func(args)
    except StageError as exc:
        err = exc.error
        code = EXIT_NUMERIC if isinstance(err, (NumericalError, np.linalg.LinAlgError)) else EXIT_DATA
        print(f"fqr {args.command}: {exc.stage} failed: {type(err).__name__}: {err}", file=sys.stderr)
        return code
    except NumericalError as exc:
        print(f"fqr {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FQRError, ValueError, OSError) as exc:
        print(f"fqr {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
