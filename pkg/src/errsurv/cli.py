"""Command-line interface: ``errsurv fit | calibrate | simulate | summary | example-data``.

Exit codes: 0 success, 2 validation or usage, 3 convergence, 4 singularity, 5 I/O.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .calibration import CalibrationModel, fit_calibration
from .data_model import OutcomeErrorModel, read_long_csv, snap_to_grid, to_long, ingest_long
from .data_model import validate_cohort
from .errors import (
    ConvergenceError,
    ErrsurvError,
    NumericalError,
    RankDeficient,
    SingularDelta,
    SingularHessian,
    ValidationError,
)
from .methods import METHODS, NEEDS_RATES, run_method
from .mle import FitOptions

logger = logging.getLogger("errsurv")

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_SINGULAR, EXIT_IO = 0, 2, 3, 4, 5


class UsageError(ValidationError):
    pass


def _split(s):
    return None if s is None else [c.strip() for c in s.split(",") if c.strip()]


def _load_cohort(args):
    kw = dict(follow_up_mode=args.mode, x_star=_split(args.x_star), z=_split(args.z),
              stratum=args.stratum)
    if args.snap_to_grid is None:
        return read_long_csv(args.input, **kw)
    df = pd.read_csv(args.input, na_values=["NA", ""])
    taus = np.unique(np.round(df["t"].to_numpy(dtype=float)))
    df["t"] = snap_to_grid(df["t"].to_numpy(dtype=float), taus, args.snap_to_grid)
    return ingest_long(df, **kw)


def _error_model(args):
    if args.se is None or args.sp is None:
        return None
    rates = {}
    if args.stratum_rates:
        with open(args.stratum_rates) as fh:
            raw = json.load(fh)
        rates = {_label(k): tuple(v) for k, v in raw.items()}
    return OutcomeErrorModel(args.se, args.sp, args.eta, rates)


def _label(k: str):
    try:
        return int(k)
    except ValueError:
        return k


def _options(args) -> FitOptions:
    return FitOptions(tol_g=args.tol_g, max_iter=args.max_iter, history=args.history,
                      fd_step=args.fd_step)


def cmd_fit(args) -> int:
    methods = _split(args.method)
    if methods == ["compare"]:
        methods = ["naive", "covariate_only", "proposed"]
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {', '.join(METHODS)} or compare")
    cohort = _load_cohort(args)
    err = _error_model(args)
    if err is None and set(methods) & NEEDS_RATES:
        raise UsageError("--se and --sp are required for outcome_only and proposed")
    calib = CalibrationModel.load(args.calibration) if args.calibration else None
    stratified = args.stratum is not None
    cache, results = {}, []
    for m in methods:
        results.append(run_method(m, cohort, err, calib, stratified, _options(args), cache))

    rows = [r for res in results for r in res.wald(args.increment)]
    table = pd.DataFrame(rows)
    survival = []
    for res in results:
        for k, lab in enumerate(res.strata):
            for j, s in enumerate(res.survival[k], 1):
                survival.append({"method": res.method, "stratum": lab, "j": j, "S": s})
    report = {
        "version": __version__,
        "input": str(args.input),
        "increment": args.increment,
        "data": cohort.summary(),
        "error_model": None if err is None else {"se": err.se, "sp": err.sp, "eta": err.eta},
        "methods": {
            res.method: {
                "converged": res.converged,
                "coefficients": [r for r in rows if r["method"] == res.method],
                "covariance": res.covariance.tolist(),
                "survival": {str(lab): res.survival[k].tolist()
                             for k, lab in enumerate(res.strata)},
                **res.meta,
            }
            for res in results
        },
    }
    print(table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        table.to_csv(out / "coefficients.csv", index=False)
        pd.DataFrame(survival).to_csv(out / "survival.csv", index=False)
        with open(out / "report.json", "w") as fh:
            json.dump(report, fh, indent=2, default=_jsonable)
    bad = [r.method for r in results if not r.converged]
    if bad:
        print(f"error: fit did not converge for {', '.join(bad)}", file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def cmd_calibrate(args) -> int:
    cohort = _load_cohort(args)
    model = fit_calibration(cohort)
    print(f"n_c = {model.n_c}, p = {model.p}, q = {model.q}")
    names = list(model.x_names) + list(model.z_names)
    for r, x in enumerate(model.x_names):
        coefs = np.concatenate([model.delta1[r], model.delta2[r]])
        print(f"{x}**: intercept {model.delta0[r]:.4f}; "
              + ", ".join(f"{n} {c:.4f}" for n, c in zip(names, coefs)))
    if args.out:
        model.save(args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .simulation import get_preset, load_scenario, preset_names, run_scenario
    from .simulation.run import ESTIMATORS

    if args.list_presets:
        print("\n".join(preset_names()))
        return EXIT_OK
    if (args.preset is None) == (args.scenario is None):
        raise UsageError("give exactly one of --preset or --scenario")
    cfg = get_preset(args.preset) if args.preset else load_scenario(args.scenario)
    overrides = {}
    if args.replications is not None:
        if args.replications < 1:
            raise UsageError("--replications must be at least 1")
        overrides["replications"] = args.replications
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    if args.n is not None:
        overrides["n"] = args.n
    if args.n_c is not None:
        overrides["n_c"] = args.n_c
    cfg = cfg.with_overrides(**overrides)
    estimators = _split(args.estimators) or list(ESTIMATORS)
    unknown = set(estimators) - set(ESTIMATORS)
    if unknown:
        raise UsageError(f"unknown estimator(s) {sorted(unknown)}; choose from {ESTIMATORS}")

    def progress(done, total):
        if not args.quiet and (done % max(1, total // 10) == 0 or done == total):
            print(f"  replication {done}/{total}", file=sys.stderr)

    result = run_scenario(cfg, estimators, threads=args.threads, progress=progress)
    for name, table in result.metrics.items():
        df = pd.DataFrame(table.rows())[["parameter", "%Bias", "ASE", "ESE", "CP", "reject"]]
        print(f"\n{name}  (ok {table.n_success}, failed {table.n_failed})")
        print(df.to_string(index=False, float_format=lambda v: f"{v:.3f}"))
    print(f"\nmean true censoring rate {result.mean_censoring_rate:.3f}"
          + (f", mean delta_1 {result.mean_delta1:.3f}" if result.mean_delta1 else ""))
    if args.out:
        result.write(args.out)
    return EXIT_OK


def cmd_summary(args) -> int:
    cohort = _load_cohort(args)
    print(json.dumps(cohort.summary(), indent=2, default=_jsonable))
    diags = validate_cohort(cohort)
    for d in diags:
        print(f"subject {d['id']}: {d['reason']}")
    return EXIT_VALIDATION if diags else EXIT_OK


def cmd_example_data(args) -> int:
    from .simulation import example_dataset

    cohort = example_dataset(seed=args.seed if args.seed is not None else 2021, n=args.n)
    df = to_long(cohort).drop(columns=["stratum"])
    df.to_csv(args.out, index=False, na_rep="NA")
    print(f"wrote {cohort.n} subjects ({len(df)} rows) to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="errsurv",
        description="Discrete-time proportional hazards with misclassified outcomes "
                    "and error-prone covariates.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_args(p):
        p.add_argument("--input", required=True, help="long-format CSV, one row per visit")
        p.add_argument("--mode", choices=["full", "stop"], default=None,
                       help="follow-up mode (inferred when omitted)")
        p.add_argument("--x-star", help="comma-separated error-prone covariate columns")
        p.add_argument("--z", help="comma-separated precise covariate columns")
        p.add_argument("--stratum", default=None, help="stratum column")
        p.add_argument("--snap-to-grid", type=float, default=None, metavar="TOL",
                       help="round visit times within TOL of an integer grid")

    p = sub.add_parser("fit", help="fit one or more methods to a data set")
    data_args(p)
    p.add_argument("--method", default="proposed",
                   help=f"one of {', '.join(METHODS)}, a comma list, or 'compare'")
    p.add_argument("--se", type=float)
    p.add_argument("--sp", type=float)
    p.add_argument("--eta", type=float, default=1.0, help="baseline negative predictive value")
    p.add_argument("--stratum-rates", help="JSON file mapping stratum -> [se, sp]")
    p.add_argument("--calibration", help="calibration JSON from 'errsurv calibrate'")
    p.add_argument("--increment", type=float, default=1.0,
                   help="covariate change for hazard ratios, e.g. 0.1823 for log(1.2)")
    p.add_argument("--tol-g", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--history", type=int, default=10)
    p.add_argument("--fd-step", type=float, default=1e-5)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=None, help="accepted for symmetry; fits are deterministic")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("calibrate", help="fit the calibration regression and export it")
    data_args(p)
    p.add_argument("--out", help="calibration JSON path")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="run a simulation scenario")
    p.add_argument("--preset")
    p.add_argument("--scenario", help="JSON scenario file")
    p.add_argument("--list-presets", action="store_true")
    p.add_argument("--replications", "-R", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--n-c", type=int)
    p.add_argument("--estimators", help="comma list; default all five")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--out", help="output directory for metrics CSVs and manifest")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("summary", help="describe and validate a data set")
    data_args(p)
    p.set_defaults(func=cmd_summary)

    p = sub.add_parser("example-data", help="write the worked-example data set")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int, default=10000)
    p.set_defaults(func=cmd_example_data)
    return parser


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (SingularHessian, SingularDelta, RankDeficient)):
        return EXIT_SINGULAR
    if isinstance(exc, (ConvergenceError, NumericalError)):
        return EXIT_CONVERGENCE
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    if isinstance(exc, OSError):
        return EXIT_IO
    return 1


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ErrsurvError, OSError) as exc:
        kind = type(exc).__name__
        print(f"error ({kind}): {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        print(f"error (unreadable input): {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
