"""Command-line interface: ``idid {estimate,two-sample,weak-id,sensitivity,simulate}``.

Exit codes: 0 success, 1 invalid input, 2 estimation failure. Errors are
printed to stderr as a JSON object.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import report as rp
from .data import Schema, cell_table, load_dataset, load_summary
from .diagnostics import weak_id_statistic
from .errors import EstimationError, IdidError, ValidationError
from .estimators import WorkingModel, semiparametric_estimate, two_sample_estimate, wald_estimate
from .inference import (
    BootstrapConfig,
    SensitivityConfig,
    percentile_bootstrap,
    sensitivity_one_sample,
    sensitivity_two_sample,
)
from .regression import DesignSpec, fit_nuisance
from .simulation import DgpCase, ScenarioGrid, rows_to_csv, run_monte_carlo

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_list(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.split(",") if v.strip())


def _add_data_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--data", required=required, help="microdata CSV")
    p.add_argument("--covariates", type=_csv_list, default=(), help="comma-separated covariate columns")
    p.add_argument("--unit-id", help="column identifying individuals (block bootstrap)")
    for role in ("t", "z", "d", "y"):
        p.add_argument(f"--{role}-col", default=role, help=f"column holding {role} (default: {role})")


def _schema(args) -> Schema:
    return Schema(args.t_col, args.z_col, args.d_col, args.y_col, tuple(args.covariates), args.unit_id)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="idid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="one-sample Wald and semiparametric estimates")
    _add_data_args(p)
    p.add_argument("--working-model", choices=("constant", "linear"), default="constant")
    p.add_argument("--modifiers", type=_csv_list, default=None,
                   help="effect modifiers for the linear working model (default: all covariates)")
    p.add_argument("--mu-y", default="full_interactions")
    p.add_argument("--mu-d", default="full_interactions")
    p.add_argument("--pi", default="logistic_propensity")
    p.add_argument("--pi-clip", type=float, default=None, help="clip fitted propensities to [c, 1-c]")
    p.add_argument("--bootstrap", type=int, default=0, metavar="B", help="bootstrap replications (0: none)")
    p.add_argument("--block", action="store_true", help="resample whole --unit-id blocks")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out")

    p = sub.add_parser("two-sample", help="two-sample Wald estimate from summary CSVs")
    p.add_argument("--outcome", required=True)
    p.add_argument("--exposure", required=True)
    p.add_argument("--out")

    p = sub.add_parser("weak-id", help="weak-identification diagnostic")
    _add_data_args(p, required=False)
    p.add_argument("--exposure", help="exposure summary CSV (squared z-score)")
    p.add_argument("--out")

    p = sub.add_parser("sensitivity", help="sensitivity to a time-varying effect")
    _add_data_args(p, required=False)
    p.add_argument("--outcome")
    p.add_argument("--exposure")
    p.add_argument("--gamma-lower", type=float, required=True)
    p.add_argument("--gamma-upper", type=float, required=True)
    p.add_argument("--grid-points", type=int, default=101)
    p.add_argument("--target", choices=("time0_effect", "time1_effect"), default="time0_effect")
    p.add_argument("--out")
    p.add_argument("--csv", help="write the per-Delta band here")

    p = sub.add_parser("simulate", help="Monte Carlo study from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--paper-scale", action="store_true", help="n = 100000 and 1000 replications")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", help="CSV destination (default: stdout)")
    return parser


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_estimate(args) -> None:
    data = load_dataset(args.data, _schema(args))
    rep = rp.new_report("estimate")
    rep["n"] = data.n
    rep["results"].append(rp.wald_entry(wald_estimate(cell_table(data))))
    rp.attach_weak_id(rep, weak_id_statistic(data, covariates=data.p > 0))
    if data.p > 0:
        rep["warnings"].append(rp.warning("wald_ignores_covariates"))
        if args.working_model == "constant":
            wm, label = WorkingModel.constant(), "constant"
        else:
            wm = WorkingModel.linear(args.modifiers if args.modifiers is not None else data.covariate_names)
            label = "linear"
        specs = {"mu_y": DesignSpec.parse(args.mu_y), "mu_d": DesignSpec.parse(args.mu_d),
                 "pi": DesignSpec.parse(args.pi)}
        nuis = fit_nuisance(data, specs["mu_y"], specs["mu_d"], specs["pi"])
        est = semiparametric_estimate(data, wm, nuis, pi_clip=args.pi_clip)
        if args.pi_clip is not None:
            rep["warnings"].append(rp.warning("pi_clipped"))
        boot = None
        if args.bootstrap:
            if args.seed is None:
                raise UsageError("--bootstrap requires an explicit --seed")

            def stat(sample):
                n2 = fit_nuisance(sample, specs["mu_y"], specs["mu_d"], specs["pi"])
                return semiparametric_estimate(sample, wm, n2, pi_clip=args.pi_clip).psi

            cfg = BootstrapConfig(args.bootstrap, "unit_id_block" if args.block else "row", args.seed)
            boot = percentile_bootstrap(data, stat, cfg, threads=args.threads)
            if boot.attempts > cfg.replications:
                rep["warnings"].append(rp.warning("bootstrap_redraws"))
        rep["results"].append(rp.psi_entry(est, label, {k: v.name for k, v in specs.items()}, boot))
    elif args.bootstrap:
        if args.seed is None:
            raise UsageError("--bootstrap requires an explicit --seed")
        cfg = BootstrapConfig(args.bootstrap, "unit_id_block" if args.block else "row", args.seed)
        boot = percentile_bootstrap(data, lambda s: wald_estimate(cell_table(s)).beta, cfg, threads=args.threads)
        rep["results"][0]["bootstrap"] = {
            "se": float(boot.se[0]), "percentile_ci": [float(boot.ci_low[0]), float(boot.ci_high[0])],
            "replications": cfg.replications, "attempts": boot.attempts,
        }
    _emit(rp.dumps(rep), args.out)


def cmd_two_sample(args) -> None:
    outcome = load_summary(args.outcome, "outcome")
    exposure = load_summary(args.exposure, "exposure")
    rep = rp.new_report("two-sample")
    rep["results"].append(rp.wald_entry(two_sample_estimate(outcome, exposure)))
    rep["warnings"].append(rp.warning("summary_covariance_unavailable"))
    rp.attach_weak_id(rep, weak_id_statistic(exposure))
    _emit(rp.dumps(rep), args.out)


def cmd_weak_id(args) -> None:
    if bool(args.data) == bool(args.exposure):
        raise UsageError("give exactly one of --data or --exposure")
    if args.data:
        data = load_dataset(args.data, _schema(args))
        w = weak_id_statistic(data, covariates=data.p > 0)
    else:
        w = weak_id_statistic(load_summary(args.exposure, "exposure"))
    rep = rp.new_report("weak-id")
    rp.attach_weak_id(rep, w)
    _emit(rp.dumps(rep), args.out)


def cmd_sensitivity(args) -> None:
    cfg = SensitivityConfig(args.gamma_lower, args.gamma_upper, args.grid_points, args.target)
    rep = rp.new_report("sensitivity")
    if args.data:
        if args.outcome or args.exposure:
            raise UsageError("give either --data or --outcome/--exposure, not both")
        data = load_dataset(args.data, _schema(args))
        band = sensitivity_one_sample(cell_table(data), cfg)
    elif args.outcome and args.exposure:
        band = sensitivity_two_sample(load_summary(args.outcome, "outcome"),
                                      load_summary(args.exposure, "exposure"), cfg)
        rep["warnings"].append(rp.warning("summary_covariance_unavailable"))
    else:
        raise UsageError("sensitivity needs --data or both --outcome and --exposure")
    rep["results"].append(rp.band_entry(band))
    if args.csv:
        Path(args.csv).write_text(rp.band_csv(band), encoding="utf-8")
    _emit(rp.dumps(rep), args.out)


def load_sim_config(path: str, paper_scale: bool = False) -> tuple[ScenarioGrid, DgpCase]:
    with open(path, "rb") as fh:
        cfg = tomllib.load(fh)
    if "seed" not in cfg:
        raise UsageError("simulation config must set an explicit 'seed'")
    known = {"case", "n", "replications", "seed", "estimators", "correct_subsets", "se_method",
             "bootstrap_replications", "iv_covariates", "ols_covariates"}
    unknown = set(cfg) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    n = 100_000 if paper_scale else int(cfg.get("n", 20_000))
    reps = 1000 if paper_scale else int(cfg.get("replications", 500))
    kw = {}
    if "estimators" in cfg:
        kw["estimators"] = tuple(cfg["estimators"])
    if "correct_subsets" in cfg:
        kw["correct_subsets"] = tuple(tuple(s) for s in cfg["correct_subsets"])
    for key in ("se_method", "bootstrap_replications", "iv_covariates", "ols_covariates"):
        if key in cfg:
            kw[key] = cfg[key]
    try:
        grid = ScenarioGrid(replications=reps, master_seed=int(cfg["seed"]), **kw)
        dgp = DgpCase(cfg.get("case", "case1"), n)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return grid, dgp


def cmd_simulate(args) -> None:
    grid, dgp = load_sim_config(args.config, args.paper_scale)
    rows = run_monte_carlo(grid, dgp, threads=args.threads)
    _emit(rows_to_csv(rows), args.out)


COMMANDS = {
    "estimate": cmd_estimate,
    "two-sample": cmd_two_sample,
    "weak-id": cmd_weak_id,
    "sensitivity": cmd_sensitivity,
    "simulate": cmd_simulate,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except IdidError as exc:
        code = 2 if isinstance(exc, EstimationError) else 1
        sys.stderr.write(json.dumps(rp.clean({**exc.to_dict(), "exit_code": code})) + "\n")
        return code
    except (OSError, ValueError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": 1}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
