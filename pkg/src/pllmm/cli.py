"""Command-line front end: fit, path, simulate, predict.

Exit codes: 0 success, 1 input error, 2 non-convergence (the result file is
still written). See README for the CSV schema, the config format, and the
key-value result schema.
"""

import argparse
import configparser
import csv
import io
import os
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np

from .data import MixedModelData, VarianceSpec, VarianceStructure
from .exceptions import GroupMismatchError, NumericalDomainError, PllmmError
from .inference import build_report
from .penalties import SCAD_DEFAULT_A, PenaltySpec
from .reportio import atomic_write_text, dumps_kv, read_kv, write_kv
from .selection import bic as bic_of
from .selection import fit_path
from .simulation import (
    SimulationScenario,
    compare_penalties,
    format_summary_table,
    run_scenario,
    summary_to_kv,
)
from .solver import FitResult, ModelParameters, SolverConfig, cgd_fit, lasso_init


@dataclass(frozen=True)
class RunConfig:
    """Flat, hand-editable run configuration (INI sections, see parse_config)."""

    response: str = "y"
    group: str = "group"
    random_effects: tuple = ()
    unpenalized: tuple = ()
    variance_structure: str = "isotropic"
    penalty: str = "scad"
    lam: float = 0.0
    scad_a: float = SCAD_DEFAULT_A
    lq_exponent: float = 1.0
    n_lambda: int = 30
    grid_ratio: float = 1e-3
    max_outer_iterations: int = 200
    objective_tolerance: float = 1e-6
    zero_clamp: float = 1e-8
    seed: int = 0
    folds: int = 10
    threads: int = 1


_CONFIG_LAYOUT = {
    "model": ("response", "group", "random_effects", "unpenalized", "variance_structure"),
    "penalty": ("penalty", "lam", "scad_a", "lq_exponent"),
    "path": ("n_lambda", "grid_ratio"),
    "solver": ("max_outer_iterations", "objective_tolerance", "zero_clamp"),
    "run": ("seed", "folds", "threads"),
}


def serialize_config(cfg):
    parser = configparser.ConfigParser()
    values = asdict(cfg)
    for section, keys in _CONFIG_LAYOUT.items():
        parser[section] = {}
        for key in keys:
            v = values[key]
            if isinstance(v, tuple):
                parser[section][key] = ", ".join(v)
            else:
                parser[section][key] = repr(v) if isinstance(v, float) else str(v)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def parse_config(text):
    parser = configparser.ConfigParser()
    parser.read_string(text)
    kwargs = {}
    types = {f.name: f.type for f in fields(RunConfig)}
    defaults = RunConfig()
    for section, keys in _CONFIG_LAYOUT.items():
        if not parser.has_section(section):
            continue
        for key in keys:
            if not parser.has_option(section, key):
                continue
            raw = parser.get(section, key).strip()
            default = getattr(defaults, key)
            if isinstance(default, tuple):
                kwargs[key] = tuple(p.strip() for p in raw.split(",") if p.strip())
            elif isinstance(default, bool):
                kwargs[key] = raw.lower() in {"1", "true", "yes"}
            elif isinstance(default, int):
                kwargs[key] = int(raw)
            elif isinstance(default, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw
    return RunConfig(**kwargs)


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def _solver_config(cfg):
    return SolverConfig(
        max_outer_iterations=cfg.max_outer_iterations,
        objective_tolerance=cfg.objective_tolerance,
        zero_clamp=cfg.zero_clamp,
    )


def _penalty_spec(cfg):
    return PenaltySpec(family=cfg.penalty, lam=cfg.lam, scad_a=cfg.scad_a, lq_exponent=cfg.lq_exponent)


def load_csv(path, cfg):
    """Read an RFC-4180-style CSV into grouped data per the config's column map.

    The header row is required. Every column other than the response and the
    group column is a fixed effect, in file order; the random-effect columns
    (in config order) must be fixed-effect columns.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise NumericalDomainError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        for required in (cfg.response, cfg.group):
            if required not in header:
                raise NumericalDomainError(f"{path}: missing required column {required!r}")
        feature_cols = [h for h in header if h not in {cfg.response, cfg.group}]
        for name in tuple(cfg.random_effects) + tuple(cfg.unpenalized):
            if name not in feature_cols:
                raise NumericalDomainError(f"{path}: column {name!r} named in the config is not in the file")
        col_of = {h: i for i, h in enumerate(header)}
        y, groups, X = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise NumericalDomainError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                y.append(float(row[col_of[cfg.response]]))
            except ValueError:
                raise NumericalDomainError(
                    f"{path}: line {lineno}, column {cfg.response!r}: not a number: "
                    f"{row[col_of[cfg.response]]!r}"
                ) from None
            groups.append(row[col_of[cfg.group]].strip())
            xrow = []
            for name in feature_cols:
                try:
                    xrow.append(float(row[col_of[name]]))
                except ValueError:
                    raise NumericalDomainError(
                        f"{path}: line {lineno}, column {name!r}: not a number: {row[col_of[name]]!r}"
                    ) from None
            X.append(xrow)
        if not y:
            raise NumericalDomainError(f"{path}: no data rows")
    X = np.asarray(X)
    y = np.asarray(y)
    z_idx = [feature_cols.index(name) for name in cfg.random_effects]
    if not z_idx:
        raise NumericalDomainError("the config must name at least one random-effect column")
    Z = X[:, z_idx]
    unpen = {feature_cols.index(name) for name in cfg.unpenalized}
    data = MixedModelData.from_arrays(y, X, Z, np.asarray(groups, dtype=object), unpenalized=unpen)
    return data, feature_cols


def _variance_spec(cfg, data):
    return VarianceSpec(structure=VarianceStructure(cfg.variance_structure), q=data.q)


def _fit_kv(cfg, data, feature_cols, fit, report):
    items = {
        "schema": "pllmm.fit.v1",
        "penalty.family": cfg.penalty,
        "penalty.lambda": fit.penalty.lam,
        "penalty.scad_a": fit.penalty.scad_a,
        "penalty.lq_exponent": fit.penalty.lq_exponent,
        "variance.structure": cfg.variance_structure,
        "response": cfg.response,
        "group_column": cfg.group,
        "random_effects": list(cfg.random_effects),
        "unpenalized": list(cfg.unpenalized),
        "columns": feature_cols,
        "groups": list(data.group_labels),
        "n": data.n,
        "p": data.p,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "neg_loglik": fit.neg_loglik,
        "objective": float(fit.objective_trace[-1]),
        "beta": fit.params.beta,
        "sigma2": fit.params.sigma2,
        "theta2": fit.params.theta2,
        "active_set": list(fit.active_set),
        "warnings": list(fit.warnings) + list(report.warnings),
        "se.active": report.se_beta_active,
        "eta_unavailable": list(report.eta_unavailable),
        "prediction_error": report.prediction_error,
        "pe_definition": "conditional in-sample mean squared residual after subtracting predicted random effects",
    }
    for i in range(report.cov_beta_active.shape[0]):
        items[f"cov_beta_active.row{i}"] = report.cov_beta_active[i]
    for i in range(report.cov_eta.shape[0]):
        items[f"cov_eta.row{i}"] = report.cov_eta[i]
    for gi, label in enumerate(data.group_labels):
        items[f"b_hat.{label}"] = report.predicted_effects[gi]
    return items


def cmd_fit(args):
    cfg = _merged_config(args)
    data, feature_cols = load_csv(args.data, cfg)
    spec = _variance_spec(cfg, data)
    solver_cfg = _solver_config(cfg)
    penalty = _penalty_spec(cfg)
    init = lasso_init(data, spec, folds=cfg.folds, seed=cfg.seed, config=solver_cfg)
    fit = cgd_fit(data, spec, penalty, init, solver_cfg)
    report = build_report(data, spec, fit, penalty)
    if args.out:
        write_kv(args.out, _fit_kv(cfg, data, feature_cols, fit, report))
    print(f"converged: {fit.converged} after {fit.iterations} iterations")
    print(f"neg_loglik: {fit.neg_loglik:.6f}   active set size: {len(fit.active_set)}")
    active_names = [feature_cols[j] for j in fit.active_set]
    print("active columns:", ", ".join(active_names) if active_names else "(none)")
    print(f"sigma2: {fit.params.sigma2:.6g}   theta2: {np.array2string(fit.params.theta2, precision=6)}")
    print(f"prediction error: {report.prediction_error:.6g}")
    return 0 if fit.converged else 2


def cmd_path(args):
    cfg = _merged_config(args)
    data, feature_cols = load_csv(args.data, cfg)
    spec = _variance_spec(cfg, data)
    solver_cfg = _solver_config(cfg)
    penalty = _penalty_spec(cfg)
    path = fit_path(
        data, spec, penalty, config=solver_cfg,
        n_points=cfg.n_lambda, ratio=cfg.grid_ratio, folds=cfg.folds, seed=cfg.seed,
    )
    rows = []
    for i, lam in enumerate(path.grid):
        fit = path.fits[i]
        if fit is None:
            rows.append((float(lam), float("nan"), 0, float("inf"), 0))
        else:
            df = len(fit.active_set) + spec.q_star + 1
            rows.append((float(lam), 2.0 * fit.neg_loglik, df, float(path.bic_values[i]), len(fit.active_set)))
    header = f"{'lambda':>14}  {'-2loglik':>14}  {'df':>4}  {'BIC':>14}  {'|S|':>4}"
    print(header)
    for lam, m2ll, df, bicv, size in rows:
        print(f"{lam:>14.6g}  {m2ll:>14.6f}  {df:>4d}  {bicv:>14.6f}  {size:>4d}")
    sel = path.selected_index
    print(f"selected: lambda = {path.grid[sel]:.6g} (index {sel}), BIC = {path.bic_values[sel]:.6f}")
    if args.out:
        fit = path.selected_fit
        report = build_report(data, spec, fit, fit.penalty)
        items = _fit_kv(cfg, data, feature_cols, fit, report)
        items["schema"] = "pllmm.path.v1"
        items["path.lambda"] = path.grid
        items["path.neg2_loglik"] = [r[1] for r in rows]
        items["path.df"] = [r[2] for r in rows]
        items["path.bic"] = [r[3] for r in rows]
        items["path.active_size"] = [r[4] for r in rows]
        items["path.selected_index"] = sel
        items["path.failures"] = [f"{i}:{msg}" for i, msg in path.failures]
        write_kv(args.out, items)
    return 0 if path.selected_fit.converged else 2


def cmd_simulate(args):
    threads = _threads(args)
    scenario = SimulationScenario(
        p=args.p,
        rho=args.rho,
        penalty_family=args.penalty or "scad",
        replicates=args.reps,
        seed=args.seed,
        n_groups=args.groups,
        group_size=args.group_size,
        scad_a=args.scad_a,
    )
    if args.compare:
        comparison = compare_penalties(scenario, threads=threads)
        for name, summary in (("scad", comparison.scad), ("l1", comparison.l1)):
            print(f"penalty: {name}")
            print(format_summary_table(summary))
            print()
        print(f"paired mean(|S|_l1 - |S|_scad) = {comparison.mean_active_size_gap:.4f}")
        print(f"paired mean(PE_l1 - PE_scad)  = {float(comparison.diff_pe.mean()):.4f}")
        if args.out:
            items = {"schema": "pllmm.penalty_comparison.v1"}
            for name, summary in (("scad", comparison.scad), ("l1", comparison.l1)):
                for key, value in summary_to_kv(summary).items():
                    items[f"{name}.{key}"] = value
            items["paired.replicates"] = list(comparison.paired_replicates)
            items["paired.diff_active_size"] = comparison.diff_active_size
            items["paired.diff_tp"] = comparison.diff_tp
            items["paired.diff_pe"] = comparison.diff_pe
            items["paired.diff_support_sqerr"] = comparison.diff_support_sqerr
            write_kv(args.out, items)
            atomic_write_text(
                args.out + ".table.txt",
                "scad\n" + format_summary_table(comparison.scad)
                + "\n\nl1\n" + format_summary_table(comparison.l1) + "\n",
            )
    else:
        summary = run_scenario(scenario, threads=threads)
        print(format_summary_table(summary))
        if summary.degenerate_sd:
            print("note: single replicate, SD fields are degenerate (reported as 0)")
        if args.out:
            write_kv(args.out, summary_to_kv(summary))
            atomic_write_text(args.out + ".table.txt", format_summary_table(summary) + "\n")
    return 0


def cmd_predict(args):
    stored = read_kv(args.fit)
    if stored.get("schema") not in {"pllmm.fit.v1", "pllmm.path.v1"}:
        raise NumericalDomainError(f"{args.fit}: not a pllmm fit file")
    cfg = RunConfig(
        response=stored["response"],
        group=stored["group_column"],
        random_effects=tuple(stored["random_effects"]),
        unpenalized=tuple(stored["unpenalized"]),
        variance_structure=stored["variance.structure"],
    )
    data, feature_cols = load_csv(args.data, cfg)
    if feature_cols != list(stored["columns"]):
        raise NumericalDomainError(
            f"{args.data}: fixed-effect columns {feature_cols} do not match the fit file's {stored['columns']}"
        )
    stored_groups = [str(g) for g in stored["groups"]]
    for label in data.group_labels:
        if label not in stored_groups:
            raise GroupMismatchError(label)
    spec = _variance_spec(cfg, data)
    theta2 = np.asarray(stored["theta2"], dtype=float)
    params = ModelParameters(beta=np.asarray(stored["beta"], dtype=float),
                             sigma2=float(stored["sigma2"]), theta2=theta2)
    fit = FitResult(
        params=params,
        active_set=tuple(int(j) for j in stored["active_set"]),
        objective_trace=np.asarray([stored["objective"]]),
        neg_loglik=float(stored["neg_loglik"]),
        converged=bool(stored["converged"]),
        iterations=int(stored["iterations"]),
        penalty=PenaltySpec(
            family=stored["penalty.family"], lam=float(stored["penalty.lambda"]),
            scad_a=float(stored["penalty.scad_a"]), lq_exponent=float(stored["penalty.lq_exponent"]),
        ),
    )
    from .inference import conditional_fitted_values, prediction_error, predict_random_effects

    effects = predict_random_effects(data, spec, fit)
    fitted = conditional_fitted_values(data, fit, effects)
    pe = prediction_error(data, fit, effects)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["group"] + [f"b_hat_{k + 1}" for k in range(data.q)] + ["fitted"])
    for gi, label in enumerate(data.group_labels):
        for row_fit in fitted[gi]:
            writer.writerow([label] + [repr(float(v)) for v in effects[gi]] + [repr(float(row_fit))])
    if args.out:
        atomic_write_text(args.out, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    print(f"prediction error: {pe!r}")
    return 0


def _merged_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if getattr(args, "penalty", None):
        overrides["penalty"] = args.penalty
    if getattr(args, "lam", None) is not None:
        overrides["lam"] = args.lam
    if getattr(args, "scad_a", None) is not None:
        overrides["scad_a"] = args.scad_a
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if overrides:
        cfg = RunConfig(**{**asdict(cfg), **overrides})
    return cfg


def _threads(args):
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("PLLMM_THREADS", "").strip()
    if env:
        return int(env)
    return os.cpu_count() or 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pllmm",
        description="Penalized likelihood estimation and fixed-effect selection in linear mixed models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        if data:
            p.add_argument("--data", required=True, help="input CSV (header row required)")
            p.add_argument("--config", help="run configuration file (INI sections)")
        p.add_argument("--out", help="output file path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None,
                       help="worker processes (default: PLLMM_THREADS or all cores)")

    p_fit = sub.add_parser("fit", help="single-lambda penalized fit with inference report")
    common(p_fit)
    p_fit.add_argument("--penalty", choices=["l1", "l2", "lq", "hard", "scad"])
    p_fit.add_argument("--lambda", dest="lam", type=float, help="regularization weight")
    p_fit.add_argument("--scad-a", dest="scad_a", type=float)
    p_fit.set_defaults(func=cmd_fit)

    p_path = sub.add_parser("path", help="lambda path with BIC selection")
    common(p_path)
    p_path.add_argument("--penalty", choices=["l1", "l2", "lq", "hard", "scad"])
    p_path.add_argument("--scad-a", dest="scad_a", type=float)
    p_path.set_defaults(func=cmd_path, lam=None)

    p_sim = sub.add_parser("simulate", help="replicated simulation study")
    common(p_sim, data=False)
    p_sim.add_argument("--p", type=int, default=10)
    p_sim.add_argument("--rho", type=float, default=0.0)
    p_sim.add_argument("--penalty", choices=["l1", "l2", "lq", "hard", "scad"], default="scad")
    p_sim.add_argument("--reps", type=int, default=100)
    p_sim.add_argument("--groups", type=int, default=25)
    p_sim.add_argument("--group-size", dest="group_size", type=int, default=6)
    p_sim.add_argument("--scad-a", dest="scad_a", type=float, default=SCAD_DEFAULT_A)
    p_sim.add_argument("--compare", action="store_true", help="paired scad vs l1 on identical data")
    p_sim.set_defaults(func=cmd_simulate)
    p_sim.set_defaults(seed=0)

    p_pred = sub.add_parser("predict", help="random-effect predictions from a stored fit")
    common(p_pred)
    p_pred.add_argument("--fit", required=True, help="fit result file written by `pllmm fit` or `pllmm path`")
    p_pred.set_defaults(func=cmd_predict)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PllmmError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
