"""
Command-line front end.

Subcommands
-----------
fit      one variational (or evidence) fit of an ``x,y`` CSV, written as JSON
select   choose the inverse-gamma scale ``b`` with EPIC, PIC, GCV or CV
bench    Monte Carlo comparison on a synthetic signal (CSV + JSON reports)
signals  dump a test signal on a uniform grid

Every flag may also come from ``--config FILE``, a flat ``key = value`` file
whose keys are flag names without the leading dashes (``b-grid`` and
``b_grid`` are both accepted). Flags on the command line win. The base seed
of ``bench`` can be overridden with the ``SPARSEKERN_SEED`` environment
variable.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Sequence

import numpy as np

from .benchmark import (
    METHODS,
    ExperimentConfig,
    MethodSpec,
    _json_safe,
    atomic_write_text,
    df_curve_from_scans,
    gamma_curve,
    rows_to_csv,
    write_records_csv,
    write_rows_csv,
    write_summary_json,
    run_monte_carlo,
)
from .exceptions import DomainError, NumericalError
from .kernels import DEFAULT_WIDTHS, KernelBank, build_design
from .rvm import fit_evidence
from .selection import CV, EPIC, GCV, PIC, DfKind, default_b_grid, parse_bias, select_scale
from .signals import SignalKind, generate_signal
from .vb import FitConfig, FitResult, HyperpriorSpec, fit

logger = logging.getLogger("sparsekern")

SEED_ENV = "SPARSEKERN_SEED"


class UsageError(Exception):
    """Bad flag values detected after argparse (mapped to exit status 2)."""


# ---------------------------------------------------------------------------
# parsing helpers


def float_list(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def positive_float_list(text: str) -> tuple[float, ...]:
    values = float_list(text)
    if not all(np.isfinite(v) and v > 0 for v in values):
        raise argparse.ArgumentTypeError(f"expected positive numbers, got {text!r}")
    return values


def positive_float(text: str) -> float:
    (value,) = positive_float_list(text)
    return value


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def read_config(path: str) -> dict[str, str]:
    """Flat ``key = value`` (or ``key: value``) file; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            sep = "=" if "=" in line else ":" if ":" in line else None
            if sep is None:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split(sep, 1))
            out[key.lstrip("-").replace("-", "_")] = value
    return out


def _add_design_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--widths", type=positive_float_list, default=DEFAULT_WIDTHS,
                   help="comma-separated Gaussian kernel widths")
    p.add_argument("--no-bias-column", action="store_true", help="omit the constant column")


def _add_common_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-iters", type=positive_int, default=FitConfig.max_iters, help="iteration cap")
    p.add_argument("--tol", type=float, default=None,
                   help="convergence tolerance; None picks 0.4 (inverse-gamma), 0.01 (gamma, several "
                        "widths), 1e-5 (gamma, one width), 0.01/0.005 (evidence RVM)")
    p.add_argument("--freeze", type=float, default=FitConfig.freeze_threshold,
                   help="precision above which a weight is frozen")
    p.add_argument("--rv-threshold", type=float, default=FitConfig.rv_threshold,
                   help="|E[w]| above which a column counts as a relevance vector")


def _add_criterion_flags(p: argparse.ArgumentParser, default_gamma: float) -> None:
    p.add_argument("--criterion", choices=("epic", "pic", "gcv", "cv"), default="epic",
                   help="scale-selection criterion")
    p.add_argument("--gamma", type=float_list, default=(default_gamma,),
                   help="EPIC gamma in [0, 1]; bench accepts a comma-separated list")
    p.add_argument("--bias", choices=("gic", "plug", "true"), default="gic",
                   help="bias correction (true needs --sigma)")
    p.add_argument("--df", choices=[d.value for d in DfKind], default=DfKind.HAT_TRACE.value,
                   help="degrees of freedom in the EPIC penalty")
    p.add_argument("--b-grid", type=positive_float_list, default=None,
                   help="comma-separated scale grid; None = 0.01..10 step 0.01, then integers to "
                        "15 (sigma >= 0.3) or 65")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsekern", description="Sparse multiple-kernel relevance vector regression.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("fit", help="fit one model to an x,y CSV", formatter_class=fmt)
    p.add_argument("--config", help="flat key = value file with flag defaults")
    p.add_argument("--input", required=True, help="two-column CSV (x, y) with a header row")
    p.add_argument("--output", default="-", help="JSON destination ('-' for stdout)")
    p.add_argument("--hyperprior", choices=("gamma", "invgamma", "evidence"), default="invgamma",
                   help="hyperprior on the weight precisions; evidence = type-II ML RVM")
    p.add_argument("--b", type=positive_float, default=3.0, help="inverse-gamma scale")
    _add_design_flags(p)
    _add_common_fit_flags(p)

    p = sub.add_parser("select", help="select the inverse-gamma scale b", formatter_class=fmt)
    p.add_argument("--config", help="flat key = value file with flag defaults")
    p.add_argument("--input", required=True, help="two-column CSV (x, y) with a header row")
    p.add_argument("--output", default="-", help="JSON destination ('-' for stdout)")
    p.add_argument("--sigma", type=float, default=0.3,
                   help="noise level: used by --bias true and to pick the default b grid")
    p.add_argument("--threads", type=positive_int, default=os.cpu_count() or 1, help="worker threads")
    _add_criterion_flags(p, default_gamma=0.5)
    _add_design_flags(p)
    _add_common_fit_flags(p)

    p = sub.add_parser("bench", help="Monte Carlo benchmark on a test signal", formatter_class=fmt)
    p.add_argument("--config", help="flat key = value file with flag defaults")
    p.add_argument("--signal", choices=[k.value for k in SignalKind], default="bumps", help="test signal")
    p.add_argument("--n", type=positive_int, default=100, help="samples per trial")
    p.add_argument("--sigma", type=float, default=0.3, help="noise standard deviation")
    p.add_argument("--method", choices=METHODS, default="mkvrvm-invgamma", help="model")
    p.add_argument("--width", type=positive_float, default=0.05, help="kernel width of single-kernel methods")
    p.add_argument("--trials", type=positive_int, default=100, help="Monte Carlo trials")
    p.add_argument("--seed", type=int, default=0, help=f"base seed (overridden by ${SEED_ENV})")
    p.add_argument("--threads", type=positive_int, default=os.cpu_count() or 1, help="worker threads")
    p.add_argument("--out-dir", default="bench-out", help="directory for the reports")
    _add_criterion_flags(p, default_gamma=0.7)
    _add_common_fit_flags(p)

    p = sub.add_parser("signals", help="write g(x) on a uniform grid as CSV", formatter_class=fmt)
    p.add_argument("--config", help="flat key = value file with flag defaults")
    p.add_argument("--kind", choices=[k.value for k in SignalKind], default="bumps", help="test signal")
    p.add_argument("--grid", type=positive_int, default=1000, help="number of grid points on [0, 1]")
    p.add_argument("--output", default="-", help="CSV destination ('-' for stdout)")
    return parser


def parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    """Parse with config-file defaults; command-line flags take precedence."""
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        values = read_config(args.config)
    except OSError as exc:
        parser.error(f"cannot read config: {exc}")
    except UsageError as exc:
        parser.error(str(exc))
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in values.items():
        if key in ("config", "command") or key not in known:
            parser.error(f"unknown config key {key!r} for '{args.command}'")
        action = known[key]
        if action.nargs == 0:
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            continue
        try:
            defaults[key] = action.type(raw) if action.type else raw
        except (argparse.ArgumentTypeError, ValueError) as exc:
            parser.error(f"config key {key!r}: {exc}")
        if action.choices is not None and defaults[key] not in action.choices:
            parser.error(f"config key {key!r}: {raw!r} not one of {list(action.choices)}")
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# commands


def _fit_config(args) -> FitConfig:
    try:
        return FitConfig(max_iters=args.max_iters, lb_tolerance=args.tol, freeze_threshold=args.freeze,
                         rv_threshold=args.rv_threshold)
    except DomainError as exc:
        raise UsageError(str(exc))


def _bank(args) -> KernelBank:
    try:
        return KernelBank(tuple(args.widths), include_bias=not args.no_bias_column)
    except DomainError as exc:
        raise UsageError(str(exc))


def read_xy_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=float)
    except ValueError as exc:
        raise DomainError(f"{path}: cannot parse as a numeric two-column CSV ({exc})")
    if data.shape[1] != 2 or data.shape[0] < 2:
        raise DomainError(f"{path}: expected a header and at least two (x, y) rows")
    return data[:, 0], data[:, 1]


def _emit(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
    else:
        atomic_write_text(path, text)


def _center_of_column(design, m: int):
    if design.group_of_column[m] == 0 or design.centers is None:
        return None
    offset = 1 if design.bank.include_bias else 0
    center = np.asarray(design.centers)[(m - offset) % design.n_samples]
    return center.tolist() if center.ndim else float(center)


def fit_to_dict(result: FitResult, design, extra: dict | None = None) -> dict:
    doc = dict(extra or {})
    cols = result.relevance_indices
    doc.update(
        converged=bool(result.converged),
        iterations=int(result.iterations),
        mean_beta=float(result.mean_beta),
        noise_std=float(result.mean_beta ** -0.5),
        hat_trace=float(result.hat_trace),
        n_columns=int(design.n_columns),
        n_relevance=result.n_relevance,
        relevance_vectors=[dict(column=int(c), width=design.width_of_column(c), center=_center_of_column(design, c),
                                weight=float(result.mean_w[c])) for c in cols],
        mean_w=result.mean_w.tolist(),
        mean_alpha=result.mean_alpha.tolist(),
        predictive_mean=result.predictive_mean.tolist(),
        predictive_std=np.sqrt(np.diag(result.predictive_cov)).tolist(),
    )
    return doc


def cmd_fit(args) -> int:
    x, y = read_xy_csv(args.input)
    design = build_design(x, _bank(args))
    cfg = _fit_config(args)
    if args.hyperprior == "evidence":
        result = fit_evidence(y, design, cfg)
        meta = dict(hyperprior="evidence")
    elif args.hyperprior == "gamma":
        result = fit(y, design, HyperpriorSpec.gamma(), cfg)
        meta = dict(hyperprior="gamma")
    else:
        result = fit(y, design, HyperpriorSpec.inverse_gamma(args.b), cfg)
        meta = dict(hyperprior="invgamma", b=args.b)
    _emit(args.output, json.dumps(_json_safe(fit_to_dict(result, design, meta)), indent=2) + "\n")
    return 0


def _criteria(args, sigma: float) -> list:
    try:
        bias = parse_bias(args.bias, sigma if args.bias == "true" else None)
        if args.criterion == "epic":
            return [EPIC(g, bias, DfKind(args.df)) for g in args.gamma]
    except DomainError as exc:
        raise UsageError(str(exc))
    if args.criterion == "pic":
        return [PIC(bias)]
    return [GCV()] if args.criterion == "gcv" else [CV()]


def cmd_select(args) -> int:
    x, y = read_xy_csv(args.input)
    if len(args.gamma) != 1:
        raise UsageError("select takes a single --gamma")
    (criterion,) = _criteria(args, args.sigma)
    design = build_design(x, _bank(args))
    grid = args.b_grid if args.b_grid is not None else default_b_grid(args.sigma)
    report = select_scale(y, design, HyperpriorSpec.inverse_gamma(1.0), _fit_config(args), grid, criterion,
                          n_jobs=args.threads)
    meta = dict(criterion=criterion.label, selected_b=report.selected_b,
                curve=[dict(b=r.b, value=r.value, log_lik=r.log_lik, bias=r.bias, df=r.df, failed=r.failed)
                       for r in report.records])
    _emit(args.output, json.dumps(_json_safe(fit_to_dict(report.selected_fit, design, meta)), indent=2) + "\n")
    return 0


def cmd_bench(args) -> int:
    seed = args.seed
    if os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise UsageError(f"${SEED_ENV} must be an integer")
    cfg_fit = _fit_config(args)
    if args.method == "mkvrvm-invgamma":
        grid = args.b_grid if args.b_grid is not None else tuple(default_b_grid(args.sigma))
        crits = tuple(_criteria(args, args.sigma))
        method = MethodSpec(args.method, b_grid=grid, criteria=crits, fit_config=cfg_fit)
    elif args.method.startswith("sk"):
        method = MethodSpec(args.method, width=args.width, fit_config=cfg_fit)
    else:
        method = MethodSpec(args.method, fit_config=cfg_fit)
    try:
        cfg = ExperimentConfig(args.signal, args.n, args.sigma, args.trials, method, seed=seed,
                               n_jobs=args.threads)
    except DomainError as exc:
        raise UsageError(str(exc))
    result = run_monte_carlo(cfg, keep_scans=args.method == "mkvrvm-invgamma")
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    write_records_csv(os.path.join(out, "trials.csv"), result.records)
    write_summary_json(os.path.join(out, "summary.json"), result)
    if result.scans:
        write_rows_csv(os.path.join(out, "df_curve.csv"), df_curve_from_scans(result.scans))
        curve = gamma_curve(result.records)
        if curve:
            write_rows_csv(os.path.join(out, "gamma_curve.csv"), curve)
    for row in result.summary:
        logger.info("%s %s: PSE %.4g (%.2g)  MSE %.4g  RVs %.2f  failed %d", row["method"], row["criterion"],
                    row["pse_mean"], row["pse_std"], row["mse_mean"], row["rvs_mean"], row["n_failed"])
    return 0


def cmd_signals(args) -> int:
    x = np.linspace(0.0, 1.0, args.grid)
    g = generate_signal(args.kind, x)
    _emit(args.output, rows_to_csv([dict(x=float(a), g=float(b)) for a, b in zip(x, g)], ["x", "g"]))
    return 0


COMMANDS = {"fit": cmd_fit, "select": cmd_select, "bench": cmd_bench, "signals": cmd_signals}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"sparsekern {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, NumericalError, OSError, np.linalg.LinAlgError) as exc:
        print(f"sparsekern {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
