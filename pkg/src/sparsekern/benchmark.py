"""
Monte Carlo comparison of sparse kernel regressors on synthetic signals.

A trial draws ``x ~ U[0, 1]^N`` and ``y = g(x) + N(0, sigma^2)`` from a
per-trial random stream, fits one method and scores it by

* ``MSE = sum_n (mu*_n - g(x_n))^2 / (N - 1)`` at the training inputs and
* ``PSE = sum_i (z_i - g(x_i))^2 / 999`` on 1000 equally spaced points of
  [0, 1], with ``z = Phi_new E[w]``.

For the inverse-gamma model every trial fits the whole ``b`` grid once and
then lets each requested criterion pick its ``b``, so comparing many
criteria (or many ``gamma`` values) costs no extra fits.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import DomainError, NumericalError
from .kernels import DEFAULT_WIDTHS, GroupedDesign, KernelBank, build_cross_design, build_design
from .rvm import fit_evidence
from .selection import (
    CV,
    EPIC,
    GCV,
    PIC,
    Criterion,
    DfKind,
    GicBias,
    PlugInBias,
    ScaleRecord,
    TrueBias,
    choose_scale,
    scan_scales,
)
from .signals import SignalKind, generate_signal
from .vb import FitConfig, FitResult, HyperpriorSpec, fit

logger = logging.getLogger(__name__)

PSE_GRID = np.linspace(0.0, 1.0, 1000)
#: the paper's reduced-cost grid used throughout the test-suite
REDUCED_B_GRID = (0.01, 0.1, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 15.0)
GAMMA_GRID = tuple(round(0.1 * k, 1) for k in range(11))

METHODS = ("mkvrvm-invgamma", "mkvrvm-gamma", "skvrvm-gamma", "mkrvm", "skrvm")


@dataclass(frozen=True)
class MethodSpec:
    """Which model to fit.

    ``name`` is one of :data:`METHODS`. Single-kernel methods need ``width``;
    the inverse-gamma method needs a ``b_grid`` and at least one criterion.
    """

    name: str
    width: float | None = None
    b_grid: tuple[float, ...] = REDUCED_B_GRID
    criteria: tuple = ()
    fit_config: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if self.name not in METHODS:
            raise DomainError(f"unknown method {self.name!r}; expected one of {METHODS}")
        if self.name.startswith("sk") and self.width is None:
            raise DomainError(f"{self.name} needs a kernel width")
        if self.name == "mkvrvm-invgamma":
            if not self.criteria:
                raise DomainError("the inverse-gamma method needs at least one criterion")
            object.__setattr__(self, "b_grid", tuple(float(b) for b in self.b_grid))
        object.__setattr__(self, "criteria", tuple(self.criteria))

    @property
    def is_single_kernel(self) -> bool:
        return self.name.startswith("sk")

    def bank(self) -> KernelBank:
        return KernelBank.single(self.width) if self.is_single_kernel else KernelBank(DEFAULT_WIDTHS)

    @property
    def label(self) -> str:
        return f"{self.name} h={self.width:g}" if self.is_single_kernel else self.name


@dataclass(frozen=True)
class ExperimentConfig:
    signal: SignalKind
    n: int
    sigma: float
    trials: int
    method: MethodSpec
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "signal", SignalKind(self.signal))
        if self.n < 2:
            raise DomainError("need at least two samples per trial")
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise DomainError("sigma must be a nonnegative number")
        if self.trials < 1:
            raise DomainError("need at least one trial")
        if self.n_jobs < 1:
            raise DomainError("n_jobs must be positive")


# ---------------------------------------------------------------------------
# data and metrics


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent stream per ``(seed, trial)``; order of execution is irrelevant."""
    return np.random.default_rng([int(seed), int(trial)])


def sample_dataset(cfg: ExperimentConfig, trial: int) -> tuple[NDArray, NDArray, NDArray]:
    """``(x, y, g(x))`` for one trial."""
    rng = trial_rng(cfg.seed, trial)
    x = rng.uniform(0.0, 1.0, cfg.n)
    noise = rng.standard_normal(cfg.n)
    g = generate_signal(cfg.signal, x)
    return x, g + cfg.sigma * noise, g


def mse_metric(predictive_mean: ArrayLike, g_values: ArrayLike) -> float:
    """Squared error at the training inputs with divisor ``N - 1``."""
    pm = predictive_mean.predictive_mean if isinstance(predictive_mean, FitResult) else predictive_mean
    diff = np.asarray(pm, dtype=float) - np.asarray(g_values, dtype=float)
    return float(diff @ diff / (len(diff) - 1))


def pse_metric(weights, design: GroupedDesign, kind: SignalKind | str,
               grid_design: NDArray | None = None) -> float:
    """Squared error on 1000 equally spaced inputs of [0, 1] with divisor 999.

    ``weights`` is a weight vector or anything with a ``mean_w`` attribute.
    ``grid_design`` may pass a precomputed ``Phi_new`` to avoid rebuilding it.
    """
    w = np.asarray(getattr(weights, "mean_w", weights), dtype=float)
    phi_new = build_cross_design(PSE_GRID, design) if grid_design is None else grid_design
    diff = phi_new @ w - generate_signal(kind, PSE_GRID)
    return float(diff @ diff / (len(PSE_GRID) - 1))


# ---------------------------------------------------------------------------
# trial records


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    seed: int
    method: str
    criterion: str
    signal: str
    N: int
    sigma: float
    gamma: float | None
    bias_kind: str | None
    df_kind: str | None
    selected_b: float | None
    mse: float
    pse: float
    rvs: int
    sparsity_pct: float
    tr_h: float
    converged: bool
    failed: bool = False

    @property
    def group(self) -> tuple:
        return (self.method, self.criterion)


CSV_COLUMNS = [f for f in TrialRecord.__dataclass_fields__]


def criterion_fields(criterion: Criterion | None) -> dict:
    if criterion is None:
        return dict(criterion="n/a", gamma=None, bias_kind=None, df_kind=None)
    if isinstance(criterion, EPIC):
        return dict(criterion=criterion.label, gamma=criterion.gamma, bias_kind=criterion.bias.name,
                    df_kind=criterion.df.value)
    if isinstance(criterion, PIC):
        return dict(criterion=criterion.label, gamma=0.0, bias_kind=criterion.bias.name, df_kind=None)
    return dict(criterion=criterion.label, gamma=None, bias_kind=None, df_kind=None)


def _failed_records(cfg: ExperimentConfig, trial: int) -> list[TrialRecord]:
    crits = cfg.method.criteria or (None,)
    return [TrialRecord(trial=trial, seed=cfg.seed, method=cfg.method.label, signal=cfg.signal.value,
                        N=cfg.n, sigma=cfg.sigma, selected_b=None, mse=math.nan, pse=math.nan, rvs=0,
                        sparsity_pct=math.nan, tr_h=math.nan, converged=False, failed=True,
                        **criterion_fields(c)) for c in crits]


@dataclass
class TrialOutcome:
    records: list[TrialRecord]
    scan: list[ScaleRecord] | None = None


def run_trial(cfg: ExperimentConfig, trial: int) -> TrialOutcome:
    """Sample, fit and score one trial (all criteria for the inverse-gamma method)."""
    method = cfg.method
    x, y, g = sample_dataset(cfg, trial)
    design = build_design(x, method.bank())
    phi_new = build_cross_design(PSE_GRID, design)
    n_cols = design.n_columns
    common = dict(trial=trial, seed=cfg.seed, method=method.label, signal=cfg.signal.value,
                  N=cfg.n, sigma=cfg.sigma)

    def metrics(res: FitResult) -> dict:
        return dict(mse=mse_metric(res.predictive_mean, g), pse=pse_metric(res, design, cfg.signal, phi_new))

    if method.name == "mkvrvm-invgamma":
        scan, _ = scan_scales(y, design, HyperpriorSpec.inverse_gamma(1.0), method.fit_config,
                              method.b_grid, extras=metrics)
        records = []
        for crit in method.criteria:
            idx, _ = choose_scale(scan, crit)
            rec = scan[idx]
            records.append(TrialRecord(
                **common, **criterion_fields(crit), selected_b=rec.b,
                mse=rec.extras["mse"], pse=rec.extras["pse"], rvs=rec.rvs,
                sparsity_pct=100.0 * rec.rvs / n_cols, tr_h=rec.hat_trace, converged=rec.converged))
        return TrialOutcome(records, scan)

    if method.name in ("mkrvm", "skrvm"):
        res = fit_evidence(y, design, method.fit_config)
    else:
        res = fit(y, design, HyperpriorSpec.gamma(), method.fit_config)
    m = metrics(res)
    rec = TrialRecord(**common, **criterion_fields(None), selected_b=None, mse=m["mse"], pse=m["pse"],
                      rvs=res.n_relevance, sparsity_pct=100.0 * res.n_relevance / n_cols,
                      tr_h=res.hat_trace, converged=res.converged)
    return TrialOutcome([rec])


def _guarded_trial(cfg: ExperimentConfig, trial: int) -> TrialOutcome:
    try:
        return run_trial(cfg, trial)
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        logger.warning("trial %d failed: %s", trial, exc)
        return TrialOutcome(_failed_records(cfg, trial))


# ---------------------------------------------------------------------------
# aggregation


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray([v for v in values if v is not None], dtype=float)
    if arr.size == 0:
        return math.nan, math.nan
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def summarize(records: Iterable[TrialRecord]) -> list[dict]:
    """Table 5/6 style cells, one row per (method, criterion).

    Failed trials are excluded from the statistics and counted in ``n_failed``.
    Rows keep first-appearance order.
    """
    groups: dict[tuple, list[TrialRecord]] = {}
    for r in records:
        groups.setdefault(r.group, []).append(r)
    rows = []
    for (method, crit), recs in groups.items():
        ok = sorted((r for r in recs if not r.failed), key=lambda r: r.trial)
        first = recs[0]
        row = dict(method=method, criterion=crit, bias=first.bias_kind, df=first.df_kind, gamma=first.gamma,
                   n_trials=len(ok), n_failed=len(recs) - len(ok))
        for key in ("mse", "pse", "rvs", "sparsity_pct", "tr_h"):
            row[f"{key}_mean"], row[f"{key}_std"] = _mean_std([getattr(r, key) for r in ok])
        if any(r.selected_b is not None for r in ok):
            row["b_mean"], row["b_std"] = _mean_std([r.selected_b for r in ok])
            row["b_median"] = float(np.median([r.selected_b for r in ok]))
        else:
            row["b_mean"] = row["b_std"] = row["b_median"] = None
        row["rvs_median"] = float(np.median([r.rvs for r in ok])) if ok else math.nan
        row["pse_median"] = float(np.median([r.pse for r in ok])) if ok else math.nan
        row["mse_median"] = float(np.median([r.mse for r in ok])) if ok else math.nan
        row["converged_pct"] = 100.0 * float(np.mean([r.converged for r in ok])) if ok else math.nan
        rows.append(row)
    return rows


def best_gamma_rows(rows: Sequence[dict]) -> list[dict]:
    """For each (bias, df) family of EPIC rows keep the gamma with the smallest mean PSE."""
    best: dict[tuple, dict] = {}
    others = []
    for row in rows:
        if row["criterion"].startswith("EPIC"):
            key = (row["method"], row["bias"], row["df"])
            if key not in best or row["pse_mean"] < best[key]["pse_mean"]:
                best[key] = row
        else:
            others.append(row)
    return list(best.values()) + others


@dataclass
class MonteCarloResult:
    config: ExperimentConfig
    records: list[TrialRecord]
    scans: dict[int, list[ScaleRecord]] = field(default_factory=dict)

    @property
    def summary(self) -> list[dict]:
        return summarize(self.records)

    @property
    def n_failed_trials(self) -> int:
        return len({r.trial for r in self.records if r.failed})


def run_monte_carlo(cfg: ExperimentConfig, keep_scans: bool = False) -> MonteCarloResult:
    """Run ``cfg.trials`` independent trials, in parallel when ``cfg.n_jobs > 1``.

    Records come back sorted by trial regardless of scheduling, so summaries
    are reproducible for a given seed.
    """
    trials = range(cfg.trials)
    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            outcomes = list(pool.map(lambda t: _guarded_trial(cfg, t), trials))
    else:
        outcomes = [_guarded_trial(cfg, t) for t in trials]
    records = [r for o in outcomes for r in o.records]
    scans = {t: o.scan for t, o in zip(trials, outcomes) if keep_scans and o.scan is not None}
    return MonteCarloResult(cfg, records, scans)


def df_curve_from_scans(scans: dict[int, list[ScaleRecord]]) -> list[dict]:
    """Mean and std of RVs and Tr H per ``b`` over trials (failed fits skipped)."""
    by_b: dict[float, list[ScaleRecord]] = {}
    for trial in sorted(scans):
        for rec in scans[trial]:
            if not rec.failed:
                by_b.setdefault(rec.b, []).append(rec)
    rows = []
    for b in sorted(by_b):
        recs = by_b[b]
        rvs_mean, rvs_std = _mean_std([r.rvs for r in recs])
        trh_mean, trh_std = _mean_std([r.hat_trace for r in recs])
        rows.append(dict(b=b, rvs_mean=rvs_mean, rvs_std=rvs_std, trh_mean=trh_mean, trh_std=trh_std,
                         n=len(recs)))
    return rows


def df_curve(cfg: ExperimentConfig, b_grid: Sequence[float]) -> list[dict]:
    """Data behind the "df against b" figure: one row per grid value."""
    method = MethodSpec("mkvrvm-invgamma", b_grid=tuple(b_grid), criteria=(GCV(),),
                        fit_config=cfg.method.fit_config)
    sub = ExperimentConfig(cfg.signal, cfg.n, cfg.sigma, cfg.trials, method, cfg.seed, cfg.n_jobs)
    return df_curve_from_scans(run_monte_carlo(sub, keep_scans=True).scans)


def gamma_curve(records: Iterable[TrialRecord]) -> list[dict]:
    """Quartiles of selected b, RVs, MSE and PSE against gamma for each EPIC family."""
    fam: dict[tuple, dict[float, list[TrialRecord]]] = {}
    for r in records:
        if r.failed or not r.criterion.startswith(("EPIC", "PIC")) or r.gamma is None:
            continue
        key = (r.method, r.bias_kind, r.df_kind or "n/a")
        fam.setdefault(key, {}).setdefault(r.gamma, []).append(r)
    # PIC rows (gamma = 0) belong to every df family of the same bias
    rows = []
    for (method, bias, df), by_gamma in fam.items():
        if df == "n/a":
            continue
        zero = fam.get((method, bias, "n/a"), {}).get(0.0, [])
        if 0.0 not in by_gamma and zero:
            by_gamma = {0.0: zero, **by_gamma}
        for g in sorted(by_gamma):
            recs = by_gamma[g]
            row = dict(method=method, bias=bias, df=df, gamma=g, n=len(recs))
            for key in ("selected_b", "rvs", "mse", "pse"):
                q = np.percentile([getattr(r, key) for r in recs], [25, 50, 75])
                row.update({f"{key}_q1": float(q[0]), f"{key}_median": float(q[1]), f"{key}_q3": float(q[2])})
            rows.append(row)
    return rows


def epic_family(gammas: Sequence[float] = GAMMA_GRID, biases=(GicBias(),),
                dfs: Sequence[DfKind] = (DfKind.HAT_TRACE,)) -> tuple[Criterion, ...]:
    """EPIC criteria over a gamma grid for each bias/df combination."""
    return tuple(EPIC(float(g), b, d) for b in biases for d in dfs for g in gammas)


def comparison_criteria(sigma: float, gammas: Sequence[float] = GAMMA_GRID) -> tuple[Criterion, ...]:
    """The full comparison: EPIC over gamma for all bias/df pairs, plus PIC, CV and GCV."""
    biases = (TrueBias(sigma), GicBias()) if sigma > 0 else (GicBias(),)
    biases = biases + (PlugInBias(),)
    crits = list(epic_family([g for g in gammas if g > 0], biases, tuple(DfKind)))
    crits += [PIC(b) for b in biases]
    crits += [CV(), GCV()]
    return tuple(crits)


# ---------------------------------------------------------------------------
# output


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value) if np.isfinite(value) else str(value)
    return str(value)


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    columns = list(columns) if columns is not None else (list(rows[0]) if rows else [])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def write_records_csv(path, records: Sequence[TrialRecord]) -> None:
    atomic_write_text(path, rows_to_csv([asdict(r) for r in records], CSV_COLUMNS))


def _json_safe(obj):
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_summary_json(path, result: MonteCarloResult) -> None:
    cfg = result.config
    doc = {
        "signal": cfg.signal.value,
        "N": cfg.n,
        "sigma": cfg.sigma,
        "trials": cfg.trials,
        "seed": cfg.seed,
        "method": cfg.method.label,
        "failed_trials": result.n_failed_trials,
        "rows": result.summary,
        "best_gamma_rows": best_gamma_rows(result.summary),
    }
    atomic_write_text(path, json.dumps(_json_safe(doc), indent=2, sort_keys=False) + "\n")


def write_rows_csv(path, rows: Sequence[dict]) -> None:
    atomic_write_text(path, rows_to_csv(rows))
