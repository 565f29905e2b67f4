"""
Information criteria for choosing the inverse-gamma scale ``b``.

Every criterion here is computed from a finished fit:

* ``PIC = -2 ln h(y|y) + 2 Bias``, where ``h`` is the Gaussian predictive
  ``N(mu*, Sigma*)`` evaluated at the training targets;
* ``EPIC_gamma = PIC + 2 gamma ln C(P, df)``, which adds a penalty on the
  number of models with ``df`` degrees of freedom among ``P`` basis functions;
* generalized and leave-one-out cross-validation through the hat matrix.

Three bias corrections are available: the exact value under a known Gaussian
truth, its plug-in version and the GIC-type correction. The degrees of
freedom are either the relevance-vector count or ``Tr H``.

Selecting ``b`` means one fit per grid value; :func:`scan_scales` keeps only
the scalar summaries every criterion needs, so many criteria can be compared
on the same fits without storing ``len(b_grid)`` fitted models.
"""
from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg

from .exceptions import DomainError, NumericalError
from .kernels import GroupedDesign
from .special import log_binomial_real
from .vb import LOG_2PI, FitConfig, FitResult, HyperpriorSpec, _cholesky, fit

logger = logging.getLogger(__name__)


class DfKind(str, enum.Enum):
    """Degrees of freedom entering the EPIC penalty."""

    RELEVANCE_COUNT = "rvs"
    HAT_TRACE = "trh"


@dataclass(frozen=True)
class TrueBias:
    """Exact bias when the data are ``N(mu, sigma^2 I)`` with known ``sigma``."""

    sigma: float
    name: str = field(default="true", init=False)

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise DomainError("the true noise level must be positive")


@dataclass(frozen=True)
class PlugInBias:
    """Bias with the truth replaced by ``N(Phi E[w], E[beta]^-1 I)``."""

    name: str = field(default="plug", init=False)


@dataclass(frozen=True)
class GicBias:
    """Generalized-information-criterion bias ``Tr(R^-1 Q)``."""

    name: str = field(default="gic", init=False)


BiasKind = Union[TrueBias, PlugInBias, GicBias]


def parse_bias(name: str, sigma: float | None = None) -> BiasKind:
    """``"true"`` (needs ``sigma``), ``"plug"`` or ``"gic"``."""
    name = name.lower()
    if name == "true":
        if sigma is None:
            raise DomainError("the true bias needs the generating sigma")
        return TrueBias(sigma)
    if name == "plug":
        return PlugInBias()
    if name == "gic":
        return GicBias()
    raise DomainError(f"unknown bias kind {name!r}")


# ---------------------------------------------------------------------------
# criterion building blocks on a single fit


def _predictive_chol(fit_result: FitResult) -> NDArray:
    try:
        return fit_result.predictive_cov_cholesky
    except NumericalError as exc:
        raise NumericalError(f"predictive covariance is not positive definite: {exc}") from exc


def log_predictive_likelihood(fit_result: FitResult, y: ArrayLike) -> float:
    """``ln N(y | mu*, Sigma*)`` at the training targets."""
    y = np.asarray(y, dtype=float)
    chol = _predictive_chol(fit_result)
    z = linalg.solve_triangular(chol, y - fit_result.predictive_mean, lower=True)
    return float(-0.5 * (len(y) * LOG_2PI + z @ z) - np.sum(np.log(np.diag(chol))))


def trace_sinv_h(fit_result: FitResult) -> float:
    """``Tr(Sigma*^-1 H)`` by solving ``Sigma* X = H``; no explicit inverse."""
    chol = _predictive_chol(fit_result)
    x = linalg.cho_solve((chol, True), fit_result.hat_matrix)
    return float(np.trace(x))


def bias_true(fit_result: FitResult, sigma: float) -> float:
    """``sigma^2 Tr(Sigma*^-1 H)``."""
    if not (np.isfinite(sigma) and sigma > 0):
        raise DomainError("sigma must be positive")
    return sigma * sigma * trace_sinv_h(fit_result)


def bias_plug(fit_result: FitResult) -> float:
    """``E[beta]^-1 Tr(Sigma*^-1 H)``."""
    return trace_sinv_h(fit_result) / fit_result.mean_beta


def bias_gic(fit_result: FitResult, design: GroupedDesign, y: ArrayLike) -> float:
    """``Tr(R^-1 Q)`` with

    ``R = (E[beta] Phi^T Phi + N E[A]) / N`` and
    ``Q = (E[beta]^2 Phi^T L^2 Phi - E[beta] E[A] w 1^T L Phi) / N``,

    ``L = diag(y - Phi w)``, ``w = E[w]``.

    For ``P <= N`` the ``P x P`` system is solved directly. Otherwise, with
    ``K = Phi (N E[A])^-1 Phi^T`` and ``C = E[beta]^-1 I + K`` the trace
    reduces to ``E[beta] sum_n r_n^2 (K C^-1)_nn - r^T C^-1 Phi w / N``, an
    ``N x N`` computation even when ``P`` is large.
    """
    y = np.asarray(y, dtype=float)
    phi = design.matrix
    n = len(y)
    w = fit_result.mean_w
    alpha = fit_result.state.mean_alpha
    beta = fit_result.mean_beta
    resid = y - phi @ w
    if phi.shape[1] <= n:
        # direct P x P form; also valid for E[A] = 0
        r_mat = beta * phi.T @ phi
        r_mat[np.diag_indices_from(r_mat)] += n * alpha
        q_mat = (beta * beta) * (phi.T * resid ** 2) @ phi
        q_mat -= beta * np.outer(alpha * w, resid @ phi)
        return float(np.trace(linalg.solve(r_mat, q_mat, assume_a="gen")))
    k_mat = (phi / (n * alpha)) @ phi.T
    c_mat = k_mat.copy()
    c_mat[np.diag_indices(n)] += 1.0 / beta
    chol = _cholesky(c_mat)
    # K C^-1 = (C^-1 K)^T since both are symmetric
    kc_inv_diag = np.diag(linalg.cho_solve((chol, True), k_mat)).copy()
    cross = resid @ linalg.cho_solve((chol, True), phi @ w) / n
    return float(beta * np.sum(resid * resid * kc_inv_diag) - cross)


def pic(fit_result: FitResult, y: ArrayLike, bias: float) -> float:
    return -2.0 * log_predictive_likelihood(fit_result, y) + 2.0 * bias


def degrees_of_freedom(fit_result: FitResult, df_kind: DfKind | str) -> float:
    if DfKind(df_kind) is DfKind.RELEVANCE_COUNT:
        return float(fit_result.n_relevance)
    return fit_result.hat_trace


def epic_penalty(gamma: float, df: float, n_columns: int) -> float:
    """``2 gamma ln C(P, df)``; the binomial is extended to real ``df``."""
    if not 0.0 <= gamma <= 1.0:
        raise DomainError("gamma must lie in [0, 1]")
    if gamma == 0.0:
        # still validates df for consistency with gamma > 0
        log_binomial_real(n_columns, df)
        return 0.0
    return 2.0 * gamma * log_binomial_real(n_columns, df)


def epic_gamma(fit_result: FitResult, y: ArrayLike, bias: float, gamma: float,
               df_kind: DfKind | str, n_columns: int) -> float:
    """``-2 ln h(y|y) + 2 Bias + 2 gamma ln C(P, df)``."""
    df = degrees_of_freedom(fit_result, df_kind)
    return pic(fit_result, y, bias) + epic_penalty(gamma, df, n_columns)


def _residual(fit_result: FitResult, y: ArrayLike) -> NDArray:
    return np.asarray(y, dtype=float) - fit_result.predictive_mean


def gcv(fit_result: FitResult, y: ArrayLike) -> float:
    """``mean(((y - mu*) / (1 - Tr H / N))^2)``."""
    r = _residual(fit_result, y)
    n = len(r)
    denom = 1.0 - fit_result.hat_trace / n
    if denom <= 0:
        raise DomainError("GCV is undefined when Tr H >= N")
    return float(np.mean((r / denom) ** 2))


def loo_cv(fit_result: FitResult, y: ArrayLike) -> float:
    """Leave-one-out shortcut ``mean(((y - mu*) / (1 - H_nn))^2)``.

    Exact for a linear smoother with frozen hyperparameters; the full
    procedure would refit the hyperparameters without each point.
    """
    r = _residual(fit_result, y)
    denom = 1.0 - np.diag(fit_result.hat_matrix)
    if np.any(denom <= 0):
        raise DomainError("leave-one-out shortcut is undefined when some H_nn >= 1")
    return float(np.mean((r / denom) ** 2))


# ---------------------------------------------------------------------------
# criteria as values


@dataclass(frozen=True)
class EPIC:
    gamma: float
    bias: BiasKind = field(default_factory=GicBias)
    df: DfKind = DfKind.HAT_TRACE

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise DomainError("gamma must lie in [0, 1]")
        object.__setattr__(self, "df", DfKind(self.df))

    @property
    def label(self) -> str:
        return f"EPIC_{self.gamma:g}[{self.bias.name},{self.df.value}]"


@dataclass(frozen=True)
class PIC:
    bias: BiasKind = field(default_factory=GicBias)

    @property
    def label(self) -> str:
        return f"PIC[{self.bias.name}]"


@dataclass(frozen=True)
class GCV:
    label: str = field(default="GCV", init=False)


@dataclass(frozen=True)
class CV:
    label: str = field(default="CV", init=False)


Criterion = Union[EPIC, PIC, GCV, CV]


@dataclass(frozen=True)
class ScaleRecord:
    """Criterion ingredients of the fit at one grid value of ``b``.

    ``failed`` records that the fit raised; such a record never wins.
    """

    b: float
    n_columns: int
    log_lik: float = math.nan
    trace_sinv_h: float = math.nan
    bias_gic: float = math.nan
    mean_beta: float = math.nan
    rvs: int = 0
    hat_trace: float = math.nan
    gcv: float = math.nan
    loo: float = math.nan
    converged: bool = False
    failed: bool = False
    error: str | None = None
    extras: dict = field(default_factory=dict, compare=True)

    def bias(self, kind: BiasKind) -> float:
        if isinstance(kind, TrueBias):
            return kind.sigma ** 2 * self.trace_sinv_h
        if isinstance(kind, PlugInBias):
            return self.trace_sinv_h / self.mean_beta
        return self.bias_gic

    def df(self, kind: DfKind) -> float:
        return float(self.rvs) if DfKind(kind) is DfKind.RELEVANCE_COUNT else self.hat_trace


def summarize_fit(fit_result: FitResult, design: GroupedDesign, y: ArrayLike, b: float,
                  extras=None) -> ScaleRecord:
    """Everything the criteria need from one fit.

    ``extras``, if given, maps the fit to a dict of additional scalars kept
    in ``record.extras`` (for instance prediction errors on a test grid).
    """
    y = np.asarray(y, dtype=float)

    def guarded(fn):
        try:
            return fn(fit_result, y)
        except DomainError:
            return math.inf

    return ScaleRecord(
        b=float(b),
        n_columns=design.n_columns,
        log_lik=log_predictive_likelihood(fit_result, y),
        trace_sinv_h=trace_sinv_h(fit_result),
        bias_gic=bias_gic(fit_result, design, y),
        mean_beta=fit_result.mean_beta,
        rvs=fit_result.n_relevance,
        hat_trace=fit_result.hat_trace,
        gcv=guarded(gcv),
        loo=guarded(loo_cv),
        converged=fit_result.converged,
        extras=dict(extras(fit_result)) if extras is not None else {},
    )


def criterion_value(record: ScaleRecord, criterion: Criterion) -> float:
    """Criterion value of a summarized fit; ``inf`` for failed fits."""
    if record.failed:
        return math.inf
    if isinstance(criterion, GCV):
        return record.gcv
    if isinstance(criterion, CV):
        return record.loo
    value = -2.0 * record.log_lik + 2.0 * record.bias(criterion.bias)
    if isinstance(criterion, EPIC):
        value += epic_penalty(criterion.gamma, record.df(criterion.df), record.n_columns)
    return float(value)


def criterion_gamma(criterion: Criterion) -> float | None:
    if isinstance(criterion, EPIC):
        return criterion.gamma
    if isinstance(criterion, PIC):
        return 0.0
    return None


def default_b_grid(sigma: float) -> NDArray:
    """0.01 to 10 in steps of 0.01, then integers up to 15 (sigma >= 0.3) or 65."""
    fine = np.round(np.arange(1, 1001) * 0.01, 2)
    top = 15 if sigma >= 0.3 - 1e-12 else 65
    return np.concatenate([fine, np.arange(11.0, top + 1.0)])


def _check_grid(b_grid: ArrayLike) -> NDArray:
    grid = np.asarray(b_grid, dtype=float).ravel()
    if grid.size == 0:
        raise DomainError("the b grid is empty")
    if not np.all(np.isfinite(grid)) or np.any(grid <= 0):
        raise DomainError("grid values of b must be finite and positive")
    return np.unique(grid)


def _fit_one(y, design, spec_template, cfg, b):
    try:
        return fit(y, design, spec_template.with_scale(b), cfg)
    except (NumericalError, FloatingPointError, linalg.LinAlgError) as exc:
        logger.warning("fit at b=%g failed: %s", b, exc)
        return exc


def scan_scales(y: ArrayLike, design: GroupedDesign, spec_template: HyperpriorSpec,
                cfg: FitConfig | None, b_grid: ArrayLike, n_jobs: int = 1,
                keep: Sequence[float] = (), extras=None) -> tuple[list[ScaleRecord], dict[float, FitResult]]:
    """Fit at every ``b`` (ascending, duplicates removed) and summarize.

    Parameters
    ----------
    keep : sequence of float
        Grid values whose full :class:`FitResult` should be returned.
    extras : callable, optional
        ``FitResult -> dict`` of extra per-fit scalars, see :func:`summarize_fit`.
    n_jobs : int
        Thread count for the fan-out over the grid; results do not depend on it.

    Returns
    -------
    records, kept_fits
    """
    if not spec_template.is_inverse_gamma:
        raise DomainError("scale selection needs the inverse-gamma hyperprior")
    y = np.asarray(y, dtype=float)
    grid = _check_grid(b_grid)
    keep = {float(v) for v in keep}

    def task(b):
        res = _fit_one(y, design, spec_template, cfg, b)
        if isinstance(res, Exception):
            return ScaleRecord(b=float(b), n_columns=design.n_columns, failed=True, error=str(res)), None
        try:
            rec = summarize_fit(res, design, y, b, extras)
        except NumericalError as exc:
            return ScaleRecord(b=float(b), n_columns=design.n_columns, failed=True, error=str(exc)), None
        return rec, (res if float(b) in keep else None)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            outputs = list(pool.map(task, grid))
    else:
        outputs = [task(b) for b in grid]
    records = [rec for rec, _ in outputs]
    kept = {rec.b: res for rec, res in outputs if res is not None}
    return records, kept


def choose_scale(records: Sequence[ScaleRecord], criterion: Criterion) -> tuple[int, NDArray]:
    """Index of the minimizing record and all criterion values.

    Records must be in ascending ``b``; the first minimum wins, so ties go to
    the smallest ``b``.
    """
    values = np.array([criterion_value(r, criterion) for r in records])
    finite = np.isfinite(values)
    if not finite.any():
        raise NumericalError("no grid value produced a finite criterion")
    masked = np.where(finite, values, np.inf)
    return int(np.argmin(masked)), values


@dataclass(frozen=True)
class CriterionRecord:
    b: float
    log_lik: float
    bias: float
    df: float
    value: float
    failed: bool = False


@dataclass
class CriterionReport:
    """Per-``b`` criterion values and the selected scale."""

    criterion: Criterion
    b_grid: NDArray
    records: list[CriterionRecord]
    gamma: float | None
    selected_b: float
    selected_fit: FitResult | None

    @property
    def values(self) -> NDArray:
        return np.array([r.value for r in self.records])


def _criterion_records(records: Sequence[ScaleRecord], criterion: Criterion, values: NDArray):
    out = []
    for rec, val in zip(records, values):
        if isinstance(criterion, (EPIC, PIC)):
            bias = rec.bias(criterion.bias)
        else:
            bias = math.nan
        df_kind = criterion.df if isinstance(criterion, EPIC) else DfKind.HAT_TRACE
        out.append(CriterionRecord(rec.b, rec.log_lik, bias, rec.df(df_kind), float(val), rec.failed))
    return out


def report_from_records(records: Sequence[ScaleRecord], criterion: Criterion,
                        fits: dict[float, FitResult] | None = None) -> CriterionReport:
    idx, values = choose_scale(records, criterion)
    selected = records[idx].b
    return CriterionReport(
        criterion=criterion,
        b_grid=np.array([r.b for r in records]),
        records=_criterion_records(records, criterion, values),
        gamma=criterion_gamma(criterion),
        selected_b=selected,
        selected_fit=(fits or {}).get(selected),
    )


def select_scale(y: ArrayLike, design: GroupedDesign, spec_template: HyperpriorSpec,
                 cfg: FitConfig | None, b_grid: ArrayLike, criterion: Criterion,
                 n_jobs: int = 1) -> CriterionReport:
    """Fit over the grid and return the criterion-minimizing scale.

    The selected fit is recomputed once at the winning ``b`` (fits are
    deterministic), so memory stays independent of the grid size.
    """
    records, _ = scan_scales(y, design, spec_template, cfg, b_grid, n_jobs=n_jobs)
    report = report_from_records(records, criterion)
    report.selected_fit = fit(np.asarray(y, dtype=float), design,
                              spec_template.with_scale(report.selected_b), cfg)
    return report
