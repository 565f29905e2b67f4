"""
Type-II maximum likelihood relevance vector machine.

The comparison baseline: the ARD precisions ``alpha`` and noise precision
``beta`` are point estimates that maximize the marginal likelihood
``N(y | 0, beta^-1 I + Phi A^-1 Phi^T)``, found with the classical
fixed-point re-estimation

    gamma_m = 1 - alpha_m Sigma_mm
    alpha_m <- gamma_m / mu_m^2
    beta    <- (N - sum_m gamma_m) / ||y - Phi mu||^2

Freezing, initialization and the relevance threshold follow the variational
fit so that the two methods differ only in how the hyperparameters are
estimated.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg

from .exceptions import DomainError, NumericalError
from .kernels import GroupedDesign
from .vb import LOG_2PI, FitConfig, FitResult, _cholesky, gaussian_weight_posterior

logger = logging.getLogger(__name__)

#: largest precision stored for a weight whose mean has collapsed to zero
ALPHA_CAP = 1e12


@dataclass
class EvidenceState:
    """Point estimates of the precisions plus the Gaussian posterior of ``w``."""

    mean_alpha: NDArray
    beta: float
    mean_w: NDArray
    cov_diag: NDArray
    frozen: NDArray
    phi_cov_phi: NDArray | None = None
    evidence_trace: list[float] = field(default_factory=list)

    @property
    def alpha(self) -> NDArray:
        return self.mean_alpha


def default_evidence_tolerance(design: GroupedDesign) -> float:
    """0.01 with several kernel widths, 0.005 with a single one."""
    return 0.01 if design.bank.n_kernels > 1 else 0.005


def log_evidence(y: ArrayLike, design: GroupedDesign, alpha: ArrayLike, beta: float) -> float:
    """``ln N(y | 0, beta^-1 I + Phi diag(alpha)^-1 Phi^T)``."""
    y = np.asarray(y, dtype=float)
    phi = design.matrix
    cov = (phi / np.asarray(alpha, dtype=float)) @ phi.T
    cov[np.diag_indices_from(cov)] += 1.0 / beta
    chol = _cholesky(cov)
    z = linalg.solve_triangular(chol, y, lower=True)
    return float(-0.5 * (len(y) * LOG_2PI + z @ z) - np.sum(np.log(np.diag(chol))))


#: initial weight variance when the config leaves it unset
EVIDENCE_INIT_WEIGHT_VAR = 1.0


def init_evidence_state(y: NDArray, design: GroupedDesign, cfg: FitConfig) -> EvidenceState:
    """``alpha_m = 1 / (mean^2 + var)`` from the initial weight moments; ``beta = 1 / var(y)``."""
    n_cols = design.n_columns
    var_y = float(np.var(y))
    beta = 1.0 / var_y if var_y > 0 else 1.0
    var0 = cfg.init_weight_var if cfg.init_weight_var is not None else EVIDENCE_INIT_WEIGHT_VAR
    second = cfg.init_weight_mean ** 2 + var0
    return EvidenceState(
        mean_alpha=np.full(n_cols, 1.0 / second),
        beta=beta,
        mean_w=np.full(n_cols, cfg.init_weight_mean),
        cov_diag=np.full(n_cols, var0),
        frozen=np.zeros(n_cols, dtype=bool),
    )


def _result(state: EvidenceState, design: GroupedDesign, y: NDArray, cfg: FitConfig,
            converged: bool, iterations: int) -> FitResult:
    mean_w, cov_diag, phi_cov_phi, _ = gaussian_weight_posterior(
        design.matrix, y, state.mean_alpha, state.beta, cfg.jitter)
    state.mean_w, state.cov_diag, state.phi_cov_phi = mean_w, cov_diag, phi_cov_phi
    hat = state.beta * phi_cov_phi
    pred_cov = phi_cov_phi.copy()
    pred_cov[np.diag_indices_from(pred_cov)] += 1.0 / state.beta
    return FitResult(
        state=state,
        predictive_mean=hat @ y,
        predictive_cov=pred_cov,
        hat_matrix=hat,
        hat_trace=float(np.trace(hat)),
        relevance_indices=np.flatnonzero(np.abs(mean_w) > cfg.rv_threshold),
        converged=converged,
        iterations=iterations,
        mean_beta=state.beta,
    )


def fit_evidence(y: ArrayLike, design: GroupedDesign, cfg: FitConfig | None = None,
                 track_evidence: bool = False) -> FitResult:
    """Fit the RVM by marginal-likelihood re-estimation.

    Parameters
    ----------
    y : array_like
        Targets, one per design row.
    design : GroupedDesign
        Design matrix; its number of kernel widths selects the default
        tolerance.
    cfg : FitConfig, optional
        ``lb_tolerance`` is reused as the tolerance on the largest change of
        ``ln alpha_m`` (unfrozen) and ``ln beta`` between two iterations.
    track_evidence : bool
        Record the log marginal likelihood after every iteration in
        ``result.state.evidence_trace`` (costs one extra factorization).

    Returns
    -------
    FitResult
        Predictive quantities use the point estimate of ``beta``.
    """
    cfg = FitConfig() if cfg is None else cfg
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or len(y) != design.n_samples:
        raise DomainError("y must be a vector with one entry per design row")
    if not np.all(np.isfinite(y)):
        raise DomainError("y must be finite")
    tol = cfg.lb_tolerance if cfg.lb_tolerance is not None else default_evidence_tolerance(design)
    n = len(y)
    phi = design.matrix

    state = init_evidence_state(y, design, cfg)
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        mean_w, cov_diag, phi_cov_phi, _ = gaussian_weight_posterior(
            phi, y, state.mean_alpha, state.beta, cfg.jitter)
        state.mean_w, state.cov_diag, state.phi_cov_phi = mean_w, cov_diag, phi_cov_phi

        well_determined = np.clip(1.0 - state.mean_alpha * cov_diag, 0.0, 1.0)
        live = ~state.frozen
        with np.errstate(divide="ignore"):
            new_alpha = np.where(live, well_determined / mean_w ** 2, state.mean_alpha)
        new_alpha = np.clip(new_alpha, 1.0 / ALPHA_CAP, ALPHA_CAP)
        resid = y - phi @ mean_w
        rss = float(resid @ resid)
        dof = n - float(np.sum(well_determined))
        if rss <= 0 or dof <= 0:
            raise NumericalError("noise precision re-estimate is not positive")
        new_beta = dof / rss

        change = max(float(np.max(np.abs(np.log(new_alpha[live]) - np.log(state.mean_alpha[live])),
                                  initial=0.0)),
                     abs(np.log(new_beta) - np.log(state.beta)))
        state.mean_alpha = new_alpha
        state.beta = new_beta
        state.frozen = state.frozen | (state.mean_alpha >= cfg.freeze_threshold)
        if track_evidence:
            state.evidence_trace.append(log_evidence(y, design, state.mean_alpha, state.beta))
        if change < tol:
            converged = True
            break
    if not converged:
        logger.warning("evidence fit stopped at max_iters=%d without converging", cfg.max_iters)
    return _result(state, design, y, cfg, converged, it)
