"""
Variational Bayes for the sparse kernel regression model.

Model::

    y | w, beta     ~ N(Phi w, beta^-1 I)
    w | alpha       ~ N(0, diag(alpha)^-1)
    beta            ~ Gamma(c, d)
    alpha_m         ~ Gamma(a, b)          (rate b)   or
    alpha_m         ~ InverseGamma(a, b)   (scale b)

The factorized posterior ``q(w) q(alpha) q(beta)`` is found by coordinate
ascent in the fixed order weights -> alpha -> beta -> bound. Under the
inverse-gamma hyperprior each ``q(alpha_m)`` is a generalized inverse
Gaussian.

When the design has more columns than rows (the multiple kernel case,
``P = 1 + N J``) all posterior quantities are computed through the
``N x N`` matrix ``C = beta^-1 I + Phi A^-1 Phi^T`` so an iteration costs
``O(N^2 P)`` rather than ``O(P^3)``. The full ``P x P`` covariance is only
materialized on request.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg
from scipy.special import digamma, gammaln

from .exceptions import DomainError, NumericalError
from .kernels import GroupedDesign
from .special import GigParams, gig_log_normalizer, gig_moments

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GammaPrior:
    """``Gamma(alpha | shape, rate)``."""

    shape: float = 1e-6
    rate: float = 1e-6


@dataclass(frozen=True)
class InverseGammaPrior:
    """``InvGamma(alpha | shape, scale)``; the shape stays near zero."""

    shape: float = 1e-6
    scale: float = 1.0


AlphaPrior = Union[GammaPrior, InverseGammaPrior]


@dataclass(frozen=True)
class HyperpriorSpec:
    alpha_prior: AlphaPrior = field(default_factory=GammaPrior)
    beta_shape: float = 1e-6
    beta_rate: float = 1e-6

    def __post_init__(self):
        pr = self.alpha_prior
        vals = (pr.shape, pr.rate if isinstance(pr, GammaPrior) else pr.scale,
                self.beta_shape, self.beta_rate)
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise DomainError("all hyperprior parameters must be finite and positive")

    @classmethod
    def gamma(cls, a: float = 1e-6, b: float = 1e-6, c: float = 1e-6, d: float = 1e-6):
        return cls(GammaPrior(a, b), c, d)

    @classmethod
    def inverse_gamma(cls, b: float, a: float = 1e-6, c: float = 1e-6, d: float = 1e-6):
        return cls(InverseGammaPrior(a, b), c, d)

    @property
    def is_inverse_gamma(self) -> bool:
        return isinstance(self.alpha_prior, InverseGammaPrior)

    def with_scale(self, b: float) -> "HyperpriorSpec":
        """Same spec with the inverse-gamma scale replaced by ``b``."""
        if not self.is_inverse_gamma:
            raise DomainError("only the inverse-gamma hyperprior has a free scale")
        return replace(self, alpha_prior=replace(self.alpha_prior, scale=float(b)))


@dataclass(frozen=True)
class FitConfig:
    """Operational constants of the iteration.

    ``lb_tolerance=None`` picks the default for the model at hand: 0.4 for
    the inverse-gamma hyperprior, 0.01 for the gamma hyperprior with several
    kernels and 1e-5 for the gamma hyperprior with a single kernel.
    """

    max_iters: int = 2000
    lb_tolerance: float | None = None
    freeze_threshold: float = 1e4
    init_weight_mean: float = 0.01
    init_weight_var: float | None = None
    rv_threshold: float = 0.03
    jitter: float = 0.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise DomainError("max_iters must be positive")
        for name in ("freeze_threshold", "rv_threshold"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if self.init_weight_var is not None and not self.init_weight_var > 0:
            raise DomainError("init_weight_var must be positive")
        if self.lb_tolerance is not None and not self.lb_tolerance > 0:
            raise DomainError("lb_tolerance must be positive")
        if self.jitter < 0:
            raise DomainError("jitter must be nonnegative")


def default_init_weight_var(spec: HyperpriorSpec) -> float:
    """Initial weight variance: ``0.01^2`` (gamma) or ``1`` (inverse-gamma)."""
    return 1.0 if spec.is_inverse_gamma else 1e-4


def default_lb_tolerance(spec: HyperpriorSpec, design: GroupedDesign) -> float:
    if spec.is_inverse_gamma:
        return 0.4
    return 0.01 if design.bank.n_kernels > 1 else 1e-5


@dataclass
class GammaPosterior:
    shape: NDArray
    rate: NDArray


@dataclass
class VariationalState:
    """Current variational parameters.

    ``alpha_post`` is a :class:`GammaPosterior` or a
    :class:`~sparsekern.special.GigParams` of per-weight arrays.
    ``mean_alpha`` etc. are the moments of ``q(alpha)`` used by the other
    updates; frozen entries are never refreshed.
    """

    mean_w: NDArray
    cov_diag: NDArray
    alpha_post: GammaPosterior | GigParams
    mean_alpha: NDArray
    mean_log_alpha: NDArray
    mean_inv_alpha: NDArray | None
    beta_shape: float
    beta_rate: float
    frozen: NDArray
    lower_bound_trace: list[float] = field(default_factory=list)
    # quantities of the most recent weight update
    logdet_cov: float = 0.0
    phi_cov_phi: NDArray | None = None
    alpha_used: NDArray | None = None
    beta_used: float | None = None
    _phi: NDArray | None = field(default=None, repr=False)

    @property
    def mean_beta(self) -> float:
        return self.beta_shape / self.beta_rate

    @property
    def mean_log_beta(self) -> float:
        return float(digamma(self.beta_shape) - np.log(self.beta_rate))

    @property
    def second_moment_w(self) -> NDArray:
        return self.mean_w ** 2 + self.cov_diag

    @property
    def cov_w(self) -> NDArray:
        """Full ``P x P`` posterior covariance of the weights."""
        if self._phi is None:
            raise NumericalError("weights have not been updated yet")
        return _dense_covariance(self._phi, self.alpha_used, self.beta_used)


def _cholesky(mat: NDArray, jitter: float = 0.0) -> NDArray:
    """Lower Cholesky factor, escalating a diagonal jitter on failure."""
    scale = float(np.mean(np.diag(mat)))
    extra = jitter
    for attempt in range(4):
        try:
            m = mat if extra == 0 else mat + extra * np.eye(mat.shape[0])
            return linalg.cholesky(m, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            extra = max(extra * 10.0, 1e-10 * scale * 10.0 ** attempt)
            logger.debug("cholesky failed, retrying with jitter %.3g", extra)
    raise NumericalError("matrix is not positive definite even after jitter")


def _dense_covariance(phi, alpha, beta):
    prec = beta * phi.T @ phi
    prec[np.diag_indices_from(prec)] += alpha
    chol = _cholesky(prec)
    inv_chol = linalg.solve_triangular(chol, np.eye(len(alpha)), lower=True)
    return inv_chol.T @ inv_chol


def _alpha_moments(state_like, spec: HyperpriorSpec, second_moment: NDArray):
    """Posterior parameters and moments of q(alpha) for the given E[w^2]."""
    pr = spec.alpha_prior
    if isinstance(pr, GammaPrior):
        shape = np.full_like(second_moment, pr.shape + 0.5)
        rate = pr.rate + 0.5 * second_moment
        post = GammaPosterior(shape, rate)
        return post, shape / rate, digamma(shape) - np.log(rate), None
    p = np.full_like(second_moment, 0.5 - pr.shape)
    post = GigParams(p, second_moment.copy(), np.full_like(second_moment, 2.0 * pr.scale))
    m_alpha, m_inv, m_log = gig_moments(post)
    return post, np.asarray(m_alpha), np.asarray(m_log), np.asarray(m_inv)


def init_state(design: GroupedDesign, spec: HyperpriorSpec, cfg: FitConfig | None = None) -> VariationalState:
    """Starting point: every weight mean at ``cfg.init_weight_mean``.

    The weight covariance starts at ``init_weight_var * I`` and ``q(alpha)``
    is set from one moment update at that point. ``q(beta)`` starts at its
    prior. Unless configured, the variance is ``0.01^2`` under the gamma
    hyperprior and ``1`` (the prior covariance at unit precision) under the
    inverse-gamma hyperprior.

    The inverse-gamma model needs the wider start: with ``0.01^2`` every
    initial precision is of order 1e4, and for ``b >= 1`` irrelevant and
    relevant weights alike are pruned before the data can pull any of them
    away from zero.
    """
    cfg = FitConfig() if cfg is None else cfg
    var0 = cfg.init_weight_var if cfg.init_weight_var is not None else default_init_weight_var(spec)
    n_cols = design.n_columns
    mean_w = np.full(n_cols, cfg.init_weight_mean, dtype=float)
    cov_diag = np.full(n_cols, var0, dtype=float)
    post, m_alpha, m_log, m_inv = _alpha_moments(None, spec, mean_w ** 2 + cov_diag)
    return VariationalState(
        mean_w=mean_w,
        cov_diag=cov_diag,
        alpha_post=post,
        mean_alpha=m_alpha,
        mean_log_alpha=m_log,
        mean_inv_alpha=m_inv,
        beta_shape=spec.beta_shape,
        beta_rate=spec.beta_rate,
        frozen=np.zeros(n_cols, dtype=bool),
        logdet_cov=float(n_cols * np.log(var0)),
        phi_cov_phi=var0 * (design.matrix @ design.matrix.T),
    )


def gaussian_weight_posterior(phi: NDArray, y: NDArray, alpha: NDArray, beta: float,
                              jitter: float = 0.0) -> tuple[NDArray, NDArray, NDArray, float]:
    """Posterior of ``w`` for fixed precisions ``alpha`` (per weight) and ``beta``.

    Returns ``(mean, diag(Sigma), Phi Sigma Phi^T, ln det Sigma)`` with
    ``Sigma = (diag(alpha) + beta Phi^T Phi)^-1``. Uses the ``N x N``
    Woodbury form when ``P > N``.
    """
    n, n_cols = phi.shape
    if not (np.all(np.isfinite(alpha)) and np.all(alpha > 0) and np.isfinite(beta) and beta > 0):
        raise NumericalError("precisions must be finite and positive before the weight update")

    if n_cols > n:
        d = 1.0 / alpha
        s = 1.0 / beta
        phi_d = phi * d
        c_mat = phi_d @ phi.T
        c_mat[np.diag_indices(n)] += s
        chol = _cholesky(c_mat, jitter)
        # L^-1 Phi D, one triangular solve shared by the mean and the diagonal
        v = linalg.solve_triangular(chol, phi_d, lower=True)
        z = linalg.solve_triangular(chol, y, lower=True)
        mean_w = v.T @ z
        cov_diag = d - np.einsum("ij,ij->j", v, v)
        c_inv = linalg.cho_solve((chol, True), np.eye(n))
        phi_cov_phi = s * (np.eye(n) - s * c_inv)
        logdet_c = 2.0 * np.sum(np.log(np.diag(chol)))
        logdet_cov = -np.sum(np.log(alpha)) - n * np.log(beta) - logdet_c
    else:
        prec = beta * phi.T @ phi
        prec[np.diag_indices(n_cols)] += alpha
        chol = _cholesky(prec, jitter)
        inv_chol = linalg.solve_triangular(chol, np.eye(n_cols), lower=True)
        cov = inv_chol.T @ inv_chol
        mean_w = beta * cov @ (phi.T @ y)
        cov_diag = np.diag(cov).copy()
        phi_cov_phi = phi @ cov @ phi.T
        logdet_cov = -2.0 * np.sum(np.log(np.diag(chol)))

    if np.any(cov_diag <= 0) or not np.all(np.isfinite(mean_w)):
        raise NumericalError("weight posterior lost positive definiteness")
    return mean_w, cov_diag, 0.5 * (phi_cov_phi + phi_cov_phi.T), float(logdet_cov)


def update_weights(state: VariationalState, design: GroupedDesign, y: ArrayLike,
                   jitter: float = 0.0) -> VariationalState:
    """q(w) = N(mu, Sigma) with Sigma = (E[A] + E[beta] Phi^T Phi)^-1, mu = E[beta] Sigma Phi^T y."""
    phi = design.matrix
    alpha = state.mean_alpha.copy()
    beta = state.mean_beta
    mean_w, cov_diag, phi_cov_phi, logdet_cov = gaussian_weight_posterior(
        phi, np.asarray(y, dtype=float), alpha, beta, jitter)
    state.mean_w = mean_w
    state.cov_diag = cov_diag
    state.phi_cov_phi = phi_cov_phi
    state.logdet_cov = logdet_cov
    state.alpha_used = alpha
    state.beta_used = beta
    state._phi = phi
    return state


def update_alpha(state: VariationalState, spec: HyperpriorSpec,
                 freeze_threshold: float = 1e4) -> VariationalState:
    """Refresh q(alpha) for unfrozen weights, then freeze those at the threshold."""
    live = ~state.frozen
    post, m_alpha, m_log, m_inv = _alpha_moments(state, spec, state.second_moment_w)
    old = state.alpha_post
    if isinstance(post, GammaPosterior):
        shape = np.where(live, post.shape, old.shape)
        rate = np.where(live, post.rate, old.rate)
        state.alpha_post = GammaPosterior(shape, rate)
    else:
        state.alpha_post = GigParams(np.where(live, post.p, old.p),
                                     np.where(live, post.a, old.a),
                                     np.where(live, post.b, old.b))
        state.mean_inv_alpha = np.where(live, m_inv, state.mean_inv_alpha)
    state.mean_alpha = np.where(live, m_alpha, state.mean_alpha)
    state.mean_log_alpha = np.where(live, m_log, state.mean_log_alpha)
    state.frozen = state.frozen | (state.mean_alpha >= freeze_threshold)
    return state


def update_beta(state: VariationalState, design: GroupedDesign, y: ArrayLike,
                spec: HyperpriorSpec) -> VariationalState:
    """q(beta) = Gamma(c + N/2, d + E||y - Phi w||^2 / 2)."""
    y = np.asarray(y, dtype=float)
    resid = y - design.matrix @ state.mean_w
    expected_sq = resid @ resid + np.trace(state.phi_cov_phi)
    rate = spec.beta_rate + 0.5 * expected_sq
    if not (np.isfinite(rate) and rate > 0):
        raise NumericalError("noise posterior rate is not positive")
    state.beta_shape = spec.beta_shape + 0.5 * len(y)
    state.beta_rate = float(rate)
    return state


def lower_bound_terms(state: VariationalState, design: GroupedDesign, y: ArrayLike,
                      spec: HyperpriorSpec) -> dict[str, float]:
    """The seven expectations whose sum is the evidence lower bound."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    n_cols = design.n_columns
    e_beta, e_log_beta = state.mean_beta, state.mean_log_beta
    resid = y - design.matrix @ state.mean_w
    expected_sq = resid @ resid + np.trace(state.phi_cov_phi)
    c, d = spec.beta_shape, spec.beta_rate
    ct, dt = state.beta_shape, state.beta_rate

    terms = {
        "log_lik": 0.5 * n * (e_log_beta - LOG_2PI) - 0.5 * e_beta * expected_sq,
        "log_p_w": float(np.sum(0.5 * state.mean_log_alpha - 0.5 * LOG_2PI
                                - 0.5 * state.mean_alpha * state.second_moment_w)),
        "log_p_beta": c * np.log(d) - gammaln(c) + (c - 1.0) * e_log_beta - d * e_beta,
        "entropy_w": 0.5 * n_cols * (1.0 + LOG_2PI) + 0.5 * state.logdet_cov,
        "entropy_beta": ct - np.log(dt) + gammaln(ct) + (1.0 - ct) * digamma(ct),
    }
    pr = spec.alpha_prior
    if isinstance(pr, GammaPrior):
        a, b = pr.shape, pr.rate
        post = state.alpha_post
        terms["log_p_alpha"] = float(np.sum(a * np.log(b) - gammaln(a) + (a - 1.0) * state.mean_log_alpha
                                            - b * state.mean_alpha))
        terms["entropy_alpha"] = float(np.sum(post.shape - np.log(post.rate) + gammaln(post.shape)
                                              + (1.0 - post.shape) * digamma(post.shape)))
    else:
        a, b = pr.shape, pr.scale
        post = state.alpha_post
        terms["log_p_alpha"] = float(np.sum(a * np.log(b) - (a + 1.0) * state.mean_log_alpha
                                            - b * state.mean_inv_alpha - gammaln(a)))
        log_q = (np.asarray(gig_log_normalizer(post)) + (post.p - 1.0) * state.mean_log_alpha
                 - 0.5 * (post.a * state.mean_alpha + post.b * state.mean_inv_alpha))
        terms["entropy_alpha"] = float(-np.sum(log_q))
    return {k: float(v) for k, v in terms.items()}


def lower_bound(state: VariationalState, design: GroupedDesign, y: ArrayLike,
                spec: HyperpriorSpec) -> float:
    """Evaluate the evidence lower bound and append it to the state's trace."""
    value = float(sum(lower_bound_terms(state, design, y, spec).values()))
    if not np.isfinite(value):
        raise NumericalError("lower bound is not finite")
    state.lower_bound_trace.append(value)
    return value


@dataclass
class FitResult:
    """Outcome of a fit, including the Gaussian predictive at the training inputs.

    ``hat_matrix`` maps ``y`` to ``predictive_mean``; its trace is the
    effective degrees of freedom.
    """

    state: VariationalState
    predictive_mean: NDArray
    predictive_cov: NDArray
    hat_matrix: NDArray
    hat_trace: float
    relevance_indices: NDArray
    converged: bool
    iterations: int
    mean_beta: float

    @property
    def mean_w(self) -> NDArray:
        return self.state.mean_w

    @property
    def mean_alpha(self) -> NDArray:
        return self.state.mean_alpha

    @property
    def n_relevance(self) -> int:
        return int(len(self.relevance_indices))

    @cached_property
    def predictive_cov_cholesky(self) -> NDArray:
        return _cholesky(self.predictive_cov)


def finalize(state: VariationalState, design: GroupedDesign, y: ArrayLike, cfg: FitConfig,
             converged: bool, iterations: int) -> FitResult:
    """Predictive distribution from the current state.

    A last weight update makes ``Sigma`` and ``mu`` consistent with the final
    ``E[beta]`` and ``E[A]`` so that ``H y`` equals ``Phi mu``.
    """
    y = np.asarray(y, dtype=float)
    update_weights(state, design, y, cfg.jitter)
    beta = state.beta_used
    hat = beta * state.phi_cov_phi
    pred_cov = state.phi_cov_phi.copy()
    pred_cov[np.diag_indices_from(pred_cov)] += 1.0 / beta
    rel = np.flatnonzero(np.abs(state.mean_w) > cfg.rv_threshold)
    return FitResult(
        state=state,
        predictive_mean=hat @ y,
        predictive_cov=pred_cov,
        hat_matrix=hat,
        hat_trace=float(np.trace(hat)),
        relevance_indices=rel,
        converged=converged,
        iterations=iterations,
        mean_beta=beta,
    )


def fit(y: ArrayLike, design: GroupedDesign, spec: HyperpriorSpec,
        cfg: FitConfig | None = None) -> FitResult:
    """Run the coordinate ascent until the bound changes by less than the tolerance.

    Returns a result with ``converged=False`` if ``cfg.max_iters`` is reached.
    """
    cfg = FitConfig() if cfg is None else cfg
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or len(y) != design.n_samples:
        raise DomainError("y must be a vector with one entry per design row")
    if not np.all(np.isfinite(y)):
        raise DomainError("y must be finite")
    tol = cfg.lb_tolerance if cfg.lb_tolerance is not None else default_lb_tolerance(spec, design)

    state = init_state(design, spec, cfg)
    converged = False
    it = 0
    prev = None
    for it in range(1, cfg.max_iters + 1):
        update_weights(state, design, y, cfg.jitter)
        update_alpha(state, spec, cfg.freeze_threshold)
        update_beta(state, design, y, spec)
        cur = lower_bound(state, design, y, spec)
        if prev is not None and abs(cur - prev) < tol:
            converged = True
            break
        prev = cur
    if not converged:
        logger.warning("variational fit stopped at max_iters=%d without converging", cfg.max_iters)
    return finalize(state, design, y, cfg, converged, it)
