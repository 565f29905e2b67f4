"""
Log-scale special functions used by the inverse-gamma hyperprior model.

Everything here works in log space. The modified Bessel function of the
second kind overflows quickly for large order or small argument, and the
hyperprior scale ranges far enough (``b`` up to 65, precisions up to 1e4) that
linear-space evaluation is not an option.

The generalized inverse Gaussian density is parametrized as

.. math::
    f(\\alpha | p, a, b) = \\frac{(a/b)^{p/2}}{2 K_p(\\sqrt{ab})}
    \\alpha^{p-1} \\exp\\left(-\\frac{a\\alpha + b/\\alpha}{2}\\right)
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import gammaln, kve

from .exceptions import DomainError, NumericalError

Real = Union[float, NDArray[np.float64]]

LOG_2PI = float(np.log(2.0 * np.pi))


def _as_out(arr: NDArray, scalar: bool) -> Real:
    return float(arr) if scalar else arr


def _check_bessel_args(order, x):
    order = np.asarray(order, dtype=float)
    x = np.asarray(x, dtype=float)
    if not (np.all(np.isfinite(order)) and np.all(np.isfinite(x))):
        raise DomainError("Bessel K requires finite order and argument")
    if np.any(x <= 0):
        raise DomainError("Bessel K requires a strictly positive argument")
    return order, x


def _log_k_upward(nu: NDArray, x: NDArray) -> NDArray:
    """log K_nu(x) by upward recurrence on the ratio K_{v+1}/K_v.

    Used only where ``kve`` overflows (large order, tiny argument). The
    recurrence starts from the fractional part of ``nu`` whose two seed
    values are always representable for x >= 1e-300.
    """
    n_steps = np.floor(nu).astype(int)
    mu = nu - n_steps
    k0 = kve(mu, x)
    k1 = kve(mu + 1.0, x)
    out = np.log(k0) - x
    ratio = k1 / k0
    for step in range(int(n_steps.max(initial=0))):
        live = step < n_steps
        out = np.where(live, out + np.log(ratio), out)
        # K_{v+1}/K_v = K_{v-1}/K_v + 2v/x with v = mu + step + 1
        ratio = np.where(live, 1.0 / ratio + 2.0 * (mu + step + 1.0) / x, ratio)
    return out


def log_bessel_k(order: ArrayLike, x: ArrayLike) -> Real:
    """Natural log of the modified Bessel function of the second kind.

    Parameters
    ----------
    order : float or ndarray
        Real order ``nu``; ``K_{-nu} = K_nu`` so only ``|nu|`` matters.
    x : float or ndarray
        Strictly positive argument.

    Returns
    -------
    float or ndarray
        ``ln K_{|nu|}(x)``, broadcast over the inputs.

    Raises
    ------
    DomainError
        If ``x <= 0`` or any input is not finite.
    """
    scalar = np.ndim(order) == 0 and np.ndim(x) == 0
    order, x = _check_bessel_args(order, x)
    order, x = np.broadcast_arrays(order, x)
    return _as_out(_log_kve(order, x) - x, scalar)


def _log_kve(order: NDArray, x: NDArray) -> NDArray:
    """``ln K_nu(x) + x`` for validated, broadcast inputs.

    Keeping the ``+ x`` scaling matters for differences in the order at
    large ``x``, where ``ln K`` itself is dominated by ``-x``.
    """
    nu = np.abs(order)
    # kve returns nan for subnormal orders; K is even in the order so 0 is exact
    nu = np.where(nu < np.finfo(float).tiny, 0.0, nu)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        out = np.log(kve(nu, x))
    bad = ~np.isfinite(out)
    if np.any(bad):
        with np.errstate(over="ignore", divide="ignore"):
            out = np.array(out, dtype=float)
            out[bad] = _log_k_upward(nu[bad], x[bad]) + x[bad]
    if not np.all(np.isfinite(out)):
        raise NumericalError("log Bessel K evaluation failed")
    return out


def dlog_bessel_k_dorder(order: ArrayLike, x: ArrayLike) -> Real:
    """Derivative of ``ln K_nu(x)`` with respect to the order.

    Central differences at steps ``h, h/2, h/4`` with
    ``h = 1e-4 * max(1, |nu|)``, combined by two rounds of Richardson
    extrapolation (truncation error O(h^6)). The differences are taken on
    the exponentially scaled ``ln K_nu(x) + x`` so that rounding in the
    ``-x`` term does not swamp small derivatives at large ``x``.
    """
    scalar = np.ndim(order) == 0 and np.ndim(x) == 0
    order, x = _check_bessel_args(order, x)
    order, x = np.broadcast_arrays(order, x)
    h = 1e-4 * np.maximum(1.0, np.abs(order))

    def central(step):
        return (_log_kve(order + step, x) - _log_kve(order - step, x)) / (2.0 * step)

    d1, d2, d4 = central(h), central(h / 2.0), central(h / 4.0)
    r1 = (4.0 * d2 - d1) / 3.0
    r2 = (4.0 * d4 - d2) / 3.0
    out = (16.0 * r2 - r1) / 15.0
    return _as_out(np.asarray(out, dtype=float), scalar)


@dataclass(frozen=True)
class GigParams:
    """Parameters ``(p, a, b)`` of a generalized inverse Gaussian density.

    Fields may be scalars or equally shaped arrays (one entry per weight).
    """

    p: Real
    a: Real
    b: Real

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise DomainError("GIG parameters must be finite")
        if np.any(a <= 0) or np.any(b <= 0):
            raise DomainError("GIG parameters a and b must be strictly positive")


def gig_moments(params: GigParams) -> tuple[Real, Real, Real]:
    """Return ``(E[alpha], E[1/alpha], E[ln alpha])`` under a GIG density.

    ``E[1/alpha]`` is evaluated as ``sqrt(a/b) K_{p-1}/K_p``. This equals
    ``sqrt(a/b) K_{p+1}/K_p - 2p/b`` by the Bessel recurrence but avoids
    the cancellation that form suffers when ``sqrt(ab)`` is small.
    """
    p = np.asarray(params.p, dtype=float)
    a = np.asarray(params.a, dtype=float)
    b = np.asarray(params.b, dtype=float)
    scalar = p.ndim == 0 and a.ndim == 0 and b.ndim == 0
    p, a, b = np.broadcast_arrays(p, a, b)
    z = np.sqrt(a * b)
    try:
        log_kp = log_bessel_k(p, z)
        log_up = log_bessel_k(p + 1.0, z)
        log_down = log_bessel_k(p - 1.0, z)
        dlog = dlog_bessel_k_dorder(p, z)
    except DomainError as exc:
        raise NumericalError(f"Bessel evaluation failed: {exc}") from exc
    half_log_ratio = 0.5 * (np.log(b) - np.log(a))
    mean_alpha = np.exp(half_log_ratio + log_up - log_kp)
    mean_inv_alpha = np.exp(-half_log_ratio + log_down - log_kp)
    mean_log_alpha = half_log_ratio + dlog
    return (
        _as_out(np.asarray(mean_alpha), scalar),
        _as_out(np.asarray(mean_inv_alpha), scalar),
        _as_out(np.asarray(mean_log_alpha), scalar),
    )


def gig_log_normalizer(params: GigParams) -> Real:
    """Log of the GIG normalizing constant ``(a/b)^{p/2} / (2 K_p(sqrt(ab)))``."""
    p = np.asarray(params.p, dtype=float)
    a = np.asarray(params.a, dtype=float)
    b = np.asarray(params.b, dtype=float)
    scalar = p.ndim == 0 and a.ndim == 0 and b.ndim == 0
    out = 0.5 * p * (np.log(a) - np.log(b)) - np.log(2.0) - log_bessel_k(p, np.sqrt(a * b))
    return _as_out(np.asarray(out, dtype=float), scalar)


def gig_logpdf(alpha: ArrayLike, params: GigParams) -> Real:
    alpha = np.asarray(alpha, dtype=float)
    p = np.asarray(params.p, dtype=float)
    a = np.asarray(params.a, dtype=float)
    b = np.asarray(params.b, dtype=float)
    out = gig_log_normalizer(params) + (p - 1.0) * np.log(alpha) - 0.5 * (a * alpha + b / alpha)
    return _as_out(np.asarray(out, dtype=float), np.ndim(out) == 0)


def _check_shape_scale(shape_a, scale_b):
    if not (np.isfinite(shape_a) and np.isfinite(scale_b)) or shape_a <= 0 or scale_b <= 0:
        raise DomainError("shape and scale/rate parameters must be finite and positive")


def variance_gamma_logpdf(w: ArrayLike, shape_a: float, scale_b: float) -> Real:
    """Log marginal density of a weight under an inverse-gamma precision prior.

    Integrating ``N(w | 0, 1/alpha)`` against ``InvGamma(alpha | a, b)`` gives

    .. math::
        p(w) = \\frac{2 b^a}{\\sqrt{2\\pi}\\Gamma(a)}
        \\left(\\frac{w^2}{2b}\\right)^{-\\nu/2} K_\\nu(\\sqrt{2 b w^2}),
        \\quad \\nu = 1/2 - a.

    At ``w = 0`` the density is ``+inf`` when ``a <= 1/2`` and finite
    otherwise; that case is returned as a value, not raised.
    """
    _check_shape_scale(shape_a, scale_b)
    w = np.asarray(w, dtype=float)
    scalar = w.ndim == 0
    w = np.atleast_1d(np.abs(w))
    nu = 0.5 - shape_a
    const = np.log(2.0) + shape_a * np.log(scale_b) - 0.5 * LOG_2PI - gammaln(shape_a)
    out = np.empty_like(w)
    zero = w == 0.0
    if np.any(zero):
        if shape_a <= 0.5:
            out[zero] = np.inf
        else:
            out[zero] = (gammaln(shape_a - 0.5) + 0.5 * np.log(scale_b)
                         - 0.5 * LOG_2PI - gammaln(shape_a))
    nz = ~zero
    if np.any(nz):
        wz = w[nz]
        z = np.sqrt(2.0 * scale_b) * wz
        out[nz] = const - 0.5 * nu * (2.0 * np.log(wz) - np.log(2.0 * scale_b)) + log_bessel_k(nu, z)
    return _as_out(out[0] if scalar else out, scalar)


def student_marginal_logpdf(w: ArrayLike, shape_a: float, rate_b: float) -> Real:
    """Log marginal density of a weight under a gamma precision prior.

    A scaled Student-t with ``2a`` degrees of freedom:
    ``Gamma(a + 1/2) b^a / (sqrt(2 pi) Gamma(a)) (b + w^2/2)^{-(a + 1/2)}``.
    """
    _check_shape_scale(shape_a, rate_b)
    w = np.asarray(w, dtype=float)
    out = (gammaln(shape_a + 0.5) + shape_a * np.log(rate_b) - 0.5 * LOG_2PI - gammaln(shape_a)
           - (shape_a + 0.5) * np.log(rate_b + 0.5 * w * w))
    return _as_out(np.asarray(out, dtype=float), w.ndim == 0)


def log_binomial_real(total: int, df: float) -> float:
    """``ln C(total, df)`` with the binomial coefficient extended to real ``df``."""
    if not np.isfinite(df) or df < 0 or df > total:
        raise DomainError(f"df={df} outside [0, {total}]")
    return float(gammaln(total + 1.0) - gammaln(df + 1.0) - gammaln(total - df + 1.0))
