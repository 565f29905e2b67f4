"""Independent reference computations used as test oracles.

Nothing in here calls into ``sparsekern``; every value is computed by direct
quadrature or dense linear algebra so that tests compare two unrelated routes.
"""
import math

import numpy as np
from scipy import integrate


def quad_log_bessel_k(nu, x):
    """ln K_nu(x) from the integral  int_0^inf exp(-x cosh t) cosh(nu t) dt.

    The integrand is rescaled by its peak value so that large ``x`` and large
    ``nu`` do not under/overflow.
    """
    nu = abs(float(nu))
    x = float(x)
    t_star = math.asinh(nu / x) if nu > 0 else 0.0

    def f(t):
        return -x * math.cosh(t) + nu * t

    peak = f(t_star)
    width = 1.0 / math.sqrt(x * math.cosh(t_star))

    def g(t):
        return math.exp(f(t) - peak) * 0.5 * (1.0 + math.exp(-2.0 * nu * t))

    hi = t_star + 60.0 * width + 5.0
    pts = sorted({min(max(t_star + k * width, 0.0), hi) for k in (-20, -5, -1, 0, 1, 5, 20)})
    val, _ = integrate.quad(g, 0.0, hi, points=pts, limit=500, epsabs=0.0, epsrel=1e-13)
    return peak + math.log(val)


def quad_dlog_bessel_k(nu, x):
    """d/dnu ln K_nu(x) from  int t sinh(nu t) exp(-x cosh t) dt / K_nu(x)."""
    sign = 1.0 if nu >= 0 else -1.0
    nu = abs(float(nu))
    x = float(x)
    t_star = math.asinh(nu / x) if nu > 0 else 0.0
    peak = -x * math.cosh(t_star) + nu * t_star
    width = 1.0 / math.sqrt(x * math.cosh(t_star))
    hi = t_star + 60.0 * width + 5.0

    def num(t):
        return t * math.exp(-x * math.cosh(t) + nu * t - peak) * 0.5 * (1.0 - math.exp(-2.0 * nu * t))

    def den(t):
        return math.exp(-x * math.cosh(t) + nu * t - peak) * 0.5 * (1.0 + math.exp(-2.0 * nu * t))

    opts = dict(limit=500, epsabs=0.0, epsrel=1e-13)
    n, _ = integrate.quad(num, 0.0, hi, points=[t_star], **opts)
    d, _ = integrate.quad(den, 0.0, hi, points=[t_star], **opts)
    return sign * n / d


def quad_gig_moments(p, a, b):
    """E[alpha], E[1/alpha], E[ln alpha] by quadrature over u = ln alpha."""

    def logf(u):
        return p * u - 0.5 * (a * math.exp(u) + b * math.exp(-u))

    # mode of the log-density in u
    u0 = math.log((p + math.sqrt(p * p + a * b)) / a)
    peak = logf(u0)
    lo, hi = u0 - 60.0, u0 + 60.0
    opts = dict(limit=1000, epsabs=1e-15, epsrel=1e-12, points=[u0])

    def moment(h):
        val, _ = integrate.quad(lambda u: h(u) * math.exp(logf(u) - peak), lo, hi, **opts)
        return val

    z = moment(lambda u: 1.0)
    return (
        moment(lambda u: math.exp(u)) / z,
        moment(lambda u: math.exp(-u)) / z,
        moment(lambda u: u) / z,
    )


def mixture_density(w, a, b, hyperprior):
    """p(w) = int N(w | 0, 1/alpha) prior(alpha) d alpha, integrated over ln alpha."""
    if hyperprior == "invgamma":
        log_prior_norm = a * math.log(b) - math.lgamma(a)

        def log_prior(alpha):
            return log_prior_norm - (a + 1.0) * math.log(alpha) - b / alpha
    else:
        log_prior_norm = a * math.log(b) - math.lgamma(a)

        def log_prior(alpha):
            return log_prior_norm + (a - 1.0) * math.log(alpha) - b * alpha

    def integrand(u):
        alpha = math.exp(u)
        log_normal = 0.5 * (u - math.log(2.0 * math.pi)) - 0.5 * alpha * w * w
        return math.exp(log_normal + log_prior(alpha) + u)

    val, _ = integrate.quad(integrand, -80.0, 80.0, limit=2000, epsabs=0.0, epsrel=1e-12,
                            points=[-10.0, 0.0, 10.0])
    return val


def mvn_logpdf(y, mean, cov):
    """Dense multivariate normal log density via slogdet and solve."""
    y = np.asarray(y, dtype=float)
    r = y - np.asarray(mean, dtype=float)
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    return -0.5 * (len(y) * math.log(2.0 * math.pi) + logdet + r @ np.linalg.solve(cov, r))


def textbook_vrvm(phi, y, n_iter, a=1e-6, b=1e-6, c=1e-6, d=1e-6, w0=0.01, var0=1.0):
    """Plain dense variational RVM with gamma hyperpriors, no pruning.

    Mirrors the classical presentation: invert the full P x P precision
    each sweep, then refresh alpha and beta from the updated q(w).
    Returns (mean_w, Sigma, E[alpha], E[beta]) after ``n_iter`` sweeps.
    """
    n, p = phi.shape
    e_alpha = (a + 0.5) / (b + 0.5 * (w0 ** 2 + var0)) * np.ones(p)
    e_beta = c / d
    for _ in range(n_iter):
        sigma = np.linalg.inv(np.diag(e_alpha) + e_beta * phi.T @ phi)
        mu = e_beta * sigma @ phi.T @ y
        e_alpha = (a + 0.5) / (b + 0.5 * (mu ** 2 + np.diag(sigma)))
        resid = y - phi @ mu
        e_beta = (c + 0.5 * n) / (d + 0.5 * (resid @ resid + np.trace(phi @ sigma @ phi.T)))
    sigma = np.linalg.inv(np.diag(e_alpha) + e_beta * phi.T @ phi)
    mu = e_beta * sigma @ phi.T @ y
    return mu, sigma, e_alpha, e_beta


def dense_gic_bias(phi, y, w, alpha, beta):
    """Tr(R^-1 Q) built entry by entry from the per-observation score.

    psi_n = beta phi_n r_n - A w and d ln f_n / dw = beta phi_n r_n, so
    R = -(1/N) sum_n d psi_n / dw^T and Q = (1/N) sum_n psi_n (beta r_n phi_n)^T.
    """
    n, p = phi.shape
    a_mat = np.diag(alpha)
    r = y - phi @ w
    big_r = np.zeros((p, p))
    big_q = np.zeros((p, p))
    for i in range(n):
        f = phi[i]
        big_r += beta * np.outer(f, f) + a_mat
        psi = beta * f * r[i] - a_mat @ w
        big_q += np.outer(psi, beta * r[i] * f)
    big_r /= n
    big_q /= n
    return float(np.trace(np.linalg.solve(big_r, big_q)))
