"""Variational EM for the Poisson log-Normal model.

Counts follow ``Y_ij | Z_i ~ Poisson(exp(x_i' theta_j + o_ij + Z_ij))`` with
``Z_i ~ N(0, Sigma)``.  Each posterior ``p(Z_i | Y_i)`` is replaced by a
Gaussian ``N(m_i, S_i)`` and the evidence lower bound is maximized over
``theta``, ``Sigma`` and the variational parameters.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.special import gammaln

logger = logging.getLogger(__name__)

__all__ = [
    "PlnConfig",
    "PlnFit",
    "MomentEstimates",
    "RankDeficientDesignError",
    "ExponentOverflowError",
    "elbo",
    "fit_pln",
    "conditional_moments",
    "check_design",
]

MAX_EXPONENT = 700.0
SIGMA_EIG_FLOOR = 1e-8


class RankDeficientDesignError(ValueError):
    pass


class ExponentOverflowError(FloatingPointError):
    pass


@dataclass
class PlnConfig:
    """Settings for :func:`fit_pln`.

    ``covariance`` selects full per-site variational covariances (``"full"``)
    or diagonal ones (``"diagonal"``).  ``inner_iter`` caps the number of
    alternations between ``S_i`` and ``m_i`` updates per outer iteration.
    """

    tol: float = 1e-6
    max_iter: int = 200
    inner_iter: int = 5
    covariance: str = "full"
    init_var: float = 0.1
    accelerate: bool = True

    def __post_init__(self):
        if self.covariance not in ("full", "diagonal"):
            raise ValueError(f"unknown covariance family {self.covariance!r}")


@dataclass
class PlnFit:
    theta: np.ndarray  # (d, p)
    sigma: np.ndarray  # (p, p)
    vmean: np.ndarray  # (n, p)
    vcov: np.ndarray  # (n, p, p)
    elbo_trace: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    covariance: str = "full"

    @property
    def n(self):
        return self.vmean.shape[0]

    @property
    def p(self):
        return self.vmean.shape[1]


@dataclass
class MomentEstimates:
    sigma2_hat: np.ndarray  # (p,)
    rho_hat: np.ndarray  # (p, p)
    clamped: np.ndarray  # (p, p) bool, True where the clamp fired
    rho_clamp: float = 1e-6


def _as_inputs(y, x, o):
    y = np.asarray(y, dtype=float)
    if y.ndim != 2:
        raise ValueError("count matrix must be 2-D")
    n, p = y.shape
    if x is None:
        x = np.ones((n, 1))
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    o = np.zeros_like(y) if o is None else np.asarray(o, dtype=float)
    if x.shape[0] != n:
        raise ValueError(f"design has {x.shape[0]} rows, counts have {n}")
    if o.shape != y.shape:
        raise ValueError(f"offsets shape {o.shape} != counts shape {y.shape}")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x)) and np.all(np.isfinite(o))):
        raise ValueError("non-finite values in counts, design or offsets")
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise ValueError("counts must be nonnegative integers")
    return y, x, o


def check_design(x, names=None):
    """Raise :class:`RankDeficientDesignError` naming aliased columns."""
    x = np.asarray(x, dtype=float)
    d = x.shape[1]
    names = list(names) if names is not None else [f"column {j}" for j in range(d)]
    if np.linalg.matrix_rank(x) == d:
        return
    aliased = []
    kept = []
    for j in range(d):
        trial = kept + [j]
        if np.linalg.matrix_rank(x[:, trial]) == len(trial):
            kept = trial
        else:
            aliased.append(names[j])
    raise RankDeficientDesignError(
        "design matrix is rank deficient; collinear columns: " + ", ".join(aliased)
    )


def _logdet_pd(a, what):
    try:
        c = la.cholesky(a, lower=True)
    except la.LinAlgError as exc:
        raise ValueError(f"{what} is not positive definite") from exc
    return 2.0 * np.sum(np.log(np.diag(c)))


def elbo(y, x, o, fit):
    """Evidence lower bound at the parameters stored in ``fit``.

    ``sum_ij [y_ij a_ij - exp(a_ij + S_i,jj / 2) - log y_ij!]`` with
    ``a = X theta + O + M``, minus ``sum_i KL(N(m_i, S_i) || N(0, Sigma))``.
    """
    y, x, o = _as_inputs(y, x, o)
    theta = np.asarray(fit.theta, dtype=float)
    sigma = np.asarray(fit.sigma, dtype=float)
    m = np.asarray(fit.vmean, dtype=float)
    s = np.asarray(fit.vcov, dtype=float)
    n, p = y.shape
    a = x @ theta + o + m
    s_diag = np.diagonal(s, axis1=1, axis2=2)
    poisson = np.sum(y * a - np.exp(a + 0.5 * s_diag) - gammaln(y + 1.0))

    logdet_sigma = _logdet_pd(sigma, "Sigma")
    omega = la.cho_solve(la.cho_factor(sigma, lower=True), np.eye(p))
    logdet_s = np.array([_logdet_pd(s[i], f"S_{i}") for i in range(n)])
    second = s + m[:, :, None] * m[:, None, :]
    trace = np.einsum("jk,ikj->i", omega, second)
    kl = 0.5 * np.sum(logdet_sigma - logdet_s + trace - p)
    return float(poisson - kl)


def _site_terms(y, lin, m, s, omega):
    """Per-site ELBO pieces that depend on ``(m_i, S_i)`` (constants dropped)."""
    s_diag = np.diagonal(s, axis1=1, axis2=2)
    expo = lin + m + 0.5 * s_diag
    _, logdet_s = np.linalg.slogdet(s)
    quad = np.einsum("ij,jk,ik->i", m, omega, m)
    tr = np.einsum("jk,ikj->i", omega, s)
    return (np.sum(y * (lin + m) - np.exp(expo), axis=1)
            + 0.5 * logdet_s - 0.5 * tr - 0.5 * quad)


def _covariance_from_weights(omega, w, full):
    """Maximizer family ``S = (Omega + diag(w))^{-1}`` (diagonal of it if not full)."""
    n, p = w.shape
    if full:
        prec = np.broadcast_to(omega, (n, p, p)).copy()
        idx = np.arange(p)
        prec[:, idx, idx] += w
        return np.linalg.inv(prec)
    s = np.zeros((n, p, p))
    idx = np.arange(p)
    s[:, idx, idx] = 1.0 / (np.diag(omega)[None, :] + w)
    return s


def _update_vcov(lin, m, s, omega, full, n_newton=20, tol=1e-10):
    """Maximize each site's bound in ``S_i`` with ``m_i`` fixed.

    Stationarity gives ``S_i = (Omega + diag(w_i))^{-1}`` with
    ``w_ij = exp(lin_ij + m_ij + S_i,jj / 2)``; Newton on ``log w``.
    """
    c = lin + m
    s_diag = np.diagonal(s, axis1=1, axis2=2)
    u = np.minimum(c + 0.5 * s_diag, MAX_EXPONENT)
    for _ in range(n_newton):
        w = np.exp(u)
        s_new = _covariance_from_weights(omega, w, full)
        sd = np.diagonal(s_new, axis1=1, axis2=2)
        resid = u - c - 0.5 * sd
        if np.max(np.abs(resid)) < tol:
            break
        # d(diag S)/d(u_k) = -S_jk^2 w_k
        jac = 0.5 * (s_new * s_new) * w[:, None, :]
        idx = np.arange(u.shape[1])
        jac[:, idx, idx] += 1.0
        u = u - np.linalg.solve(jac, resid[:, :, None])[:, :, 0]
        u = np.minimum(u, MAX_EXPONENT)
    return _covariance_from_weights(omega, np.exp(u), full)


def _update_vmean(y, lin, m, s, omega, n_newton=20, tol=1e-8):
    """Damped Newton ascent in each ``m_i`` with ``S_i`` fixed."""
    n, p = m.shape
    s_diag = np.diagonal(s, axis1=1, axis2=2)

    def value(mm):
        expo = lin + mm + 0.5 * s_diag
        return (np.sum(y * mm - np.exp(expo), axis=1)
                - 0.5 * np.einsum("ij,jk,ik->i", mm, omega, mm))

    idx = np.arange(p)
    current = value(m)
    for _ in range(n_newton):
        e = np.exp(np.minimum(lin + m + 0.5 * s_diag, MAX_EXPONENT))
        grad = y - e - m @ omega
        hess = np.broadcast_to(omega, (n, p, p)).copy()
        hess[:, idx, idx] += e
        step = np.linalg.solve(hess, grad[:, :, None])[:, :, 0]
        if np.max(np.abs(step)) < tol:
            break
        t = np.ones(n)
        active = np.ones(n, dtype=bool)
        for _ in range(30):
            trial = m + t[:, None] * step
            with np.errstate(over="ignore"):
                val = value(trial)
            ok = val >= current - 1e-12 * np.abs(current)
            accept = active & ok
            m = np.where(accept[:, None], trial, m)
            current = np.where(accept, val, current)
            active &= ~ok
            if not active.any():
                break
            t = np.where(active, 0.5 * t, t)
    return m


def _update_theta(y, x, off, theta, n_newton=20, tol=1e-8):
    """Per-species Newton (Poisson regression with offset ``off``)."""
    def value(th):
        lin = x @ th
        return np.sum(y * lin - np.exp(off + lin), axis=0)

    current = value(theta)
    for _ in range(n_newton):
        e = np.exp(np.minimum(off + x @ theta, MAX_EXPONENT))
        grad = x.T @ (y - e)
        hess = np.einsum("ia,ij,ib->jab", x, e, x)
        step = np.linalg.solve(hess, grad.T[:, :, None])[:, :, 0].T
        if np.max(np.abs(step)) < tol:
            break
        t = np.ones(theta.shape[1])
        active = np.ones(theta.shape[1], dtype=bool)
        for _ in range(30):
            trial = theta + t[None, :] * step
            with np.errstate(over="ignore"):
                val = value(trial)
            ok = val >= current - 1e-12 * np.abs(current)
            accept = active & ok
            theta = np.where(accept[None, :], trial, theta)
            current = np.where(accept, val, current)
            active &= ~ok
            if not active.any():
                break
            t = np.where(active, 0.5 * t, t)
    return theta


def _profiled_sigma(m, s):
    n = m.shape[0]
    sigma = (m.T @ m + s.sum(axis=0)) / n
    return 0.5 * (sigma + sigma.T)


def _fast_bound(y, lin, m, s, sigma, log_fact):
    n, p = m.shape
    c = la.cholesky(sigma, lower=True)
    logdet_sigma = 2.0 * np.sum(np.log(np.diag(c)))
    omega = la.cho_solve((c, True), np.eye(p))
    site = _site_terms(y, lin, m, s, omega)
    return float(np.sum(site) - log_fact - 0.5 * n * (logdet_sigma - p))


def fit_pln(y, x=None, o=None, config=None, design_names=None):
    """Fit the Poisson log-Normal model by variational EM.

    Parameters
    ----------
    y : (n, p) array_like of nonnegative integers
    x : (n, d) array_like, optional
        Design matrix; defaults to an intercept column.
    o : (n, p) array_like, optional
        Log-scale offsets; default 0.
    config : PlnConfig, optional
    design_names : sequence of str, optional
        Column names used in rank-deficiency errors.

    Returns
    -------
    PlnFit

    Notes
    -----
    One outer iteration runs, in order: the variational step (alternating an
    exact per-site solve for ``S_i`` and damped Newton steps for ``m_i``), a
    damped Newton step per species for ``theta`` and the closed-form
    ``Sigma = (M'M + sum_i S_i) / n``.  No block can lower the bound, so the
    recorded trace is nondecreasing.
    """
    config = config or PlnConfig()
    y, x, o = _as_inputs(y, x, o)
    n, p = y.shape
    if n < 2:
        raise ValueError("need at least 2 sites")
    check_design(x, design_names)
    if np.max(np.abs(o)) > MAX_EXPONENT:
        raise ExponentOverflowError("offsets are too large in magnitude; rescale them")
    full = config.covariance == "full"
    log_fact = float(np.sum(gammaln(y + 1.0)))

    target = np.log1p(y) - o
    theta, *_ = np.linalg.lstsq(x, target, rcond=None)
    m = target - x @ theta
    s = np.broadcast_to(config.init_var * np.eye(p), (n, p, p)).copy()
    sigma = _profiled_sigma(m, s)
    lin = x @ theta + o
    if np.max(lin + m) > MAX_EXPONENT:
        raise ExponentOverflowError("initial exponent overflows; rescale offsets or covariates")

    def step(theta, m, s, sigma):
        """One outer iteration: VE step, theta step, closed-form Sigma."""
        omega = la.cho_solve(la.cho_factor(sigma, lower=True), np.eye(p))
        lin = x @ theta + o
        for _ in range(config.inner_iter):
            s = _update_vcov(lin, m, s, omega, full)
            m_new = _update_vmean(y, lin, m, s, omega)
            shift = np.max(np.abs(m_new - m))
            m = m_new
            if shift < 1e-6:
                break
        s = _update_vcov(lin, m, s, omega, full)
        s_diag = np.diagonal(s, axis1=1, axis2=2)
        theta = _update_theta(y, x, o + m + 0.5 * s_diag, theta)
        sigma = _profiled_sigma(m, s)
        value = _fast_bound(y, x @ theta + o, m, s, sigma, log_fact)
        return theta, m, s, sigma, value

    def flat(theta, m, sigma):
        return np.concatenate([theta.ravel(), m.ravel(), sigma.ravel()])

    def unflat(z):
        d = x.shape[1]
        theta = z[:d * p].reshape(d, p)
        m = z[d * p:d * p + n * p].reshape(n, p)
        sigma = z[d * p + n * p:].reshape(p, p)
        return theta, m, 0.5 * (sigma + sigma.T)

    trace = [_fast_bound(y, lin, m, s, sigma, log_fact)]
    converged = False
    it = 0
    with np.errstate(over="raise", invalid="raise"):
        for it in range(1, config.max_iter + 1):
            try:
                x0 = flat(theta, m, sigma)
                t1, m1, s1, sig1, v1 = step(theta, m, s, sigma)
                t2, m2, s2, sig2, v2 = step(t1, m1, s1, sig1)
                best = (t2, m2, s2, sig2, v2)
                # squared extrapolation of the fixed-point map, kept only if it helps
                r = flat(t1, m1, sig1) - x0
                v = flat(t2, m2, sig2) - 2.0 * flat(t1, m1, sig1) + x0
                nv = np.linalg.norm(v)
                if config.accelerate and nv > 0:
                    alpha = -np.linalg.norm(r) / nv
                    if alpha < -1.0:
                        try:
                            with np.errstate(over="ignore", invalid="ignore"):
                                ta, ma, siga = unflat(x0 - 2.0 * alpha * r + alpha ** 2 * v)
                                la.cholesky(siga, lower=True)
                                cand = step(ta, ma, s2, siga)
                            if np.isfinite(cand[4]) and cand[4] > v2:
                                best = cand
                        except (la.LinAlgError, np.linalg.LinAlgError, FloatingPointError,
                                ValueError):
                            pass
                theta, m, s, sigma, value = best
            except (FloatingPointError, la.LinAlgError, np.linalg.LinAlgError) as exc:
                raise ExponentOverflowError(
                    f"numerical failure at VEM iteration {it} ({exc}); "
                    "try rescaling offsets or covariates"
                ) from exc
            trace.append(value)
            delta = abs(trace[-1] - trace[-2]) / max(abs(trace[-1]), 1.0)
            if delta < config.tol:
                converged = True
                break
    if not converged:
        logger.warning("PLN fit stopped at max_iter=%d before convergence", config.max_iter)

    min_eig = np.linalg.eigvalsh(sigma)[0]
    if min_eig < SIGMA_EIG_FLOOR:
        raise FloatingPointError(
            f"latent covariance lost positive definiteness (min eigenvalue {min_eig:.3g})"
        )
    return PlnFit(
        theta=theta, sigma=sigma, vmean=m, vcov=s,
        elbo_trace=trace, n_iter=it, converged=converged,
        covariance=config.covariance,
    )


def conditional_moments(fit, rho_clamp=1e-6, names=None):
    """Second-moment estimates of the latent layer from a PLN fit.

    ``sigma2_hat[j] = mean_i(m_ij^2 + S_i,jj)`` and
    ``rho_hat[j, k] = mean_i(m_ij m_ik + S_i,jk) / (sigma_j sigma_k)``, the
    latter clamped to ``|rho| <= 1 - rho_clamp``.
    """
    m = np.asarray(fit.vmean, dtype=float)
    s = np.asarray(fit.vcov, dtype=float)
    n, p = m.shape
    second = (m.T @ m + s.sum(axis=0)) / n
    second = 0.5 * (second + second.T)
    sigma2 = np.diag(second).copy()
    bad = np.flatnonzero(~(sigma2 > 0))
    if bad.size:
        label = [names[j] for j in bad] if names is not None else bad.tolist()
        raise ValueError(f"degenerate species with zero latent variance: {label}")
    sd = np.sqrt(sigma2)
    rho = second / np.outer(sd, sd)
    bound = 1.0 - rho_clamp
    clamped = np.abs(rho) > bound
    np.fill_diagonal(clamped, False)
    rho = np.clip(rho, -bound, bound)
    np.fill_diagonal(rho, 1.0)
    if clamped.any():
        pairs = np.argwhere(np.triu(clamped))
        warnings.warn(
            f"correlation clamped at +/-{bound} for {len(pairs)} pair(s)",
            RuntimeWarning, stacklevel=2,
        )
    return MomentEstimates(sigma2_hat=sigma2, rho_hat=rho, clamped=clamped,
                           rho_clamp=rho_clamp)
