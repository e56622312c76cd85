"""EM over the latent spanning-tree layer and the two-stage network pipeline."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .pln import PlnConfig, conditional_moments, fit_pln
from .tree_algebra import (
    edge_probabilities_from_log,
    log_meila_matrix_from_log,
    log_tree_weight_sum_from_log,
)

logger = logging.getLogger(__name__)

__all__ = [
    "PsiMatrix",
    "TreeEmConfig",
    "TreeEmState",
    "InferredNetwork",
    "NetworkConfig",
    "TreeEmError",
    "StageError",
    "psi_matrix",
    "expected_loglik",
    "marginal_loglik",
    "fit_tree_em",
    "threshold_network",
    "infer_network",
]


class TreeEmError(RuntimeError):
    pass


class StageError(RuntimeError):
    """Pipeline failure tagged with the stage that raised it."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PsiMatrix:
    log_psi: np.ndarray
    n_samples: int


@dataclass
class TreeEmConfig:
    max_iter: int = 100
    tol: float = 1e-4
    beta_min: float = 1e-12
    objective_slack: float = 1e-8


@dataclass
class TreeEmState:
    beta: np.ndarray
    p_mat: np.ndarray
    objective_trace: list = field(default_factory=list)
    loglik_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    p_trace: list = field(default_factory=list)


@dataclass
class InferredNetwork:
    adjacency: np.ndarray
    scores: np.ndarray
    threshold: float

    @property
    def n_edges(self):
        return int(np.triu(self.adjacency, 1).sum())


@dataclass
class NetworkConfig:
    """Settings for :func:`infer_network`; ``threshold=None`` means ``2/p``."""

    pln: PlnConfig = field(default_factory=PlnConfig)
    tree: TreeEmConfig = field(default_factory=TreeEmConfig)
    threshold: float | None = None
    rho_clamp: float = 1e-6


def psi_matrix(moments, n):
    """``log psi[j, k] = -(n / 2) log(1 - rho[j, k]^2)`` with a zero diagonal."""
    if n < 2:
        raise ValueError("need n >= 2 samples")
    rho = np.asarray(moments.rho_hat if hasattr(moments, "rho_hat") else moments, dtype=float)
    off = ~np.eye(rho.shape[0], dtype=bool)
    if np.any(np.abs(rho[off]) >= 1.0):
        raise TreeEmError("internal error: |rho| reached 1 after clamping")
    log_psi = np.zeros_like(rho)
    log_psi[off] = -0.5 * n * np.log1p(-rho[off] ** 2)
    log_psi = 0.5 * (log_psi + log_psi.T)
    return PsiMatrix(log_psi=log_psi, n_samples=int(n))


def _log_psi(psi):
    return psi.log_psi if isinstance(psi, PsiMatrix) else np.asarray(psi, dtype=float)


def expected_loglik(beta, psi, p_mat):
    """Expected complete log-likelihood of the tree layer, up to a constant.

    ``sum_{j<k} P[j, k] (log beta[j, k] + log psi[j, k]) - log B(beta)`` where
    ``B`` is the spanning-tree weight sum of ``beta``.
    """
    return _objective(_safe_log(np.asarray(beta, dtype=float)), _log_psi(psi),
                      np.asarray(p_mat, dtype=float))


def marginal_loglik(beta, psi):
    """``log sum_T prod (beta * psi) - log B(beta)``: the tree-layer
    log-likelihood with the tree summed out.  EM never decreases it."""
    return _marginal(_safe_log(np.asarray(beta, dtype=float)), _log_psi(psi))


def _objective(log_beta, log_psi, p_mat):
    iu = np.triu_indices(log_beta.shape[0], 1)
    pos = log_beta[iu] > -np.inf
    if np.any(p_mat[iu][~pos] > 0):
        raise ValueError("positive probability on an edge with zero weight")
    terms = p_mat[iu][pos] * (log_beta[iu][pos] + log_psi[iu][pos])
    return float(np.sum(terms)) - log_tree_weight_sum_from_log(log_beta)


def _marginal(log_beta, log_psi):
    mask = log_beta > -np.inf
    return (log_tree_weight_sum_from_log(log_beta + log_psi, mask)
            - log_tree_weight_sum_from_log(log_beta, mask))


def _posterior_probabilities(log_beta, log_psi):
    return edge_probabilities_from_log(log_beta + log_psi, log_beta > -np.inf)


def _gauge(log_beta):
    """Shift to zero mean over the off-diagonal entries (unit geometric mean)."""
    off = ~np.eye(log_beta.shape[0], dtype=bool)
    out = np.full(log_beta.shape, -np.inf)
    out[off] = log_beta[off] - log_beta[off].mean()
    return 0.5 * (out + out.T)


def fit_tree_em(psi, config=None, beta_init=None):
    """Estimate tree-prior weights ``beta`` by EM and return edge probabilities.

    E step: ``P = edge_probabilities(beta * psi)``.  M step:
    ``beta = P / meila_matrix(beta)``, floored at ``beta_min`` and rescaled
    to unit geometric mean.  Stops when the largest change in ``P`` falls
    below ``tol``.  Weights are carried as logarithms throughout, so ``psi``
    and ``beta`` may span any range.

    ``objective_trace[h]`` is :func:`expected_loglik` at ``beta^h`` with the
    probabilities ``P(beta^h)``.  That value equals the marginal
    log-likelihood minus the entropy of the tree posterior, so it usually
    rises but is not guaranteed to.  The two quantities EM does guarantee are
    checked at every iteration and a drop beyond ``objective_slack`` raises
    :class:`TreeEmError`: the M step must not lower ``expected_loglik`` for
    the current ``P``, and :func:`marginal_loglik` (kept in
    ``loglik_trace``) must not decrease.
    """
    config = config or TreeEmConfig()
    log_psi = _log_psi(psi)
    p = log_psi.shape[0]
    off = ~np.eye(p, dtype=bool)
    if not np.all(np.isfinite(log_psi[off])):
        raise TreeEmError("log psi has non-finite entries")
    log_psi = 0.5 * (log_psi + log_psi.T)

    if beta_init is None:
        log_beta = np.where(off, 0.0, -np.inf)
    else:
        beta_init = np.asarray(beta_init, dtype=float)
        if np.any(beta_init[off] <= 0):
            raise ValueError("beta_init must be positive off the diagonal")
        log_beta = np.where(off, _safe_log(beta_init), -np.inf)
    log_beta = _gauge(log_beta)
    log_floor = math.log(config.beta_min)

    p_mat = _posterior_probabilities(log_beta, log_psi)
    trace = [_objective(log_beta, log_psi, p_mat)]
    ll_trace = [_marginal(log_beta, log_psi)]
    p_trace = [p_mat]
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        log_m = log_meila_matrix_from_log(log_beta)
        with np.errstate(divide="ignore", invalid="ignore"):
            new = np.where(off, np.log(p_mat) - log_m, -np.inf)
        if np.any(np.isnan(new)) or np.any(new == np.inf):
            raise TreeEmError(f"non-finite beta update at iteration {it}")
        log_new = _gauge(np.where(off, np.maximum(new, log_floor), -np.inf))
        m_step = _objective(log_new, log_psi, p_mat)
        if m_step < trace[-1] - config.objective_slack:
            raise TreeEmError(
                f"M step lowered the objective at iteration {it}: "
                f"{trace[-1]!r} -> {m_step!r}"
            )

        new_p = _posterior_probabilities(log_new, log_psi)
        if not np.all(np.isfinite(new_p)):
            raise TreeEmError(f"non-finite edge probabilities at iteration {it}")
        ll = _marginal(log_new, log_psi)
        if ll < ll_trace[-1] - config.objective_slack:
            raise TreeEmError(
                f"log-likelihood decreased at iteration {it}: {ll_trace[-1]!r} -> {ll!r}"
            )
        change = float(np.max(np.abs(new_p - p_mat)))
        log_beta, p_mat = log_new, new_p
        trace.append(_objective(log_beta, log_psi, p_mat))
        ll_trace.append(ll)
        p_trace.append(p_mat)
        if change < config.tol:
            converged = True
            break
    if not converged:
        logger.info("tree EM stopped at max_iter=%d", config.max_iter)
    with np.errstate(over="ignore"):
        beta = np.exp(log_beta)
    return TreeEmState(beta=beta, p_mat=p_mat, objective_trace=trace,
                       loglik_trace=ll_trace, iterations=it, converged=converged,
                       p_trace=p_trace)


def _safe_log(beta):
    out = np.full(beta.shape, -np.inf)
    pos = beta > 0
    out[pos] = np.log(beta[pos])
    return out


def threshold_network(scores, threshold=None):
    """Keep edges whose score is strictly above ``threshold`` (default ``2/p``)."""
    scores = np.asarray(scores, dtype=float)
    p = scores.shape[0]
    if threshold is None:
        threshold = 2.0 / p
    adj = (scores > threshold).astype(int)
    adj = np.maximum(adj, adj.T)
    np.fill_diagonal(adj, 0)
    return InferredNetwork(adjacency=adj, scores=scores, threshold=float(threshold))


def infer_network(y, x=None, o=None, config=None, species=None):
    """PLN fit, latent moments, ``psi``, tree EM and thresholding in sequence.

    Returns ``(pln_fit, tree_state, network)``.  Failures are re-raised as
    :class:`StageError` carrying the stage name.
    """
    config = config or NetworkConfig()
    y = np.asarray(y)
    try:
        fit = fit_pln(y, x, o, config.pln)
    except Exception as exc:
        raise StageError("pln", exc) from exc
    try:
        moments = conditional_moments(fit, config.rho_clamp, names=species)
        psi = psi_matrix(moments, y.shape[0])
    except Exception as exc:
        raise StageError("moments", exc) from exc
    try:
        state = fit_tree_em(psi, config.tree)
    except Exception as exc:
        raise StageError("tree_em", exc) from exc
    network = threshold_network(state.p_mat, config.threshold)
    return fit, state, network
