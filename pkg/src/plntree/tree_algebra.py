"""Weighted spanning-tree algebra.

Sums over all spanning trees of a weighted complete graph are obtained from a
minor of the weighted Laplacian, and per-edge marginals from the inverse of
that minor.  Everything that can grow like a tree-weight product is returned
in log form.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
import scipy.linalg as la
from scipy.sparse.csgraph import connected_components
from scipy.special import logsumexp

__all__ = [
    "NoSpanningTreeError",
    "laplacian",
    "log_tree_weight_sum",
    "enumerate_spanning_trees",
    "meila_matrix",
    "edge_probabilities",
    "edge_probabilities_minor_ratio",
    "normalize_weights",
    "normalize_log_weights",
    "log_tree_weight_sum_from_log",
    "edge_probabilities_from_log",
    "log_meila_matrix_from_log",
]

ZERO_WEIGHT = 1e-16
MAX_ENUM_NODES = 8
# log-weight spread up to which centred weights are handled in linear float64
LINEAR_LOG_RANGE = 600.0


class NoSpanningTreeError(ValueError):
    """The positive-weight graph is disconnected, so every tree has weight 0."""


def _check_weights(w):
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"weight matrix must be square, got shape {w.shape}")
    if w.shape[0] < 3:
        raise ValueError("weight matrix needs at least 3 nodes")
    if not np.all(np.isfinite(w)):
        raise ValueError("weight matrix has non-finite entries")
    if np.any(w < 0):
        raise ValueError("weight matrix has negative entries")
    if not np.allclose(w, w.T, rtol=1e-12, atol=0.0):
        raise ValueError("weight matrix is not symmetric")
    w = 0.5 * (w + w.T)
    np.fill_diagonal(w, 0.0)
    return w


def _check_connected(w):
    n_comp, _ = connected_components(w > 0, directed=False)
    if n_comp > 1:
        raise NoSpanningTreeError(
            f"positive-weight graph has {n_comp} connected components; "
            "no spanning tree has nonzero weight"
        )


def laplacian(w):
    """Weighted Laplacian ``Q`` with ``Q[j, k] = -w[j, k]`` and zero row sums."""
    w = _check_weights(w)
    q = -w
    np.fill_diagonal(q, w.sum(axis=1))
    return q


def _eliminate(w, excess):
    """Subtraction-free LDL' of grounded Laplacian minors, batched.

    ``w`` is ``(b, m, m)`` (symmetric, zero diagonal) and ``excess`` is
    ``(b, m)``: the conductance of each kept node to the removed one.  The
    minor is ``diag(w.sum(-1) + excess) - w``.  Nodes are eliminated in index
    order; each pivot is a sum of positive terms and each Schur-complement
    update only adds, so pivots and multipliers carry full relative accuracy
    whatever the spread of the weights.

    Returns ``(pivots, mult)`` with ``mult[:, i, k] = w'_ik / pivot_k`` for
    ``i > k`` (the unit lower factor is ``I - mult``).
    """
    w = np.array(w, dtype=float)
    e = np.array(excess, dtype=float)
    b, m, _ = w.shape
    pivots = np.empty((b, m))
    mult = np.zeros((b, m, m))
    for k in range(m):
        rest = slice(k + 1, m)
        wk = w[:, k, rest]
        d = wk.sum(axis=1) + e[:, k]
        if not np.all(d > 0) or not np.all(np.isfinite(d)):
            raise NoSpanningTreeError("Laplacian minor is not positive definite")
        pivots[:, k] = d
        f = wk / d[:, None]
        mult[:, rest, k] = f
        w[:, rest, rest] += f[:, :, None] * wk[:, None, :]
        e[:, rest] += f * e[:, k, None]
    return pivots, mult


def _ground(w, g):
    keep = np.delete(np.arange(w.shape[0]), g)
    return w[np.ix_(keep, keep)], w[keep, g]


def _log_det_minor(w):
    """``log |Q^{pp}|`` for the last node as ground."""
    _check_connected(w)
    sub, exc = _ground(w, w.shape[0] - 1)
    pivots, _ = _eliminate(sub[None], exc[None])
    return float(np.sum(np.log(pivots)))


def _unit_lower_inverse(mult):
    """Inverse of ``I - mult`` for strictly lower ``mult >= 0``; entries stay >= 0."""
    b, m, _ = mult.shape
    inv = np.zeros((b, m, m))
    idx = np.arange(m)
    inv[:, idx, idx] = 1.0
    for i in range(1, m):
        inv[:, i, :i] = np.einsum("bk,bkj->bj", mult[:, i, :i], inv[:, :i, :i])
    return inv


def _resistances(w):
    """Effective resistance between every pair of nodes.

    ``R[j, g]`` is the ``j``-th diagonal entry of the inverse Laplacian minor
    grounded at ``g``, i.e. ``sum_r (L^{-1})_{rj}^2 / pivot_r``: a sum of
    nonnegative terms.
    """
    _check_connected(w)
    p = w.shape[0]
    subs, excs = _grounded_stack(w)
    pivots, mult = _eliminate(subs, excs)
    inv = _unit_lower_inverse(mult)
    diag = np.einsum("grj,gr->gj", inv * inv, 1.0 / pivots)
    r = np.zeros((p, p))
    for g in range(p):
        r[np.delete(np.arange(p), g), g] = diag[g]
    return 0.5 * (r + r.T)


def _eliminate_log(lw, le):
    """:func:`_eliminate` carried out on logarithms (``-inf`` for zero)."""
    lw = np.array(lw, dtype=float)
    le = np.array(le, dtype=float)
    b, m, _ = lw.shape
    log_pivots = np.empty((b, m))
    log_mult = np.full((b, m, m), -np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(m):
            rest = slice(k + 1, m)
            row = lw[:, k, rest]
            ld = np.logaddexp(logsumexp(row, axis=1), le[:, k])
            if not np.all(np.isfinite(ld)):
                raise NoSpanningTreeError("Laplacian minor is not positive definite")
            log_pivots[:, k] = ld
            lf = row - ld[:, None]
            log_mult[:, rest, k] = lf
            lw[:, rest, rest] = np.logaddexp(lw[:, rest, rest], lf[:, :, None] + row[:, None, :])
            le[:, rest] = np.logaddexp(le[:, rest], lf + le[:, k, None])
    return log_pivots, log_mult


def _unit_lower_inverse_log(log_mult):
    b, m, _ = log_mult.shape
    linv = np.full((b, m, m), -np.inf)
    idx = np.arange(m)
    linv[:, idx, idx] = 0.0
    for i in range(1, m):
        terms = log_mult[:, i, :i, None] + linv[:, :i, :i]
        linv[:, i, :i] = logsumexp(terms, axis=1)
    return linv


def _grounded_stack(w):
    p = w.shape[0]
    subs = np.empty((p, p - 1, p - 1))
    excs = np.empty((p, p - 1))
    for g in range(p):
        subs[g], excs[g] = _ground(w, g)
    return subs, excs


def _log_resistances_logdomain(lw):
    p = lw.shape[0]
    subs, excs = _grounded_stack(lw)
    log_pivots, log_mult = _eliminate_log(subs, excs)
    linv = _unit_lower_inverse_log(log_mult)
    diag = logsumexp(2.0 * linv - log_pivots[:, :, None], axis=1)
    out = np.full((p, p), -np.inf)
    for g in range(p):
        out[np.delete(np.arange(p), g), g] = diag[g]
    return np.logaddexp(out, out.T) - math.log(2.0)


def _prepare_log(log_w, mask):
    """Symmetric log weights with ``-inf`` off the structural mask."""
    log_w = np.asarray(log_w, dtype=float)
    if log_w.ndim != 2 or log_w.shape[0] != log_w.shape[1] or log_w.shape[0] < 3:
        raise ValueError(f"need a square log-weight matrix with p >= 3, got {log_w.shape}")
    p = log_w.shape[0]
    off = ~np.eye(p, dtype=bool)
    if mask is None:
        mask = off & (log_w > -np.inf)
    else:
        mask = np.asarray(mask, dtype=bool) & off
        mask = mask & mask.T
    if np.any(np.isnan(log_w[mask])) or np.any(log_w[mask] == np.inf):
        raise ValueError("log weights must be finite on the mask")
    lw = np.full((p, p), -np.inf)
    lw[mask] = 0.5 * (log_w + log_w.T)[mask]
    mask = mask & (lw > -np.inf)
    if not mask.any():
        raise ValueError("weight matrix has no positive off-diagonal entry")
    _check_connected(mask.astype(float))
    return lw, mask


def _linear_ok(lw, mask):
    vals = lw[mask]
    return float(vals.max() - vals.min()) <= LINEAR_LOG_RANGE


def log_tree_weight_sum_from_log(log_w, mask=None):
    """:func:`log_tree_weight_sum` for weights given as logarithms.

    No entry on ``mask`` is treated as zero however small, and spreads
    beyond the float64 range are handled by eliminating in log space.
    """
    lw, mask = _prepare_log(log_w, mask)
    p = lw.shape[0]
    shift = float(np.mean(lw[mask]))
    if _linear_ok(lw, mask):
        w = np.where(mask, np.exp(lw - shift), 0.0)
        return _log_det_minor(w) + (p - 1) * shift
    sub, exc = _ground(lw - shift, p - 1)
    log_pivots, _ = _eliminate_log(sub[None], exc[None])
    return float(np.sum(log_pivots)) + (p - 1) * shift


def log_meila_matrix_from_log(log_w, mask=None):
    """Elementwise log of :func:`meila_matrix` from log weights (``-inf`` diagonal)."""
    lw, mask = _prepare_log(log_w, mask)
    shift = float(np.mean(lw[mask]))
    if _linear_ok(lw, mask):
        w = np.where(mask, np.exp(lw - shift), 0.0)
        with np.errstate(divide="ignore"):
            out = np.log(_resistances(w)) - shift
    else:
        out = _log_resistances_logdomain(lw - shift) - shift
    np.fill_diagonal(out, -np.inf)
    return out


def edge_probabilities_from_log(log_w, mask=None):
    """:func:`edge_probabilities` for weights given as logarithms."""
    lw, mask = _prepare_log(log_w, mask)
    log_m = log_meila_matrix_from_log(lw, mask)
    with np.errstate(invalid="ignore"):
        prob = np.where(mask, np.exp(np.minimum(lw + log_m, 0.0)), 0.0)
    return prob


def _minor_cholesky(w):
    """Cholesky factor of the Laplacian with its last row and column removed."""
    _check_connected(w)
    q = laplacian(w)[:-1, :-1]
    try:
        c = la.cholesky(q, lower=True, check_finite=False)
    except la.LinAlgError as exc:
        raise NoSpanningTreeError(
            "Laplacian minor is not positive definite"
        ) from exc
    if np.any(np.diag(c) <= 0):
        raise NoSpanningTreeError("Laplacian minor is not positive definite")
    return c


def log_tree_weight_sum(w):
    """Log of the sum over spanning trees of the product of edge weights.

    Parameters
    ----------
    w : (p, p) array_like
        Symmetric nonnegative weights with zero diagonal.

    Returns
    -------
    float
        ``log sum_T prod_{(j,k) in T} w[j, k]``, i.e. the log of the
        ``(p, p)`` Laplacian minor, summed pivot by pivot from its LDL'
        factorization after rescaling to unit geometric mean.
    """
    w, log_scale = normalize_weights(w)
    return _log_det_minor(w) + (w.shape[0] - 1) * log_scale


def _prufer_to_edges(seq, p):
    degree = [1] * p
    for v in seq:
        degree[v] += 1
    edges = []
    for v in seq:
        leaf = next(u for u in range(p) if degree[u] == 1)
        edges.append((min(leaf, v), max(leaf, v)))
        degree[leaf] -= 1
        degree[v] -= 1
    u, v = (k for k in range(p) if degree[k] == 1)
    edges.append((u, v))
    return tuple(sorted(edges))


def enumerate_spanning_trees(w):
    """List every labeled spanning tree of the complete graph on ``p`` nodes.

    Trees are generated from Prüfer sequences, so there are exactly
    ``p ** (p - 2)`` of them.  Each item is ``(edges, weight)`` where ``edges``
    is a sorted tuple of ``(j, k)`` pairs with ``j < k``.  Brute force; only
    meant as a reference for small graphs.
    """
    w = np.asarray(w, dtype=float)
    p = w.shape[0]
    if p > MAX_ENUM_NODES:
        raise ValueError(
            f"refusing to enumerate {p}**{p - 2} trees (limit p <= {MAX_ENUM_NODES})"
        )
    if p < 2:
        raise ValueError("need at least 2 nodes")
    if p == 2:
        return [(((0, 1),), float(w[0, 1]))]
    out = []
    for seq in itertools.product(range(p), repeat=p - 2):
        edges = _prufer_to_edges(seq, p)
        weight = math.prod(float(w[j, k]) for j, k in edges)
        out.append((edges, weight))
    return out


def meila_matrix(w, method="resistance"):
    """Derivative matrix of the tree-weight sum.

    Entry ``(j, k)`` equals ``d log W / d w[j, k]`` where ``W`` is the total
    spanning-tree weight.

    ``method="minor"`` evaluates the closed form on the inverse ``K`` of the
    ``(p, p)`` Laplacian minor: ``K[j, j] + K[k, k] - 2 K[j, k]``, or
    ``K[j, j]`` when ``k`` is the last node.  That difference cancels badly
    once weights spread over many orders of magnitude.  The default
    ``"resistance"`` returns the same quantity (the effective resistance
    between ``j`` and ``k``) as a diagonal entry of the minor grounded at
    ``k``, which involves no subtraction.
    """
    w = _check_weights(w)
    if method == "minor":
        return _meila_from_factor(_minor_cholesky(w))
    if method != "resistance":
        raise ValueError(f"unknown method {method!r}")
    pos = w > 0
    if not pos.any():
        raise ValueError("weight matrix is all zero")
    log_scale = float(np.mean(np.log(w[pos])))
    return _resistances(w * math.exp(-log_scale)) * math.exp(-log_scale)


def _minor_inverse(c):
    p1 = c.shape[0]
    return la.cho_solve((c, True), np.eye(p1), check_finite=False)


def _meila_from_factor(c):
    k = _minor_inverse(c)
    k = 0.5 * (k + k.T)
    p = c.shape[0] + 1
    d = np.diag(k)
    m = np.zeros((p, p))
    m[:-1, :-1] = d[:, None] + d[None, :] - 2.0 * k
    m[:-1, -1] = d
    m[-1, :-1] = d
    np.fill_diagonal(m, 0.0)
    # round-off can leave tiny negatives where the exact value is ~0
    return np.maximum(m, 0.0)


def edge_probabilities(w):
    """Probability of each edge under the tree distribution ``P(T) ∝ prod w``.

    Computed all at once as ``w * meila_matrix(w)``.  The result is symmetric
    with zero diagonal, entries in [0, 1] and upper-triangle sum ``p - 1``.
    """
    w, _ = normalize_weights(w)
    return np.clip(w * _resistances(w), 0.0, 1.0)


def edge_probabilities_minor_ratio(w):
    """Edge probabilities as ``1 - W(w without jk) / W(w)``.

    ``O(p^5)`` reference path.  Entries whose removal disconnects the
    positive-weight graph are returned as ``nan``; such edges belong to every
    spanning tree, so their probability is 1, but the ratio form cannot say so.
    """
    w, _ = normalize_weights(w)
    p = w.shape[0]
    log_total = log_tree_weight_sum(w)
    out = np.zeros((p, p))
    for j, k in itertools.combinations(range(p), 2):
        if w[j, k] == 0:
            continue
        w_minus = w.copy()
        w_minus[j, k] = w_minus[k, j] = 0.0
        try:
            val = 1.0 - math.exp(log_tree_weight_sum(w_minus) - log_total)
        except NoSpanningTreeError:
            val = math.nan
        out[j, k] = out[k, j] = val
    return out


def normalize_log_weights(log_w, mask=None):
    """Weights from log-weights, rescaled to unit geometric mean.

    ``mask`` marks the structurally present edges (default: every off-diagonal
    entry with finite log weight).  Returns ``(w, log_scale)`` with
    ``w = exp(log_w - log_scale)`` on the mask and 0 elsewhere; entries that
    fall below ``1e-16`` are set to exactly 0.
    """
    log_w = np.asarray(log_w, dtype=float)
    log_w = 0.5 * (log_w + log_w.T)
    p = log_w.shape[0]
    off = ~np.eye(p, dtype=bool)
    if mask is None:
        mask = off & np.isfinite(log_w)
    else:
        mask = np.asarray(mask, dtype=bool) & off
    if not mask.any():
        raise ValueError("weight matrix has no positive off-diagonal entry")
    log_scale = float(np.mean(log_w[mask]))
    w = np.zeros((p, p))
    w[mask] = np.exp(log_w[mask] - log_scale)
    w[w < ZERO_WEIGHT] = 0.0
    return w, log_scale


def normalize_weights(w):
    """Divide ``w`` by the geometric mean of its positive off-diagonal entries.

    Returns ``(w_normalized, log_scale)``.  Edge probabilities are unchanged by
    the rescaling; entries that end up below ``1e-16`` are zeroed.
    """
    w = _check_weights(w)
    pos = w > 0
    if not pos.any():
        raise ValueError("weight matrix is all zero")
    log_w = np.full(w.shape, -np.inf)
    log_w[pos] = np.log(w[pos])
    return normalize_log_weights(log_w, pos)
