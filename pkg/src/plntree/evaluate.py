"""Scores for inferred networks against a known truth, plus betweenness."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "EvalReport",
    "fdr",
    "density_ratio",
    "auc",
    "betweenness",
    "evaluate_network",
]


def _upper(a):
    a = np.asarray(a)
    return a[np.triu_indices(a.shape[0], 1)]


def _edges(a):
    return _upper(a) != 0


@dataclass
class EvalReport:
    fdr: float
    density_ratio: float
    auc: float
    n_true_edges: int
    n_inferred_edges: int
    empty: bool

    def to_dict(self):
        return {k: (None if isinstance(v, float) and math.isnan(v) else v)
                for k, v in asdict(self).items()}


def fdr(inferred, truth):
    """False positives over inferred edges; ``nan`` for an empty inference."""
    inf_e, true_e = _edges(inferred), _edges(truth)
    n_inf = int(inf_e.sum())
    if n_inf == 0:
        return math.nan
    return float(np.sum(inf_e & ~true_e)) / n_inf


def density_ratio(inferred, truth):
    n_true = int(_edges(truth).sum())
    if n_true == 0:
        raise ValueError("true network has no edge")
    return int(_edges(inferred).sum()) / n_true


def auc(scores, truth):
    """Probability that a true edge outscores a non-edge, ties counting 1/2."""
    s = _upper(np.asarray(scores, dtype=float))
    t = _edges(truth)
    pos, neg = s[t], s[~t]
    if len(pos) == 0 or len(neg) == 0:
        return math.nan
    # average ranks give the Mann-Whitney count with half credit for ties
    ranks = rankdata(np.concatenate([pos, neg]), method="average")
    u = ranks[:len(pos)].sum() - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


def betweenness(adjacency):
    """Unnormalized shortest-path betweenness (Brandes) of an unweighted graph.

    Each unordered pair of distinct nodes contributes once; disconnected
    pairs contribute nothing.
    """
    a = np.asarray(adjacency) != 0
    p = a.shape[0]
    nbrs = [np.flatnonzero(a[v]).tolist() for v in range(p)]
    cb = np.zeros(p)
    for s in range(p):
        stack = []
        preds = [[] for _ in range(p)]
        sigma = np.zeros(p)
        sigma[s] = 1.0
        dist = np.full(p, -1)
        dist[s] = 0
        queue = deque([s])
        while queue:
            v = queue.popleft()
            stack.append(v)
            for w in nbrs[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = np.zeros(p)
        while stack:
            w = stack.pop()
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                cb[w] += delta[w]
    # every unordered pair was counted from both ends
    return cb / 2.0


def evaluate_network(inferred, truth, scores=None):
    """FDR, density ratio and AUC in one :class:`EvalReport`."""
    n_inf = int(_edges(inferred).sum())
    return EvalReport(
        fdr=fdr(inferred, truth),
        density_ratio=density_ratio(inferred, truth),
        auc=auc(scores, truth) if scores is not None else math.nan,
        n_true_edges=int(_edges(truth).sum()),
        n_inferred_edges=n_inf,
        empty=n_inf == 0,
    )
