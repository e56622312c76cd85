"""Synthetic benchmark data: random graphs, graph-faithful covariances, counts."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SimulationSpec",
    "SimulatedData",
    "gen_graph",
    "graph_to_covariance",
    "gen_covariates",
    "draw_theta",
    "simulate_counts",
    "simulate_dataset",
    "COVARIATE_NAMES",
]

STRUCTURES = ("erdos", "scalefree", "cluster")
COVARIATE_NAMES = ("intercept", "continuous", "ordinal", "categorical_b", "categorical_c")


@dataclass
class SimulationSpec:
    """Parameters of one synthetic data set.

    ``density`` defaults to ``log(p) / p``.  ``ratio`` is the within/between
    block edge-probability ratio of the cluster structure (``inf`` allowed).
    """

    structure: str = "erdos"
    p: int = 20
    n: int = 100
    density: float | None = None
    ratio: float = 10.0
    n_groups: int = 3
    v: float = 0.3
    u: float = 0.1
    seed: int = 0
    covariates: bool = True
    theta_low: float = -0.5
    theta_high: float = 1.0
    intercept: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise ValueError(f"structure must be one of {STRUCTURES}, got {self.structure!r}")
        if self.p < 3:
            raise ValueError("p must be at least 3")
        if self.density is None:
            self.density = math.log(self.p) / self.p
        if not 0 < self.density < 1:
            raise ValueError(f"density must lie in (0, 1), got {self.density}")
        if self.ratio < 1:
            raise ValueError(f"ratio must be >= 1, got {self.ratio}")


@dataclass
class SimulatedData:
    counts: np.ndarray
    design: np.ndarray
    offsets: np.ndarray
    theta: np.ndarray
    sigma: np.ndarray
    adjacency: np.ndarray
    spec: SimulationSpec
    design_names: tuple = field(default=COVARIATE_NAMES)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _symmetric_from_upper(upper):
    a = np.triu(upper, 1).astype(int)
    return a + a.T


def _erdos(p, prob, rng):
    return _symmetric_from_upper(rng.random((p, p)) < prob)


def _scalefree(p, rng):
    # preferential attachment, one edge per new node, seeded with edge (0, 1)
    a = np.zeros((p, p), dtype=int)
    a[0, 1] = a[1, 0] = 1
    degree = np.zeros(p)
    degree[:2] = 1
    for t in range(2, p):
        target = rng.choice(t, p=degree[:t] / degree[:t].sum())
        a[t, target] = a[target, t] = 1
        degree[t] += 1
        degree[target] += 1
    return a


def _groups(p, n_groups):
    return np.repeat(np.arange(n_groups), [len(c) for c in np.array_split(np.arange(p), n_groups)])


def _cluster(p, density, ratio, n_groups, rng):
    labels = _groups(p, n_groups)
    same = labels[:, None] == labels[None, :]
    iu = np.triu_indices(p, 1)
    n_in = int(same[iu].sum())
    n_out = len(iu[0]) - n_in
    inv_ratio = 0.0 if math.isinf(ratio) else 1.0 / ratio
    p_in = density * len(iu[0]) / (n_in + n_out * inv_ratio)
    if p_in > 1:
        raise ValueError(
            f"density {density:.3g} with ratio {ratio} needs within-block probability {p_in:.3g} > 1"
        )
    prob = np.where(same, p_in, p_in * inv_ratio)
    return _symmetric_from_upper(rng.random((p, p)) < prob)


def gen_graph(spec, seed=None):
    """Random undirected graph as a symmetric 0/1 matrix with zero diagonal.

    * ``erdos``: each pair present independently with probability ``density``;
    * ``scalefree``: preferential attachment adding one edge per node, which
      always yields a spanning tree;
    * ``cluster``: ``n_groups`` near-equal blocks, within-block probability set
      so the expected overall density is ``density``, between-block
      probability smaller by ``ratio``.
    """
    rng = _rng(spec.seed if seed is None else seed)
    if spec.structure == "erdos":
        return _erdos(spec.p, spec.density, rng)
    if spec.structure == "scalefree":
        return _scalefree(spec.p, rng)
    return _cluster(spec.p, spec.density, spec.ratio, spec.n_groups, rng)


def graph_to_covariance(adjacency, v=0.3, u=0.1, seed=None):
    """Correlation matrix whose inverse has exactly the support of ``adjacency``.

    Off-diagonal precision entries are ``+/- v`` with a fair random sign per
    edge; the diagonal is lifted to ``|lambda_min| + u`` so the precision is
    positive definite.  The inverse is rescaled to unit diagonal.
    """
    rng = _rng(seed)
    a = np.asarray(adjacency)
    p = a.shape[0]
    if u < 1e-8:
        warnings.warn(f"diagonal boost u={u} too small, using 1e-8", RuntimeWarning, stacklevel=2)
        u = 1e-8
    signs = _symmetric_from_upper(rng.random((p, p)) < 0.5) * 2 - 1
    k = v * signs * (a != 0)
    np.fill_diagonal(k, 0.0)
    lam_min = np.linalg.eigvalsh(k)[0]
    omega = k + (abs(lam_min) + u) * np.eye(p)
    sigma = np.linalg.inv(omega)
    sd = np.sqrt(np.diag(sigma))
    sigma = sigma / np.outer(sd, sd)
    return 0.5 * (sigma + sigma.T)


def gen_covariates(n, seed=None):
    """Intercept, one N(0, 1) column, one ordinal in {1, 2, 3} and one
    three-level factor in reference coding (two indicators): ``d = 5``."""
    if n < 2:
        raise ValueError("need n >= 2")
    rng = _rng(seed)
    continuous = rng.standard_normal(n)
    ordinal = rng.integers(1, 4, size=n).astype(float)
    level = rng.integers(0, 3, size=n)
    return np.column_stack([
        np.ones(n), continuous, ordinal,
        (level == 1).astype(float), (level == 2).astype(float),
    ])


def draw_theta(d, p, seed=None, low=-0.5, high=1.0, intercept=1.0):
    rng = _rng(seed)
    theta = rng.uniform(low, high, size=(d, p))
    theta[0] = intercept
    return theta


def simulate_counts(sigma, x, theta, offsets=None, seed=None):
    """``Y_ij ~ Poisson(exp(x_i' theta_j + o_ij + Z_ij))`` with ``Z_i ~ N(0, sigma)``."""
    rng = _rng(seed)
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    p = sigma.shape[0]
    o = np.zeros((n, p)) if offsets is None else np.asarray(offsets, dtype=float)
    chol = np.linalg.cholesky(sigma)
    z = rng.standard_normal((n, p)) @ chol.T
    log_rate = x @ theta + o + z
    if np.max(log_rate) > 700:
        raise ValueError("log-rate above 700; use smaller theta or offsets")
    return rng.poisson(np.exp(log_rate))


def simulate_dataset(spec):
    """Graph, covariance, covariates, coefficients and counts for one spec.

    Each ingredient uses its own child stream of ``spec.seed``.
    """
    s_graph, s_sign, s_cov, s_theta, s_counts = np.random.SeedSequence(spec.seed).spawn(5)
    adjacency = gen_graph(spec, np.random.default_rng(s_graph))
    sigma = graph_to_covariance(adjacency, spec.v, spec.u, np.random.default_rng(s_sign))
    if spec.covariates:
        x = gen_covariates(spec.n, np.random.default_rng(s_cov))
        names = COVARIATE_NAMES
    else:
        x = np.ones((spec.n, 1))
        names = COVARIATE_NAMES[:1]
    theta = draw_theta(x.shape[1], spec.p, np.random.default_rng(s_theta),
                       spec.theta_low, spec.theta_high, spec.intercept)
    offsets = np.full((spec.n, spec.p), float(spec.offset))
    y = simulate_counts(sigma, x, theta, offsets, np.random.default_rng(s_counts))
    return SimulatedData(counts=y, design=x, offsets=offsets, theta=theta,
                         sigma=sigma, adjacency=adjacency, spec=spec,
                         design_names=tuple(names))
