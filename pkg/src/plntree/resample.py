"""Stability selection: refit the network pipeline on row subsamples."""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .emtree import NetworkConfig, infer_network, threshold_network

logger = logging.getLogger(__name__)

__all__ = [
    "ResampleConfig",
    "ReplicateFailure",
    "SelectionFrequencies",
    "ResampleError",
    "stability_selection",
    "threshold_frequencies",
    "threshold_curve",
]

MAX_FAILED_SHARE = 0.2


class ResampleError(RuntimeError):
    """Too many replicates failed; ``failures`` holds the diagnostics."""

    def __init__(self, message, failures):
        super().__init__(message)
        self.failures = failures


@dataclass
class ResampleConfig:
    """Settings for :func:`stability_selection`.

    Parameters
    ----------
    s : int
        Number of subsamples.
    fraction : float
        Share of rows drawn without replacement in each subsample.
    seed : int
        Root seed; replicate ``r`` uses child stream ``r`` of it.
    freq_threshold : float
        Selection-frequency cut used by :func:`threshold_frequencies`.
    network : NetworkConfig
        Settings of each inner fit.
    n_jobs : int
        Worker threads.  Results do not depend on it.
    keep_networks : bool
        Keep each replicate's adjacency matrix.
    """

    s: int = 100
    fraction: float = 0.8
    seed: int = 0
    freq_threshold: float = 0.9
    network: NetworkConfig = field(default_factory=NetworkConfig)
    n_jobs: int = 1
    keep_networks: bool = False

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("s must be >= 1")
        if not 0 < self.fraction <= 1:
            raise ValueError(f"fraction must lie in (0, 1], got {self.fraction}")
        if not 0 <= self.freq_threshold <= 1:
            raise ValueError(f"freq_threshold must lie in [0, 1], got {self.freq_threshold}")
        if self.n_jobs < 1:
            raise ValueError("n_jobs must be >= 1")


@dataclass
class ReplicateFailure:
    index: int
    stage: str
    message: str


@dataclass
class SelectionFrequencies:
    freq: np.ndarray
    n_success: int
    n_replicates: int
    failures: list = field(default_factory=list)
    not_converged: list = field(default_factory=list)
    networks: list | None = None


def _subsample_rows(n, size, seed_seq):
    rng = np.random.default_rng(seed_seq)
    return np.sort(rng.choice(n, size=size, replace=False))


def _run_replicate(index, rows, y, x, o, cfg):
    try:
        fit, state, net = infer_network(y[rows], x[rows], o[rows], cfg.network)
    except Exception as exc:  # noqa: BLE001 - every failure is reported, not raised
        stage = getattr(exc, "stage", "unknown")
        cause = getattr(exc, "cause", exc)
        return ReplicateFailure(index, stage, f"{type(cause).__name__}: {cause}")
    return net.adjacency, bool(fit.converged and state.converged)


def stability_selection(y, x=None, o=None, cfg=None):
    """Per-edge selection frequencies over ``cfg.s`` subsamples.

    Each replicate draws ``floor(fraction * n)`` distinct rows from its own
    random stream, spawned from ``cfg.seed``, so the result is the same for
    any ``n_jobs``.  Replicates whose fit raises are excluded from the
    denominator; more than 20% of them failing raises :class:`ResampleError`.
    Replicates that hit an iteration cap without raising are kept and their
    indices listed in ``not_converged``.
    """
    cfg = cfg or ResampleConfig()
    y = np.asarray(y)
    n, p = y.shape
    x = np.ones((n, 1)) if x is None else np.asarray(x, dtype=float)
    o = np.zeros((n, p)) if o is None else np.asarray(o, dtype=float)
    size = int(math.floor(cfg.fraction * n))
    if size < max(3, x.shape[1] + 1):
        raise ValueError(
            f"subsample size {size} is too small for {x.shape[1]} covariates"
        )
    if size < p / 2:
        warnings.warn(f"subsample size {size} is below p/2 = {p / 2}", RuntimeWarning,
                      stacklevel=2)

    children = np.random.SeedSequence(cfg.seed).spawn(cfg.s)
    rows = [_subsample_rows(n, size, child) for child in children]
    jobs = range(cfg.s)
    if cfg.n_jobs == 1:
        results = [_run_replicate(r, rows[r], y, x, o, cfg) for r in jobs]
    else:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            results = list(pool.map(lambda r: _run_replicate(r, rows[r], y, x, o, cfg), jobs))

    # reduce in replicate order so the float sum is schedule independent
    counts = np.zeros((p, p))
    failures, networks, not_converged = [], [], []
    for r, res in enumerate(results):
        if isinstance(res, ReplicateFailure):
            failures.append(res)
            logger.warning("replicate %d failed in %s: %s", res.index, res.stage, res.message)
            continue
        adjacency, converged = res
        counts += adjacency
        networks.append(adjacency)
        if not converged:
            not_converged.append(r)
    if len(failures) > MAX_FAILED_SHARE * cfg.s:
        detail = "; ".join(f"#{f.index} [{f.stage}] {f.message}" for f in failures)
        raise ResampleError(
            f"{len(failures)} of {cfg.s} replicates failed: {detail}", failures
        )
    n_ok = cfg.s - len(failures)
    return SelectionFrequencies(
        freq=counts / n_ok,
        n_success=n_ok,
        n_replicates=cfg.s,
        failures=failures,
        not_converged=not_converged,
        networks=networks if cfg.keep_networks else None,
    )


def threshold_frequencies(freq, freq_threshold=0.9):
    """Network of edges selected in more than ``freq_threshold`` of replicates."""
    f = freq.freq if isinstance(freq, SelectionFrequencies) else np.asarray(freq, dtype=float)
    return threshold_network(f, freq_threshold)


def threshold_curve(freq, step=0.01):
    """Number of selected edges for each cut on a ``0, step, ..., 1`` grid.

    Returns ``(grid, counts)``; the counts never increase along the grid.
    """
    f = freq.freq if isinstance(freq, SelectionFrequencies) else np.asarray(freq, dtype=float)
    upper = f[np.triu_indices(f.shape[0], 1)]
    n_steps = int(round(1.0 / step))
    grid = np.arange(n_steps + 1) / n_steps
    counts = np.array([int(np.sum(upper > g)) for g in grid])
    return grid, counts
