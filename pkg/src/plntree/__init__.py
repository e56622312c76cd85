"""Species interaction networks from count data by averaging over spanning trees.

The pipeline fits a Poisson log-normal model, turns its latent correlations
into per-edge evidence, and runs EM over a spanning-tree prior to score every
species pair.
"""

__version__ = "0.1.0"

from .emtree import (  # noqa: E402
    InferredNetwork,
    NetworkConfig,
    PsiMatrix,
    StageError,
    TreeEmConfig,
    TreeEmError,
    TreeEmState,
    expected_loglik,
    fit_tree_em,
    infer_network,
    marginal_loglik,
    psi_matrix,
    threshold_network,
)
from .evaluate import EvalReport, auc, betweenness, density_ratio, evaluate_network, fdr  # noqa: E402
from .pln import MomentEstimates, PlnConfig, PlnFit, conditional_moments, elbo, fit_pln  # noqa: E402
from .resample import (  # noqa: E402
    ResampleConfig,
    SelectionFrequencies,
    stability_selection,
    threshold_curve,
    threshold_frequencies,
)
from .simulate import SimulationSpec, simulate_dataset  # noqa: E402
from .tree_algebra import (  # noqa: E402
    NoSpanningTreeError,
    edge_probabilities,
    log_tree_weight_sum,
    meila_matrix,
)

__all__ = [
    "__version__",
    "InferredNetwork",
    "NetworkConfig",
    "PsiMatrix",
    "StageError",
    "TreeEmConfig",
    "TreeEmError",
    "TreeEmState",
    "expected_loglik",
    "fit_tree_em",
    "infer_network",
    "marginal_loglik",
    "psi_matrix",
    "threshold_network",
    "ResampleConfig",
    "SelectionFrequencies",
    "stability_selection",
    "threshold_curve",
    "threshold_frequencies",
    "NoSpanningTreeError",
    "edge_probabilities",
    "log_tree_weight_sum",
    "meila_matrix",
    "EvalReport",
    "auc",
    "betweenness",
    "density_ratio",
    "evaluate_network",
    "fdr",
    "MomentEstimates",
    "PlnConfig",
    "PlnFit",
    "conditional_moments",
    "elbo",
    "fit_pln",
    "SimulationSpec",
    "simulate_dataset",
]
