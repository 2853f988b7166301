"""t-SNE with perplexity scaling across data set samples."""

import numba

# the default TBB layer may be unavailable; workqueue keeps row-parallel kernels deterministic
numba.config.THREADING_LAYER = "workqueue"

__version__ = "0.1.0"


def set_threads(n: int) -> int:
    """Use ``n`` worker threads in compiled kernels (capped at numba's pool size)."""
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


from .dataset import Dataset, SamplePlan, draw_nested_samples, load_matrix, materialize_sample, save_matrix  # noqa: E402
from .affinity import Affinities, DistanceRow, build_affinities, find_bandwidth, knn_graph, row_perplexity  # noqa: E402
from .optimizer import (  # noqa: E402
    Embedding, OptimizationTrace, OptimizerConfig, bh_gradient, exact_gradient, kl_cost, pca_init, run_tsne,
)
from .scaling import MonteCarloReport, ScalingRule, mc_report, monte_carlo_perplexities, scale_perplexity  # noqa: E402
from .metrics import ConsistencyScore, knn_overlap, neighborhood_recall, silhouette  # noqa: E402
from .pipeline import (  # noqa: E402
    Budget, BudgetPlan, GridSpec, PipelinePlan, budget_plan, explore_grid, sample_based_embed,
)
