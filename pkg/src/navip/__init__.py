"""Debiased neighbor aggregation for LightGCN-style recommenders.

Three interchangeable aggregation operators (mean, propensity-weighted and
inverse-propensity-weighted) over a user-item bipartite graph, BPR and
IPS-BPR training, and HR/NDCG evaluation on pseudo-unbiased splits.
"""

__version__ = "0.1.0"

from .aggregation import (  # noqa: E402
    AggregationOperator,
    Normalization,
    Strategy,
    build_operator,
    propagate,
)
from .evaluation import EvalReport, evaluate, head_tail_split, tie_rank  # noqa: E402
from .graph import GraphError, InteractionGraph, build_graph, neighbors  # noqa: E402
from .model import (  # noqa: E402
    EmbeddingModel,
    forward,
    init_embeddings,
    load_checkpoint,
    save_checkpoint,
    score,
    swap_operator_inference,
)
from .propensity import PropensityTable, estimate_propensity, inverse_weight, normalizer_z  # noqa: E402
from .training import TrainConfig, bpr_loss, ips_bpr_loss, sample_batch, train  # noqa: E402
