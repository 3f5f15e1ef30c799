"""Weighted neighbor-aggregation operators over the joint user+item node set.

Nodes ``0..M-1`` are users and ``M..M+N-1`` are items. Every operator is a
sparse bipartite matrix whose nonzeros sit exactly on the graph's edges; it
differs only in the raw edge weight and how that weight is normalized:

=========== =============
strategy    raw weight
=========== =============
mean        1
propensity  p_i
navip       1 / p_i
=========== =============

Random-walk normalization divides by the row's weighted degree, symmetric
normalization by the geometric mean of both endpoints' weighted degrees.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import InteractionGraph
from .propensity import PropensityTable


class Strategy(str, enum.Enum):
    MEAN = "mean"
    PROPENSITY = "propensity"
    NAVIP = "navip"


class Normalization(str, enum.Enum):
    SYMMETRIC = "symmetric"
    RANDOM_WALK = "random-walk"


DEFAULT_NORMALIZATION = {
    Strategy.MEAN: Normalization.SYMMETRIC,
    Strategy.PROPENSITY: Normalization.RANDOM_WALK,
    Strategy.NAVIP: Normalization.RANDOM_WALK,
}


class ConfigurationError(ValueError):
    pass


def parse_strategy(value) -> Strategy:
    if isinstance(value, Strategy):
        return value
    try:
        return Strategy(str(value).lower())
    except ValueError:
        raise ConfigurationError(
            f"unknown strategy {value!r}; expected one of {[s.value for s in Strategy]}"
        ) from None


def parse_normalization(value) -> Normalization:
    if isinstance(value, Normalization):
        return value
    v = str(value).lower().replace("_", "-")
    if v in ("rw", "randomwalk"):
        v = Normalization.RANDOM_WALK.value
    if v == "sym":
        v = Normalization.SYMMETRIC.value
    try:
        return Normalization(v)
    except ValueError:
        raise ConfigurationError(
            f"unknown normalization {value!r}; expected one of {[n.value for n in Normalization]}"
        ) from None


@dataclass(frozen=True, eq=False)
class AggregationOperator:
    strategy: Strategy
    normalization: Normalization
    matrix: sp.csr_matrix
    num_users: int
    num_items: int

    @property
    def dimension(self) -> int:
        return self.num_users + self.num_items

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()


def raw_item_weights(strategy: Strategy, table: PropensityTable | None, num_items: int) -> np.ndarray:
    if strategy is Strategy.MEAN:
        return np.ones(num_items)
    if table is None:
        raise ConfigurationError(f"strategy {strategy.value!r} needs a propensity table")
    if table.num_items != num_items:
        raise ConfigurationError(
            f"propensity table covers {table.num_items} items, graph has {num_items}"
        )
    p = np.asarray(table.item_propensity, dtype=np.float64)
    return p.copy() if strategy is Strategy.PROPENSITY else 1.0 / p


def build_operator(
    graph: InteractionGraph,
    table: PropensityTable | None,
    strategy,
    normalization=None,
) -> AggregationOperator:
    strategy = parse_strategy(strategy)
    normalization = (
        DEFAULT_NORMALIZATION[strategy] if normalization is None else parse_normalization(normalization)
    )
    M, N = graph.num_users, graph.num_items
    w_item = raw_item_weights(strategy, table, N)

    # every raw weight depends on the item endpoint only
    w_ui = w_item[graph.user_indices]
    user_wdeg = np.add.reduceat(w_ui, graph.user_indptr[:-1])
    item_wdeg = graph.item_degree * w_item

    users_of_ui = np.repeat(np.arange(M), graph.user_degree)
    items_of_iu = np.repeat(np.arange(N), graph.item_degree)
    w_iu = w_item[items_of_iu]

    if normalization is Normalization.RANDOM_WALK:
        top = w_ui / user_wdeg[users_of_ui]
        bottom = w_iu / item_wdeg[items_of_iu]
    else:
        top = w_ui / np.sqrt(user_wdeg[users_of_ui] * item_wdeg[graph.user_indices])
        bottom = w_iu / np.sqrt(item_wdeg[items_of_iu] * user_wdeg[graph.item_indices])

    indptr = np.concatenate([graph.user_indptr, graph.item_indptr[1:] + graph.num_edges])
    indices = np.concatenate([graph.user_indices + M, graph.item_indices])
    data = np.concatenate([top, bottom])
    matrix = sp.csr_matrix((data, indices, indptr), shape=(M + N, M + N))
    matrix.has_sorted_indices = True
    return AggregationOperator(strategy, normalization, matrix, M, N)


def propagate(op: AggregationOperator, embeddings: np.ndarray) -> np.ndarray:
    """One aggregation step: returns ``op.matrix @ embeddings``."""
    embeddings = np.asarray(embeddings)
    if embeddings.ndim != 2 or embeddings.shape[0] != op.dimension:
        raise ValueError(
            f"embedding matrix has shape {embeddings.shape}, operator expects {op.dimension} rows"
        )
    return np.asarray(op.matrix @ embeddings)
