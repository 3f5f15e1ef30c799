"""BPR / IPS-weighted BPR training of the layer-0 embedding table with Adam."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aggregation import (
    DEFAULT_NORMALIZATION,
    Normalization,
    Strategy,
    build_operator,
    parse_normalization,
    parse_strategy,
)
from .graph import InteractionGraph
from .model import EmbeddingModel, Propagation, init_embeddings
from .propensity import PropensityTable

log = logging.getLogger(__name__)

LOSS_KINDS = ("bpr", "ips-bpr")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 0.003
    l2_weight: float = 1e-4
    loss_kind: str = "bpr"
    seed: int = 0
    strategy: Strategy = Strategy.MEAN
    normalization: Normalization | None = None
    dim: int = 64
    depth: int = 3
    init_scale: float = 0.1
    layer_coeffs: tuple | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.l2_weight < 0:
            raise ValueError("l2_weight must be >= 0")
        self.loss_kind = self.loss_kind.lower().replace("_", "-")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        self.strategy = parse_strategy(self.strategy)
        self.normalization = (
            DEFAULT_NORMALIZATION[self.strategy]
            if self.normalization is None
            else parse_normalization(self.normalization)
        )


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, table: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(table), np.zeros_like(table))

    def update(self, params: np.ndarray, grad: np.ndarray, lr: float) -> None:
        """In-place bias-corrected Adam step on ``params``."""
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1.0 - b1) * grad
        self.v *= b2
        self.v += (1.0 - b2) * (grad * grad)
        # m_hat / (sqrt(v_hat) + eps) with the bias corrections folded into scalars
        denom = np.sqrt(self.v)
        denom /= math.sqrt(1.0 - b2 ** self.step)
        denom += self.eps
        step = lr / (1.0 - b1 ** self.step)
        params -= step * (self.m / denom)


def check_samplable(graph: InteractionGraph) -> None:
    full = np.flatnonzero(graph.user_degree >= graph.num_items)
    if full.size:
        raise TrainingError(
            f"users {full.tolist()} interacted with every item; no negative can be sampled"
        )


def sample_batch(graph: InteractionGraph, rng: np.random.Generator, batch_size: int) -> np.ndarray:
    """Draw (user, positive item, negative item) triples as an int array of shape (B, 3).

    Users are uniform, positives uniform over the user's items, negatives
    uniform over the rest (rejection sampled).
    """
    check_samplable(graph)
    M, N = graph.num_users, graph.num_items
    users = rng.integers(0, M, size=batch_size)
    deg = graph.user_degree[users]
    offs = np.floor(rng.random(batch_size) * deg).astype(np.int64)
    pos = graph.user_indices[graph.user_indptr[users] + offs]

    keys = graph.edge_keys
    neg = rng.integers(0, N, size=batch_size)
    todo = np.arange(batch_size)
    while todo.size:
        k = users[todo] * N + neg[todo]
        j = np.searchsorted(keys, k)
        hit = (j < keys.shape[0]) & (keys[np.minimum(j, keys.shape[0] - 1)] == k)
        todo = todo[hit]
        if todo.size:
            neg[todo] = rng.integers(0, N, size=todo.size)
    return np.column_stack([users, pos, neg]).astype(np.int64)


def _pairwise_loss(
    embeddings: np.ndarray,
    batch: np.ndarray,
    propagation: Propagation,
    num_users: int,
    l2_weight: float,
    weights: np.ndarray | None,
) -> tuple[float, np.ndarray]:
    batch = np.asarray(batch, dtype=np.int64)
    B = batch.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    node_ids = np.concatenate([batch[:, 0], batch[:, 1] + num_users, batch[:, 2] + num_users])
    nodes, inv = np.unique(node_ids, return_inverse=True)
    iu, ip, ineg = inv[:B], inv[B:2 * B], inv[2 * B:]

    rowmap = propagation.at(nodes)
    final = rowmap.rows(embeddings)
    fu, fp, fn = final[iu], final[ip], final[ineg]
    x = np.einsum("ij,ij->i", fu, fp - fn)
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)

    data = float(np.mean(w * np.logaddexp(0.0, -x)))
    base = embeddings[node_ids]
    reg = l2_weight * float(np.einsum("ij,ij->", base, base)) / (3 * B)

    # d/dx of -ln sigmoid(x) is -sigmoid(-x)
    c = -(w * np.exp(-np.logaddexp(0.0, x))) / B
    g_final = np.zeros_like(final)
    np.add.at(g_final, iu, c[:, None] * (fp - fn))
    np.add.at(g_final, ip, c[:, None] * fu)
    np.add.at(g_final, ineg, -c[:, None] * fu)

    grad = rowmap.backward(g_final)
    if l2_weight:
        g_reg = np.zeros_like(embeddings)
        np.add.at(g_reg, node_ids, base)
        grad += (2.0 * l2_weight / (3 * B)) * g_reg
    return data + reg, grad


def bpr_loss(embeddings, batch, propagation, num_users, l2_weight=1e-4):
    """Mean BPR loss over a batch plus L2 on the touched layer-0 rows.

    Returns ``(loss, gradient)`` with the gradient taken w.r.t. the layer-0
    table, pulled back through the propagation map.
    """
    return _pairwise_loss(embeddings, batch, propagation, num_users, l2_weight, None)


def ips_bpr_loss(embeddings, batch, propagation, num_users, table: PropensityTable, l2_weight=1e-4):
    """BPR with each triple's data term scaled by 1/p of its positive item."""
    batch = np.asarray(batch, dtype=np.int64)
    weights = 1.0 / np.asarray(table.item_propensity)[batch[:, 1]]
    return _pairwise_loss(embeddings, batch, propagation, num_users, l2_weight, weights)


@dataclass
class TrainResult:
    model: EmbeddingModel
    loss_trace: list = field(default_factory=list)


def train(
    graph: InteractionGraph,
    table: PropensityTable | None,
    config: TrainConfig,
    model: EmbeddingModel | None = None,
    dense_limit: int = 6000,
) -> TrainResult:
    check_samplable(graph)
    if config.loss_kind == "ips-bpr" and table is None:
        raise TrainingError("ips-bpr needs a propensity table")
    if model is None:
        model = init_embeddings(
            graph.num_users,
            graph.num_items,
            config.dim,
            seed=config.seed,
            depth=config.depth,
            scale=config.init_scale,
            layer_coeffs=config.layer_coeffs,
        )
    model.strategy = config.strategy.value
    model.normalization = config.normalization.value

    op = build_operator(graph, table, config.strategy, config.normalization)
    prop = Propagation(op, model.layer_coeffs, dense_limit=dense_limit)
    rng = np.random.default_rng([config.seed, 1])
    adam = AdamState.like(model.embeddings)
    steps = math.ceil(graph.num_edges / config.batch_size)
    table_ = model.embeddings
    trace = []

    for epoch in range(config.epochs):
        total = 0.0
        for s in range(steps):
            batch = sample_batch(graph, rng, config.batch_size)
            if config.loss_kind == "ips-bpr":
                loss, grad = ips_bpr_loss(table_, batch, prop, graph.num_users, table, config.l2_weight)
            else:
                loss, grad = bpr_loss(table_, batch, prop, graph.num_users, config.l2_weight)
            if not math.isfinite(loss):
                bad = np.flatnonzero(~np.isfinite(table_).all(axis=1))
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} step {s}; "
                    f"rows with non-finite entries: {bad[:20].tolist()}"
                )
            adam.update(table_, grad, config.learning_rate)
            total += loss
        if not np.isfinite(table_).all():
            bad = np.flatnonzero(~np.isfinite(table_).all(axis=1))
            raise TrainingError(f"non-finite embeddings after epoch {epoch}: rows {bad[:20].tolist()}")
        trace.append(total / steps)
        log.info("epoch %d loss %.6f", epoch + 1, trace[-1])
    return TrainResult(model=model, loss_trace=trace)


def write_loss_trace(trace, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss"])
        for e, v in enumerate(trace, start=1):
            w.writerow([e, repr(float(v))])
