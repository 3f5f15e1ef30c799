"""LightGCN-style embedding model: free layer-0 embeddings, K linear
propagation layers and a weighted sum over layers."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aggregation import AggregationOperator, propagate

CHECKPOINT_MAGIC = b"NAVIPCK1"


@dataclass(eq=False)
class EmbeddingModel:
    embeddings: np.ndarray
    num_users: int
    num_items: int
    depth: int = 3
    layer_coeffs: tuple = ()
    seed: int | None = None
    strategy: str | None = None
    normalization: str | None = None

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.shape[0] != self.num_users + self.num_items:
            raise ValueError(
                f"embedding table has {self.embeddings.shape[0]} rows, "
                f"expected {self.num_users + self.num_items}"
            )
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if not self.layer_coeffs:
            self.layer_coeffs = uniform_coeffs(self.depth)
        self.layer_coeffs = tuple(float(a) for a in self.layer_coeffs)
        check_coeffs(self.layer_coeffs, self.depth)

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[1])

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items


def uniform_coeffs(depth: int) -> tuple:
    return tuple([1.0 / (depth + 1)] * (depth + 1))


def check_coeffs(coeffs, depth: int) -> None:
    if len(coeffs) != depth + 1:
        raise ValueError(f"need {depth + 1} layer coefficients, got {len(coeffs)}")
    if any(a < 0 for a in coeffs):
        raise ValueError("layer coefficients must be nonnegative")
    if abs(sum(coeffs) - 1.0) > 1e-12:
        raise ValueError(f"layer coefficients sum to {sum(coeffs)!r}, not 1")


def init_embeddings(
    num_users: int,
    num_items: int,
    dim: int,
    seed: int,
    depth: int = 3,
    scale: float = 0.1,
    layer_coeffs=None,
) -> EmbeddingModel:
    """Draw a fresh layer-0 table from N(0, scale^2)."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    table = rng.normal(0.0, scale, size=(num_users + num_items, dim))
    return EmbeddingModel(
        embeddings=table,
        num_users=num_users,
        num_items=num_items,
        depth=depth,
        layer_coeffs=tuple(layer_coeffs) if layer_coeffs else (),
        seed=seed,
    )


def _check_operator(model: EmbeddingModel, op: AggregationOperator) -> None:
    if op.dimension != model.num_nodes:
        raise ValueError(f"operator dimension {op.dimension} != model nodes {model.num_nodes}")


def combine_layers(embeddings: np.ndarray, op: AggregationOperator, coeffs) -> np.ndarray:
    h = embeddings
    out = coeffs[0] * h
    for alpha in coeffs[1:]:
        h = propagate(op, h)
        out = out + alpha * h
    return out


def forward(model: EmbeddingModel, op: AggregationOperator) -> np.ndarray:
    _check_operator(model, op)
    return combine_layers(model.embeddings, op, model.layer_coeffs)


def swap_operator_inference(model: EmbeddingModel, op_eval: AggregationOperator) -> np.ndarray:
    """Run the frozen layer-0 table through a different aggregation operator."""
    return forward(model, op_eval)


def score(final: np.ndarray, user: int, item: int, num_users: int) -> float:
    return float(final[user] @ final[num_users + item])


class Propagation:
    """The fixed linear map ``sum_k alpha_k A^k`` used inside training.

    Small graphs materialize the map as a dense matrix so a batch only costs
    two GEMMs over its own rows. Larger graphs fall back to K sparse products
    forward and K transposed products backward.
    """

    def __init__(self, op: AggregationOperator, coeffs, dense_limit: int = 6000):
        self.op = op
        self.coeffs = tuple(float(a) for a in coeffs)
        self.dim = op.dimension
        self.dense = None
        self._adj_t = None
        if self.dim <= dense_limit:
            self.dense = combine_layers(np.eye(self.dim), op, self.coeffs)
        else:
            self._adj_t = op.matrix.T.tocsr()

    def full(self, embeddings: np.ndarray) -> np.ndarray:
        if self.dense is not None:
            return self.dense @ embeddings
        return combine_layers(embeddings, self.op, self.coeffs)

    def at(self, nodes: np.ndarray) -> "_RowMap":
        """Restrict the map to the output rows ``nodes`` for one batch."""
        return _RowMap(self, np.asarray(nodes))

    def rows(self, embeddings: np.ndarray, nodes: np.ndarray) -> np.ndarray:
        return self.at(nodes).rows(embeddings)

    def backward(self, nodes: np.ndarray, grad_rows: np.ndarray) -> np.ndarray:
        return self.at(nodes).backward(grad_rows)


class _RowMap:
    def __init__(self, prop: Propagation, nodes: np.ndarray):
        self.prop = prop
        self.nodes = nodes
        self.block = prop.dense[nodes] if prop.dense is not None else None

    def rows(self, embeddings: np.ndarray) -> np.ndarray:
        if self.block is not None:
            return self.block @ embeddings
        p = self.prop
        return combine_layers(embeddings, p.op, p.coeffs)[self.nodes]

    def backward(self, grad_rows: np.ndarray) -> np.ndarray:
        """Pull a gradient on the selected final rows back to the layer-0 table."""
        if self.block is not None:
            return self.block.T @ grad_rows
        p = self.prop
        g = np.zeros((p.dim, grad_rows.shape[1]))
        g[self.nodes] = grad_rows
        acc = p.coeffs[-1] * g
        for alpha in reversed(p.coeffs[:-1]):
            acc = p._adj_t @ acc + alpha * g
        return acc


def save_checkpoint(model: EmbeddingModel, path) -> None:
    """Header JSON (length-prefixed) followed by the raw little-endian float64 table."""
    header = {
        "num_users": model.num_users,
        "num_items": model.num_items,
        "dim": model.dim,
        "depth": model.depth,
        "layer_coeffs": list(model.layer_coeffs),
        "strategy": model.strategy,
        "normalization": model.normalization,
        "seed": model.seed,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    body = np.ascontiguousarray(model.embeddings, dtype="<f8").tobytes(order="C")
    with open(Path(path), "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(body)


def load_checkpoint(path) -> EmbeddingModel:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + n])
    rows = header["num_users"] + header["num_items"]
    body = raw[12 + n:]
    if len(body) != rows * header["dim"] * 8:
        raise ValueError(f"{path}: truncated embedding table")
    table = np.frombuffer(body, dtype="<f8").reshape(rows, header["dim"]).astype(np.float64)
    return EmbeddingModel(
        embeddings=table,
        num_users=header["num_users"],
        num_items=header["num_items"],
        depth=header["depth"],
        layer_coeffs=tuple(header["layer_coeffs"]),
        seed=header["seed"],
        strategy=header["strategy"],
        normalization=header["normalization"],
    )
