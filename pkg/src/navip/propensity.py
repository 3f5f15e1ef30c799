"""Item propensity from relative popularity, and the inverse weights built on it."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import ITEM, USER, InteractionGraph, neighbors


@dataclass(frozen=True, eq=False)
class PropensityTable:
    item_propensity: np.ndarray
    max_popularity: int

    @property
    def num_items(self) -> int:
        return int(self.item_propensity.shape[0])

    @property
    def inverse(self) -> np.ndarray:
        return 1.0 / self.item_propensity


def propensity_from_counts(counts, floor: float | None = None) -> np.ndarray:
    """sqrt(count / max count) for each item.

    ``floor`` clips propensities from below; off by default since with the
    usual minimum-degree filter the inverse weights stay bounded.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0 or counts.min() <= 0:
        raise ValueError("every item needs a positive interaction count")
    p = np.sqrt(counts / counts.max())
    if floor is not None:
        if not 0 < floor <= 1:
            raise ValueError(f"floor must lie in (0, 1], got {floor}")
        p = np.maximum(p, floor)
    return p


def estimate_propensity(graph: InteractionGraph, floor: float | None = None) -> PropensityTable:
    p = propensity_from_counts(graph.item_degree, floor=floor)
    p.flags.writeable = False
    return PropensityTable(item_propensity=p, max_popularity=int(graph.item_degree.max()))


def inverse_weight(table: PropensityTable, item: int) -> float:
    if not 0 <= item < table.num_items:
        raise IndexError(f"item {item} out of range [0, {table.num_items})")
    return 1.0 / float(table.item_propensity[item])


def normalizer_z(graph: InteractionGraph, table: PropensityTable, node: int, side: str) -> float:
    """Sum of inverse propensities over a node's incident edges.

    For a user this runs over its items. For an item each incident user
    contributes the item's own inverse weight, i.e. ``deg(i) / p_i``.
    """
    inv = table.inverse
    nbrs = neighbors(graph, node, side)
    if side == USER:
        return float(inv[nbrs].sum())
    if side == ITEM:
        return float(nbrs.shape[0] * inv[node])
    raise ValueError(f"unknown side {side!r}")


def write_propensity_csv(table: PropensityTable, path, item_ids=None) -> None:
    ids = item_ids if item_ids is not None else range(table.num_items)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item_id", "propensity"])
        for item_id, p in zip(ids, table.item_propensity):
            w.writerow([item_id, repr(float(p))])
