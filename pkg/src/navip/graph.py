"""Immutable user-item bipartite interaction graph.

Both orientations are stored in compressed sparse row form so that
neighbor iteration is a slice in either direction.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

USER = "user"
ITEM = "item"


class GraphError(ValueError):
    """Raised when an edge list cannot form a valid interaction graph."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.int64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class InteractionGraph:
    num_users: int
    num_items: int
    user_indptr: np.ndarray
    user_indices: np.ndarray
    item_indptr: np.ndarray
    item_indices: np.ndarray
    user_degree: np.ndarray
    item_degree: np.ndarray

    @property
    def num_edges(self) -> int:
        return int(self.user_indices.shape[0])

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    def edges(self) -> np.ndarray:
        """Canonical (user, item) pairs sorted by user then item."""
        users = np.repeat(np.arange(self.num_users, dtype=np.int64), self.user_degree)
        return np.column_stack([users, self.user_indices])

    @cached_property
    def edge_keys(self) -> np.ndarray:
        """Sorted ``user * num_items + item`` keys, handy for membership tests."""
        users = np.repeat(np.arange(self.num_users, dtype=np.int64), self.user_degree)
        return _frozen(users * self.num_items + self.user_indices)

    def has_edge(self, user: int, item: int) -> bool:
        row = neighbors(self, user, USER)
        pos = np.searchsorted(row, item)
        return bool(pos < row.shape[0] and row[pos] == item)

    def to_bytes(self) -> bytes:
        parts = [np.array([self.num_users, self.num_items], dtype=np.int64)]
        parts += [self.user_indptr, self.user_indices, self.item_indptr, self.item_indices]
        return b"".join(p.astype("<i8").tobytes() for p in parts)


def _csr(rows: np.ndarray, cols: np.ndarray, num_rows: int) -> tuple[np.ndarray, np.ndarray]:
    counts = np.bincount(rows, minlength=num_rows)
    indptr = np.zeros(num_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, cols


def build_graph(edges, num_users: int, num_items: int) -> InteractionGraph:
    """Build an interaction graph from (user, item) index pairs.

    Duplicate pairs collapse into one binary edge. Every user and item must
    end up with at least one neighbor.
    """
    if num_users < 1 or num_items < 1:
        raise GraphError(f"need at least one user and one item, got {num_users}x{num_items}")
    arr = np.asarray(edges, dtype=np.int64)
    if arr.size == 0:
        arr = arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GraphError(f"edges must be a sequence of (user, item) pairs, got shape {arr.shape}")
    users, items = arr[:, 0], arr[:, 1]
    bad = np.flatnonzero((users < 0) | (users >= num_users) | (items < 0) | (items >= num_items))
    if bad.size:
        k = int(bad[0])
        raise GraphError(
            f"edge #{k} ({int(users[k])}, {int(items[k])}) out of range for "
            f"{num_users} users x {num_items} items"
        )

    keys = np.unique(users * num_items + items)
    u = keys // num_items
    i = keys % num_items

    user_degree = np.bincount(u, minlength=num_users)
    item_degree = np.bincount(i, minlength=num_items)
    iso_users = np.flatnonzero(user_degree == 0)
    iso_items = np.flatnonzero(item_degree == 0)
    if iso_users.size or iso_items.size:
        raise GraphError(
            f"isolated nodes: users {iso_users.tolist()}, items {iso_items.tolist()}"
        )

    user_indptr, user_indices = _csr(u, i, num_users)
    order = np.lexsort((u, i))
    item_indptr, item_indices = _csr(i[order], u[order], num_items)

    return InteractionGraph(
        num_users=int(num_users),
        num_items=int(num_items),
        user_indptr=_frozen(user_indptr),
        user_indices=_frozen(user_indices),
        item_indptr=_frozen(item_indptr),
        item_indices=_frozen(item_indices),
        user_degree=_frozen(user_degree),
        item_degree=_frozen(item_degree),
    )


def neighbors(graph: InteractionGraph, node: int, side: str) -> np.ndarray:
    """Return the sorted neighbor indices of a user or an item."""
    if side == USER:
        indptr, indices, n = graph.user_indptr, graph.user_indices, graph.num_users
    elif side == ITEM:
        indptr, indices, n = graph.item_indptr, graph.item_indices, graph.num_items
    else:
        raise ValueError(f"side must be {USER!r} or {ITEM!r}, got {side!r}")
    if not 0 <= node < n:
        raise IndexError(f"{side} {node} out of range [0, {n})")
    return indices[indptr[node]:indptr[node + 1]]
