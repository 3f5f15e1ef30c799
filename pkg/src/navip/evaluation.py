"""HR@k / NDCG@k under the one-positive-vs-sampled-negatives protocol."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .graph import InteractionGraph

DEFAULT_KS = (5, 10, 20)
SEGMENTS = ("", "_head", "_tail")


def tie_rank(scores, positive_index: int = 0) -> int:
    """1-based rank of the positive; the positive loses every tie."""
    scores = np.asarray(scores, dtype=np.float64)
    s = scores[positive_index]
    others = np.delete(scores, positive_index)
    return 1 + int(np.count_nonzero(others >= s))


def hit_at(rank: int, k: int) -> float:
    return 1.0 if rank <= k else 0.0


def ndcg_at(rank: int, k: int) -> float:
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def head_tail_split(graph_train: InteractionGraph) -> tuple[frozenset, frozenset]:
    """Top and bottom ceil(10%) of items by training degree (ties: lower index first)."""
    N = graph_train.num_items
    if N < 10:
        raise ValueError(f"head/tail split needs at least 10 items, got {N}")
    n = math.ceil(0.1 * N)
    order = np.lexsort((np.arange(N), -graph_train.item_degree))
    return frozenset(order[:n].tolist()), frozenset(order[-n:].tolist())


@dataclass
class EvalReport:
    hr: dict
    ndcg: dict
    hr_head: dict
    ndcg_head: dict
    hr_tail: dict
    ndcg_tail: dict
    num_cases: int
    num_head_cases: int = 0
    num_tail_cases: int = 0
    shortfall_cases: int = 0
    num_negatives: int | None = 99
    seed: int | None = None
    strategy: str | None = None
    normalization: str | None = None
    split: str | None = None
    extra: dict = field(default_factory=dict)

    def flat(self) -> dict:
        out = {
            "strategy": self.strategy,
            "normalization": self.normalization,
            "split": self.split,
            "seed": self.seed,
            "num_negatives": self.num_negatives,
            "num_cases": self.num_cases,
            "num_head_cases": self.num_head_cases,
            "num_tail_cases": self.num_tail_cases,
            "shortfall_cases": self.shortfall_cases,
        }
        for name in ("hr", "ndcg", "hr_head", "ndcg_head", "hr_tail", "ndcg_tail"):
            for k, v in getattr(self, name).items():
                out[f"{name}@{k}"] = v
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.flat(), indent=2, sort_keys=True) + "\n"

    def check(self) -> list[str]:
        """Return violated invariants (empty when the report is consistent)."""
        problems = []
        for seg in SEGMENTS:
            hr, nd = getattr(self, "hr" + seg), getattr(self, "ndcg" + seg)
            ks = sorted(hr)
            for k in ks:
                if hr[k] is None:
                    continue
                if not (0.0 <= hr[k] <= 1.0 and 0.0 <= nd[k] <= 1.0):
                    problems.append(f"hr{seg}/ndcg{seg}@{k} outside [0, 1]")
                if nd[k] > hr[k] + 1e-12:
                    problems.append(f"ndcg{seg}@{k} > hr{seg}@{k}")
            for a, b in zip(ks, ks[1:]):
                if hr[a] is None:
                    continue
                if hr[b] < hr[a] or nd[b] < nd[a]:
                    problems.append(f"metrics{seg} decrease from @{a} to @{b}")
        return problems

    @classmethod
    def from_flat(cls, d: dict) -> "EvalReport":
        maps = {n: {} for n in ("hr", "ndcg", "hr_head", "ndcg_head", "hr_tail", "ndcg_tail")}
        for key, v in d.items():
            if "@" in key:
                name, k = key.split("@")
                maps[name][int(k)] = v
        return cls(
            **maps,
            num_cases=d["num_cases"],
            num_head_cases=d.get("num_head_cases", 0),
            num_tail_cases=d.get("num_tail_cases", 0),
            shortfall_cases=d.get("shortfall_cases", 0),
            num_negatives=d.get("num_negatives"),
            seed=d.get("seed"),
            strategy=d.get("strategy"),
            normalization=d.get("normalization"),
            split=d.get("split"),
        )


def _mean(values) -> float | None:
    return float(np.mean(values)) if len(values) else None


def metrics_from_ranks(ranks, ks) -> tuple[dict, dict]:
    hr = {k: _mean([hit_at(r, k) for r in ranks]) for k in ks}
    nd = {k: _mean([ndcg_at(r, k) for r in ranks]) for k in ks}
    return hr, nd


def _held_out_by_user(extra_pairs: np.ndarray) -> dict:
    ex = {}
    for u, i in extra_pairs:
        ex.setdefault(int(u), set()).add(int(i))
    return ex


def evaluate(
    final: np.ndarray,
    graph_train: InteractionGraph,
    test_set,
    k_list=DEFAULT_KS,
    num_negatives: int | None = 99,
    seed: int = 0,
    exclude=None,
    strategy: str | None = None,
    normalization: str | None = None,
    split: str | None = None,
) -> EvalReport:
    """Rank each held-out (user, item) against sampled unseen items.

    Negatives for a user exclude its training items, every item it has in
    ``test_set`` and any pair listed in ``exclude``. ``num_negatives=None``
    ranks against all eligible items. Case ``c`` draws its negatives from
    a generator seeded with ``(seed, c)``, so results do not depend on the
    order or grouping in which cases are processed.
    """
    M, N = graph_train.num_users, graph_train.num_items
    ks = tuple(sorted(int(k) for k in k_list))
    pairs = np.asarray(test_set, dtype=np.int64).reshape(-1, 2)
    extra = pairs if exclude is None else np.vstack([pairs, np.asarray(exclude, dtype=np.int64).reshape(-1, 2)])
    held = _held_out_by_user(extra)
    head, tail = head_tail_split(graph_train) if N >= 10 else (frozenset(), frozenset())

    users_f, items_f = final[:M], final[M:]
    eligible_cache: dict[int, np.ndarray] = {}
    user_scores: dict[int, np.ndarray] = {}
    ranks, head_ranks, tail_ranks = [], [], []
    shortfall = 0
    for c, (u, i) in enumerate(pairs):
        u, i = int(u), int(i)
        if not (0 <= u < M and 0 <= i < N):
            raise IndexError(f"test case {c} ({u}, {i}) out of range")
        elig = eligible_cache.get(u)
        if elig is None:
            mask = np.ones(N, dtype=bool)
            mask[graph_train.user_indices[graph_train.user_indptr[u]:graph_train.user_indptr[u + 1]]] = False
            mask[list(held.get(u, ()))] = False
            elig = np.flatnonzero(mask)
            eligible_cache[u] = elig
        if num_negatives is None:
            negs = elig
        elif elig.shape[0] <= num_negatives:
            negs = elig
            if elig.shape[0] < num_negatives:
                shortfall += 1
        else:
            rng = np.random.default_rng([seed, c])
            negs = rng.choice(elig, size=num_negatives, replace=False)
        full = user_scores.get(u)
        if full is None:
            full = user_scores[u] = items_f @ users_f[u]
        scores = full[np.concatenate([[i], negs])]
        r = tie_rank(scores, 0)
        ranks.append(r)
        if i in head:
            head_ranks.append(r)
        if i in tail:
            tail_ranks.append(r)

    hr, nd = metrics_from_ranks(ranks, ks)
    hrh, ndh = metrics_from_ranks(head_ranks, ks)
    hrt, ndt = metrics_from_ranks(tail_ranks, ks)
    return EvalReport(
        hr=hr, ndcg=nd, hr_head=hrh, ndcg_head=ndh, hr_tail=hrt, ndcg_tail=ndt,
        num_cases=len(ranks),
        num_head_cases=len(head_ranks),
        num_tail_cases=len(tail_ranks),
        shortfall_cases=shortfall,
        num_negatives=num_negatives,
        seed=seed,
        strategy=strategy,
        normalization=normalization,
        split=split,
    )


def summarize(reports) -> dict:
    """Mean and sample std over seeds of every numeric metric key."""
    flats = [r.flat() if isinstance(r, EvalReport) else r for r in reports]
    keys = [k for k in flats[0] if "@" in k]
    out = {"num_seeds": len(flats), "seeds": [f.get("seed") for f in flats]}
    for k in keys:
        vals = [f[k] for f in flats if f[k] is not None]
        if not vals:
            out[k] = {"mean": None, "std": None, "se": None}
            continue
        arr = np.asarray(vals, dtype=np.float64)
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        out[k] = {"mean": float(arr.mean()), "std": std, "se": std / math.sqrt(arr.size)}
    for meta in ("strategy", "normalization", "split", "num_cases"):
        out[meta] = flats[0].get(meta)
    return out

