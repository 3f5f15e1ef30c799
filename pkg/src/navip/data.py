"""Interaction-log ingestion, k-core filtering and pseudo-unbiased splits."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .propensity import propensity_from_counts

log = logging.getLogger(__name__)

FORMATS = ("tsv_triplet", "movielens_100k")


class DataFormatError(ValueError):
    pass


def load_interactions(path, fmt: str = "tsv_triplet") -> list[tuple[str, str]]:
    """Read (raw_user_id, raw_item_id) pairs; ratings and timestamps are dropped.

    Every observed line counts as a positive interaction regardless of its
    rating value.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    path = Path(path)
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if fmt == "movielens_100k":
                line = line.rstrip("\r\n")
                if not line:
                    continue
                fields = line.split("\t")
                if len(fields) != 4 or not all(f.strip().lstrip("-").isdigit() for f in fields):
                    raise DataFormatError(f"{path}:{lineno}: expected 4 tab-separated integers, got {line!r}")
            else:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                fields = line.split()
                if not 2 <= len(fields) <= 4:
                    raise DataFormatError(
                        f"{path}:{lineno}: expected 'user item [rating] [timestamp]', got {line!r}"
                    )
                for extra in fields[2:]:
                    try:
                        float(extra)
                    except ValueError:
                        raise DataFormatError(f"{path}:{lineno}: non-numeric field {extra!r}") from None
            pairs.append((fields[0].strip(), fields[1].strip()))
    if not pairs:
        raise DataFormatError(f"{path}: no interactions found")
    return pairs


@dataclass
class FilteredInteractions:
    edges: np.ndarray
    user_ids: list
    item_ids: list


def filter_min_degree(raw_pairs, threshold: int = 10) -> FilteredInteractions:
    """Drop users and items with fewer than ``threshold`` distinct partners,
    repeating until no more removals happen.

    Surviving ids get dense indices in order of first appearance.
    """
    raw_pairs = list(raw_pairs)
    if not raw_pairs:
        raise DataFormatError("no interactions to filter")
    users_raw = np.array([str(u) for u, _ in raw_pairs], dtype=object)
    items_raw = np.array([str(i) for _, i in raw_pairs], dtype=object)
    u_vals, u_idx = np.unique(users_raw, return_inverse=True)
    i_vals, i_idx = np.unique(items_raw, return_inverse=True)

    keys = u_idx.astype(np.int64) * len(i_vals) + i_idx
    _, first = np.unique(keys, return_index=True)
    first.sort()
    u_idx, i_idx = u_idx[first], i_idx[first]

    keep = np.ones(first.shape[0], dtype=bool)
    while True:
        du = np.bincount(u_idx[keep], minlength=len(u_vals))
        di = np.bincount(i_idx[keep], minlength=len(i_vals))
        drop = keep & ((du[u_idx] < threshold) | (di[i_idx] < threshold))
        if not drop.any():
            break
        keep &= ~drop
    if not keep.any():
        raise DataFormatError(f"no interactions survive the minimum-degree filter ({threshold})")

    u_idx, i_idx = u_idx[keep], i_idx[keep]
    u_order = _first_appearance(u_idx)
    i_order = _first_appearance(i_idx)
    u_map = np.full(len(u_vals), -1, dtype=np.int64)
    u_map[u_order] = np.arange(u_order.shape[0])
    i_map = np.full(len(i_vals), -1, dtype=np.int64)
    i_map[i_order] = np.arange(i_order.shape[0])
    edges = np.column_stack([u_map[u_idx], i_map[i_idx]])
    return FilteredInteractions(
        edges=edges,
        user_ids=[str(x) for x in u_vals[u_order]],
        item_ids=[str(x) for x in i_vals[i_order]],
    )


def _first_appearance(codes: np.ndarray) -> np.ndarray:
    vals, first = np.unique(codes, return_index=True)
    return vals[np.argsort(first, kind="stable")]


def weighted_sample_without_replacement(weights, n: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``n`` sequential weighted draws without replacement, in draw order.

    Uses exponential keys ``log(U) / w``: sorting them descending has the
    same distribution as drawing one item at a time with probability
    proportional to the remaining weights.
    """
    w = np.asarray(weights, dtype=np.float64)
    if n > w.shape[0]:
        raise ValueError(f"cannot draw {n} of {w.shape[0]} without replacement")
    if (w <= 0).any():
        raise ValueError("weights must be positive")
    u = 1.0 - rng.random(w.shape[0])
    keys = np.log(u) / w
    return np.argsort(-keys, kind="stable")[:n]


@dataclass
class Split:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    moved_from_test: int = 0
    moved_from_validation: int = 0
    drawn_test: int = 0
    drawn_validation: int = 0


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def pseudo_unbiased_split(
    edges,
    num_items: int | None = None,
    test_frac: float = 0.05,
    val_frac: float = 0.05,
    seed: int = 0,
    propensity=None,
    repair: bool = True,
) -> Split:
    """Hold out test and validation interactions with mass proportional to 1/p_i.

    ``p_i`` defaults to the relative-popularity propensity computed on
    ``edges`` itself. Held-out pairs whose user or item would be missing
    from train are moved back to train when ``repair`` is set.
    """
    for name, frac in (("test_frac", test_frac), ("val_frac", val_frac)):
        if not 0 < frac < 0.5:
            raise ValueError(f"{name} must lie in (0, 0.5), got {frac}")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    E = edges.shape[0]
    if num_items is None:
        num_items = int(edges[:, 1].max()) + 1
    if propensity is None:
        counts = np.bincount(edges[:, 1], minlength=num_items)
        p = np.ones(num_items)
        seen = counts > 0
        p[seen] = propensity_from_counts(counts[seen])
    else:
        p = np.asarray(propensity, dtype=np.float64)
    w = 1.0 / p[edges[:, 1]]

    rng = np.random.default_rng(seed)
    n_test = _round_half_up(test_frac * E)
    n_val = _round_half_up(val_frac * E)
    test_idx = weighted_sample_without_replacement(w, n_test, rng)
    rest = np.setdiff1d(np.arange(E), test_idx)
    val_idx = rest[weighted_sample_without_replacement(w[rest], n_val, rng)]
    held = np.zeros(E, dtype=bool)
    held[test_idx] = True
    held[val_idx] = True
    train_idx = np.flatnonzero(~held)

    test_idx = np.sort(test_idx)
    val_idx = np.sort(val_idx)
    moved_t = moved_v = 0
    if repair:
        tr = edges[train_idx]
        has_u = np.zeros(int(edges[:, 0].max()) + 1, dtype=bool)
        has_i = np.zeros(num_items, dtype=bool)
        has_u[tr[:, 0]] = True
        has_i[tr[:, 1]] = True

        def ok(idx):
            return has_u[edges[idx, 0]] & has_i[edges[idx, 1]]

        t_ok, v_ok = ok(test_idx), ok(val_idx)
        moved_t, moved_v = int((~t_ok).sum()), int((~v_ok).sum())
        train_idx = np.sort(np.concatenate([train_idx, test_idx[~t_ok], val_idx[~v_ok]]))
        test_idx, val_idx = test_idx[t_ok], val_idx[v_ok]
        if moved_t or moved_v:
            log.info("cold-start repair moved %d test and %d validation pairs to train", moved_t, moved_v)

    return Split(
        train=edges[train_idx],
        validation=edges[val_idx],
        test=edges[test_idx],
        moved_from_test=moved_t,
        moved_from_validation=moved_v,
        drawn_test=n_test,
        drawn_validation=n_val,
    )


@dataclass
class Dataset:
    user_ids: list
    item_ids: list
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def num_users(self) -> int:
        return len(self.user_ids)

    @property
    def num_items(self) -> int:
        return len(self.item_ids)

    def split(self, name: str) -> np.ndarray:
        if name in ("val", "validation"):
            return self.validation
        if name == "test":
            return self.test
        if name == "train":
            return self.train
        raise ValueError(f"unknown split {name!r}")


def prepare_dataset(
    path,
    fmt: str = "movielens_100k",
    min_degree: int = 10,
    test_frac: float = 0.05,
    val_frac: float = 0.05,
    seed: int = 0,
) -> Dataset:
    raw = load_interactions(path, fmt)
    filt = filter_min_degree(raw, min_degree)
    split = pseudo_unbiased_split(
        filt.edges, len(filt.item_ids), test_frac=test_frac, val_frac=val_frac, seed=seed
    )
    meta = {
        "source": str(path),
        "source_sha256": file_sha256(path),
        "format": fmt,
        "min_degree": min_degree,
        "split_seed": seed,
        "test_frac": test_frac,
        "val_frac": val_frac,
        "raw_interactions": len(raw),
        "num_users": len(filt.user_ids),
        "num_items": len(filt.item_ids),
        "num_interactions": int(filt.edges.shape[0]),
        "num_train": int(split.train.shape[0]),
        "num_validation": int(split.validation.shape[0]),
        "num_test": int(split.test.shape[0]),
        "drawn_test": split.drawn_test,
        "drawn_validation": split.drawn_validation,
        "repaired_test": split.moved_from_test,
        "repaired_validation": split.moved_from_validation,
    }
    return Dataset(filt.user_ids, filt.item_ids, split.train, split.validation, split.test, meta)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_pairs(path: Path, pairs: np.ndarray) -> None:
    with open(path, "w") as fh:
        for u, i in pairs:
            fh.write(f"{u}\t{i}\n")


def _read_pairs(path: Path) -> np.ndarray:
    rows = [tuple(int(x) for x in line.split("\t")) for line in path.read_text().splitlines() if line]
    return np.asarray(rows, dtype=np.int64).reshape(-1, 2)


def _write_ids(path: Path, ids) -> None:
    with open(path, "w") as fh:
        for k, raw in enumerate(ids):
            fh.write(f"{raw}\t{k}\n")


def _read_ids(path: Path) -> list:
    out = []
    for line in path.read_text().splitlines():
        if not line:
            continue
        raw, k = line.split("\t")
        if int(k) != len(out):
            raise DataFormatError(f"{path}: dense indices must be consecutive")
        out.append(raw)
    return out


def write_bundle(dataset: Dataset, out_dir, manifest: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_pairs(out / "train.tsv", dataset.train)
    _write_pairs(out / "val.tsv", dataset.validation)
    _write_pairs(out / "test.tsv", dataset.test)
    _write_ids(out / "user_ids.tsv", dataset.user_ids)
    _write_ids(out / "item_ids.tsv", dataset.item_ids)
    doc = {"dataset": dataset.metadata}
    if manifest:
        doc.update(manifest)
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return out


def read_bundle(bundle_dir) -> Dataset:
    d = Path(bundle_dir)
    if not (d / "manifest.json").exists():
        raise FileNotFoundError(f"{d}: not a split bundle (manifest.json missing)")
    meta = json.loads((d / "manifest.json").read_text()).get("dataset", {})
    return Dataset(
        user_ids=_read_ids(d / "user_ids.tsv"),
        item_ids=_read_ids(d / "item_ids.tsv"),
        train=_read_pairs(d / "train.tsv"),
        validation=_read_pairs(d / "val.tsv"),
        test=_read_pairs(d / "test.tsv"),
        metadata=meta,
    )
