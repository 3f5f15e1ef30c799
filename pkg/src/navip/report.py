"""Comparison tables over evaluation summaries (plain text and CSV)."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path


@dataclass
class Row:
    label: str
    means: dict
    stds: dict


def metric_columns(summary: dict, segment: str = "") -> list[str]:
    """Metric keys like ``hr@10`` ordered HR first, then NDCG, by k."""
    ks = sorted({int(k.split("@")[1]) for k in summary if k.startswith(f"hr{segment}@")})
    return [f"hr{segment}@{k}" for k in ks] + [f"ndcg{segment}@{k}" for k in ks]


def rows_from_summary(summary_doc: dict, prefix: str = "") -> list[Row]:
    rows = []
    for name, summ in summary_doc["strategies"].items():
        means = {k: v["mean"] for k, v in summ.items() if isinstance(v, dict) and "mean" in v}
        stds = {k: v["std"] for k, v in summ.items() if isinstance(v, dict) and "std" in v}
        rows.append(Row(prefix + name, means, stds))
    return rows


def load_rows(run_dirs) -> list[Row]:
    docs = []
    for d in run_dirs:
        p = Path(d) / "summary.json"
        if not p.exists():
            raise FileNotFoundError(f"{p}: no evaluation summary in run directory {d}")
        docs.append((Path(d), json.loads(p.read_text())))
    names = [n for _, doc in docs for n in doc["strategies"]]
    clash = len(names) != len(set(names))
    rows = []
    for d, doc in docs:
        rows += rows_from_summary(doc, prefix=f"{d.name}:" if clash else "")
    return rows


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.4f}"


def _column_max(rows, col):
    vals = [r.means.get(col) for r in rows if r.means.get(col) is not None]
    return max(vals) if vals else None


def render_text(rows: list[Row], columns: list[str], bold: bool = True, with_std: bool = True) -> str:
    """Aligned table, rows are strategies; per-column maxima wrapped in ``**``."""
    show_std = with_std and any((r.stds.get(c) or 0) > 0 for r in rows for c in columns)
    header = ["method"] + [c.upper() for c in columns]
    body = []
    for r in rows:
        cells = [r.label]
        for c in columns:
            m = r.means.get(c)
            cell = _fmt(m)
            if show_std and m is not None:
                cell += f" ±{_fmt(r.stds.get(c))}"
            if bold and m is not None and m == _column_max(rows, c):
                cell = f"**{cell}**"
            cells.append(cell)
        body.append(cells)
    widths = [max(len(x[j]) for x in [header] + body) for j in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for cells in body:
        lines.append("  ".join(c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(cells, widths))))
    return "\n".join(lines) + "\n"


def render_csv(rows: list[Row], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method"] + columns + [f"{c}_std" for c in columns])
    for r in rows:
        w.writerow([r.label] + [_fmt(r.means.get(c)) for c in columns] + [_fmt(r.stds.get(c)) for c in columns])
    return buf.getvalue()
