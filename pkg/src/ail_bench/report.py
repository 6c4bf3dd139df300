"""report.py

Writes analysis results to disk: one CSV per query, an SVG chart rendered
from that CSV, per-task quantile tables and an ``index.html`` linking them.

Charts are drawn only from the CSV contents, so re-rendering a CSV gives the
same SVG bytes.
"""
from __future__ import annotations

import csv
import html
import logging
import math
import os
from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ail_bench.analysis import (QUANTILES, AnalysisQuery, conditional_grid,  # noqa: E402
                                conditional_percentile, quantile_table, top_fraction_ratio)
from ail_bench.run_log import RunRecord  # noqa: E402

logger = logging.getLogger(__name__)

PERCENTILE_COLUMNS = ["value", "estimate", "err_low", "err_high", "std", "point", "count", "top_ratio"]
GRID_COLUMNS = ["row", "col", "estimate"]
SVG_RC = {"svg.hashsalt": "ail-bench", "svg.fonttype": "path"}


def _fmt(x: float) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def write_percentile_csv(path: str, records: Sequence[RunRecord], query: AnalysisQuery) -> None:
    estimates = conditional_percentile(records, query)
    ratios = top_fraction_ratio(records, query)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# choice: {query.choice}\n# metric: {query.metric}\n# percentile: {query.percentile}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(PERCENTILE_COLUMNS)
        for v, e in estimates.items():
            w.writerow([v, _fmt(e.estimate), _fmt(e.err_low), _fmt(e.err_high), _fmt(e.std), _fmt(e.point),
                        e.count, _fmt(ratios.get(v, float("nan")))])


def write_grid_csv(path: str, records: Sequence[RunRecord], query: AnalysisQuery) -> None:
    grid = conditional_grid(records, query.choice, query.by, query)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# choice: {query.choice}\n# by: {query.by}\n# metric: {query.metric}\n"
                f"# percentile: {query.percentile}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(GRID_COLUMNS)
        for i, a in enumerate(grid.rows):
            for j, b in enumerate(grid.cols):
                w.writerow([a, b, _fmt(grid.values[i, j])])


def read_csv(path: str):
    """Returns (header comments, column names, rows) of a report CSV."""
    meta: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = f.read().splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    for ln in lines:
        if ln.startswith("#") and ":" in ln:
            k, v = ln[1:].split(":", 1)
            meta[k.strip()] = v.strip()
    reader = csv.reader(body)
    columns = next(reader, [])
    return meta, columns, [r for r in reader if r]


def render_svg(csv_path: str, svg_path: str) -> None:
    """Draws a bar chart (percentile CSV) or a heatmap (grid CSV) from ``csv_path``."""
    meta, columns, rows = read_csv(csv_path)
    with plt.rc_context(SVG_RC):
        if columns == GRID_COLUMNS:
            fig = _grid_figure(meta, rows)
        else:
            fig = _bar_figure(meta, columns, rows)
        fig.savefig(svg_path, format="svg", metadata={"Date": None})
        plt.close(fig)


def _bar_figure(meta: Dict[str, str], columns: List[str], rows: List[List[str]]):
    col = {c: i for i, c in enumerate(columns)}
    labels = [r[col["value"]] for r in rows]
    est = np.array([float(r[col["estimate"]]) for r in rows])
    std = np.array([float(r[col["std"]]) for r in rows])
    fig, ax = plt.subplots(figsize=(max(4.0, 0.8 * len(labels) + 2.0), 4.0))
    x = np.arange(len(labels))
    ax.bar(x, est, yerr=std, capsize=4, color="tab:blue", alpha=0.8)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_xlabel(meta.get("choice", ""))
    ax.set_ylabel(f"{meta.get('percentile', '')}th pct. {meta.get('metric', '')}")
    ax.grid(True, axis="y", alpha=0.25)
    fig.tight_layout()
    return fig


def _grid_figure(meta: Dict[str, str], rows: List[List[str]]):
    row_labels = list(dict.fromkeys(r[0] for r in rows))
    col_labels = list(dict.fromkeys(r[1] for r in rows))
    values = np.full((len(row_labels), len(col_labels)), np.nan)
    for a, b, v in rows:
        values[row_labels.index(a), col_labels.index(b)] = float(v)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(col_labels) + 2.5), max(3.0, 0.5 * len(row_labels) + 1.5)))
    im = ax.imshow(np.ma.masked_invalid(values), cmap="viridis", aspect="auto")
    for i in range(len(row_labels)):
        for j in range(len(col_labels)):
            text = "-" if np.isnan(values[i, j]) else f"{values[i, j]:.2f}"
            ax.text(j, i, text, ha="center", va="center", fontsize=7, color="white")
    ax.set_xticks(np.arange(len(col_labels)))
    ax.set_xticklabels(col_labels, rotation=30, ha="right")
    ax.set_yticks(np.arange(len(row_labels)))
    ax.set_yticklabels(row_labels)
    ax.set_xlabel(meta.get("by", ""))
    ax.set_ylabel(meta.get("choice", ""))
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    return fig


def write_quantile_csv(path: str, records: Sequence[RunRecord], metric: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["env_id", "demos", "count"] + [("max" if q == 100.0 else f"q{q:g}") for q in QUANTILES])
        for row in quantile_table(records, metric):
            w.writerow([row.env_id, row.demos, row.count] + [_fmt(q) for q in row.quantiles])


def _index(out_dir: str, entries: List[tuple]) -> str:
    items = "\n".join(
        f'<li>{html.escape(title)}: ' + ", ".join(
            f'<a href="{html.escape(os.path.basename(p))}">{html.escape(os.path.basename(p))}</a>' for p in paths)
        + "</li>"
        for title, paths in entries)
    page = ("<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>ail-bench report</title></head>\n"
            f"<body>\n<h1>ail-bench report</h1>\n<ul>\n{items}\n</ul>\n</body></html>\n")
    path = os.path.join(out_dir, "index.html")
    Path(path).write_text(page, encoding="utf-8")
    return path


def emit_report(records: Sequence[RunRecord], queries: Sequence[AnalysisQuery], out_dir: str) -> List[str]:
    """Writes every query's CSV and SVG, the quantile tables and the index.

    Args:
        records: Results to analyse (failed runs are ignored).
        queries: One chart per query; a query with ``by`` set becomes a grid.
        out_dir: Output directory (created if missing).

    Returns:
        Paths written, the index last.
    """
    os.makedirs(out_dir, exist_ok=True)
    written: List[str] = []
    entries: List[tuple] = []
    for query in queries:
        csv_path = os.path.join(out_dir, f"{query.name}.csv")
        svg_path = os.path.join(out_dir, f"{query.name}.svg")
        if query.by is None:
            write_percentile_csv(csv_path, records, query)
        else:
            write_grid_csv(csv_path, records, query)
        render_svg(csv_path, svg_path)
        written += [csv_path, svg_path]
        entries.append((query.name, [svg_path, csv_path]))
    if any(r.status == "ok" for r in records):
        for metric in ("final_score", "average_score"):
            path = os.path.join(out_dir, f"quantiles__{metric}.csv")
            write_quantile_csv(path, records, metric)
            written.append(path)
            entries.append((f"quantiles of {metric}", [path]))
    written.append(_index(out_dir, entries))
    logger.info("report written out_dir=%s files=%d", out_dir, len(written))
    return written
