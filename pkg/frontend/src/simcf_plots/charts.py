"""Build matplotlib figures from simcf result CSVs.

Two chart families:

* quality: one line per model, ranking metric over embedding dimension,
  from ``train-eval`` output (``model,dataset,d,seed,epoch,hr@K,ndcg@K``).
* synth: approximation error over training-pair count on a log axis, one
  color per dimension, solid for the fresh test set and dotted for the
  observed one, with horizontal reference lines at 0.01 and 0.001.

Figures are constructed directly (no pyplot state), so rendering is pure:
input CSVs are never written to, and rerunning yields identical series.
"""

from __future__ import annotations

import csv
import re
from pathlib import Path

from matplotlib.figure import Figure

QUALITY_METRIC_PATTERN = re.compile(r"^(hr|ndcg)@\d+$")

REFERENCE_LEVELS = (0.01, 0.001)


class ChartError(ValueError):
    """Bad input CSV (missing column, no usable rows)."""


def read_rows(path: str | Path) -> list[dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ChartError(f"{path}: empty CSV")
        return list(reader)


def _require(rows: list[dict[str, str]], columns: list[str], path) -> None:
    if not rows:
        raise ChartError(f"{path}: no data rows")
    for col in columns:
        if col not in rows[0]:
            raise ChartError(f"{path}: missing column {col!r}")


def _mean_rows(rows: list[dict[str, str]], marker_col: str) -> list[dict[str, str]]:
    """Keep aggregate rows when present; otherwise use everything."""
    means = [row for row in rows if row[marker_col] == "mean"]
    return means or rows


def quality_figure(rows: list[dict[str, str]], path="<csv>") -> Figure:
    """One panel per ranking metric, one line per model over d."""
    _require(rows, ["model", "d", "seed"], path)
    metrics = [col for col in rows[0] if QUALITY_METRIC_PATTERN.match(col)]
    if not metrics:
        raise ChartError(f"{path}: missing column 'hr@K'/'ndcg@K'")
    rows = _mean_rows(rows, "seed")

    models = sorted({row["model"] for row in rows})
    fig = Figure(figsize=(5.0 * len(metrics), 4.0))
    axes = fig.subplots(1, len(metrics), squeeze=False)[0]
    for ax, metric in zip(axes, metrics):
        for model in models:
            pts = sorted(
                (int(row["d"]), float(row[metric]))
                for row in rows
                if row["model"] == model
            )
            ax.plot([d for d, _ in pts], [v for _, v in pts], marker="o", label=model)
        ax.set_xlabel("embedding dimension d")
        ax.set_ylabel(metric)
        ax.grid(True, alpha=0.3)
        ax.legend()
    fig.tight_layout()
    return fig


def synth_figure(rows: list[dict[str, str]], path="<csv>") -> Figure:
    """Approximation error vs training pairs, grouped by dimension.

    Solid lines: fresh-embedding test error. Dotted: observed-pair test
    error. Horizontal reference lines mark the 0.01 and 0.001 levels.
    """
    needed = ["d", "repeat", "train_pairs", "approx_err_fresh", "approx_err_observed"]
    _require(rows, needed, path)
    rows = _mean_rows(rows, "repeat")

    dims = sorted({int(row["d"]) for row in rows})
    fig = Figure(figsize=(6.5, 4.5))
    ax = fig.subplots()
    colors = {d: f"C{i}" for i, d in enumerate(dims)}
    for d in dims:
        pts = sorted(
            (int(row["train_pairs"]), float(row["approx_err_fresh"]),
             float(row["approx_err_observed"]))
            for row in rows
            if int(row["d"]) == d
        )
        xs = [x for x, _, _ in pts]
        ax.plot(xs, [f for _, f, _ in pts], color=colors[d], linestyle="-",
                marker="o", label=f"d={d} (fresh)")
        ax.plot(xs, [o for _, _, o in pts], color=colors[d], linestyle=":",
                marker="o", label=f"d={d} (observed)")
    for level in REFERENCE_LEVELS:
        ax.axhline(level, color="gray", linewidth=0.8, linestyle="--", label=f"_ref_{level}")
    ax.set_xscale("log")
    ax.set_xlabel("training pairs")
    ax.set_ylabel("RMSE difference vs dot predictor")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return fig
