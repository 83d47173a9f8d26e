"""Run reports: delimited summaries plus rendered figures.

Training writes one ``history.csv`` row per epoch; the report path turns
that into PNG figures (loss curves, anchor-count trajectory, stored
nonzeros) next to a tab-separated summary so runs can be compared
without re-parsing logs.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "HISTORY_FIELDS",
    "write_history",
    "read_history",
    "write_summary",
    "render_run_figures",
    "render_nnz_histogram",
]

HISTORY_FIELDS = ["epoch", "train_loss", "val_mse", "nnz", "k", "sva_obj"]


def write_history(path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in HISTORY_FIELDS})


def read_history(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        out = []
        for row in csv.DictReader(fh):
            parsed = {}
            for key, val in row.items():
                if val in ("", None):
                    parsed[key] = None
                elif key in ("epoch", "nnz", "k"):
                    parsed[key] = int(float(val))
                else:
                    parsed[key] = float(val)
            out.append(parsed)
        return out


def write_summary(path, summary: dict) -> None:
    """Two-column TSV of run-level facts."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("key\tvalue\n")
        for key, val in summary.items():
            fh.write(f"{key}\t{val}\n")


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_run_figures(history: list[dict], out_dir) -> list[str]:
    """Render training-trajectory figures; returns the files written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    epochs = [row["epoch"] for row in history]
    written = []

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [row["train_loss"] for row in history], label="train loss")
    vals = [row.get("val_mse") for row in history]
    if any(v is not None for v in vals):
        ax.plot(epochs, vals, label="validation MSE")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    path = out_dir / "loss_curve.png"
    _save(fig, path)
    written.append(str(path))

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.step(epochs, [row["k"] for row in history], where="post")
    ax.set_xlabel("epoch")
    ax.set_ylabel("anchors (K)")
    path = out_dir / "anchor_count.png"
    _save(fig, path)
    written.append(str(path))

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [row["nnz"] for row in history])
    ax.set_xlabel("epoch")
    ax.set_ylabel("stored nonzeros")
    path = out_dir / "nnz.png"
    _save(fig, path)
    written.append(str(path))
    return written


def render_nnz_histogram(model, path) -> str:
    """Histogram of per-row stored entries for one transform."""
    counts = model.transform.row_nnz()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(counts, bins=np.arange(counts.max() + 2) - 0.5, edgecolor="black")
    ax.set_xlabel("stored entries per row")
    ax.set_ylabel("objects")
    _save(fig, path)
    return str(path)
