"""Result emission: versioned metric CSVs, JSON summaries, and the
matplotlib figures written next to them."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

CSV_SCHEMA = "lixelkit-metrics-v1"
CSV_COLUMNS = (
    "variant", "seed", "step", "mpjpe", "pa_mpjpe",
    "loss_pose_posenet", "loss_pose_meshnet", "loss_vertex",
    "loss_normal", "loss_edge", "loss_total",
    "param_count", "heatmap_cells",
)


@dataclass
class ResultRow:
    seed: int
    step: int
    mpjpe: float
    pa_mpjpe: float
    loss_pose_posenet: float = 0.0
    loss_pose_meshnet: float = 0.0
    loss_vertex: float = 0.0
    loss_normal: float = 0.0
    loss_edge: float = 0.0
    loss_total: float = 0.0
    param_count: int = 0
    heatmap_cells: int = 0
    variant: str = ""
    wall_time: float = 0.0  # reported in the summary, not the metrics CSV

    def finite(self):
        vals = (self.mpjpe, self.pa_mpjpe, self.loss_total)
        return all(np.isfinite(v) for v in vals)


def _cell(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(path, rows):
    """Deterministic CSV: schema comment, header, repr-formatted floats.

    Wall time deliberately stays out so identical (config, seed) runs
    produce byte-identical files.
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# schema: {CSV_SCHEMA}\n")
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_cell(getattr(row, col)) for col in CSV_COLUMNS) + "\n")


def read_metrics_csv(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if CSV_SCHEMA not in header:
            raise ValueError(f"{path}: unexpected schema line {header!r}")
        columns = fh.readline().strip().split(",")
        for line in fh:
            parts = line.strip().split(",")
            record = dict(zip(columns, parts))
            rows.append(ResultRow(
                seed=int(record["seed"]), step=int(record["step"]),
                mpjpe=float(record["mpjpe"]), pa_mpjpe=float(record["pa_mpjpe"]),
                loss_pose_posenet=float(record["loss_pose_posenet"]),
                loss_pose_meshnet=float(record["loss_pose_meshnet"]),
                loss_vertex=float(record["loss_vertex"]),
                loss_normal=float(record["loss_normal"]),
                loss_edge=float(record["loss_edge"]),
                loss_total=float(record["loss_total"]),
                param_count=int(record["param_count"]),
                heatmap_cells=int(record["heatmap_cells"]),
                variant=record["variant"],
            ))
    return rows


def write_summary_json(path, summary):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def _figdir(out_dir):
    path = os.path.join(out_dir, "figures")
    os.makedirs(path, exist_ok=True)
    return path


def fig_training_curves(rows, out_dir, name="training_curves.png"):
    """Held-out error and loss terms against the training step."""
    by_variant_seed = {}
    for r in rows:
        by_variant_seed.setdefault((r.variant, r.seed), []).append(r)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for (variant, seed), series in sorted(by_variant_seed.items()):
        series = sorted(series, key=lambda r: r.step)
        steps = [r.step for r in series]
        label = f"{variant or 'train'} s{seed}"
        ax1.plot(steps, [r.mpjpe for r in series], label=label, alpha=0.8)
        ax2.plot(steps, [r.loss_total for r in series], alpha=0.8)
    ax1.set_xlabel("step")
    ax1.set_ylabel("held-out MPJPE [mm]")
    ax2.set_xlabel("step")
    ax2.set_ylabel("total loss")
    ax2.set_yscale("log")
    if len(by_variant_seed) <= 12:
        ax1.legend(fontsize=7)
    fig.tight_layout()
    path = os.path.join(_figdir(out_dir), name)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def fig_trend_bars(groups, out_dir, ylabel="median held-out MPJPE [mm]",
                   name="trend.png"):
    """Bar per variant with the per-seed values scattered on top."""
    labels = list(groups)
    medians = [float(np.median(groups[k])) for k in labels]
    fig, ax = plt.subplots(figsize=(1.6 * max(4, len(labels)), 4))
    ax.bar(range(len(labels)), medians, color="#6699cc", width=0.6)
    for i, k in enumerate(labels):
        vals = groups[k]
        ax.scatter([i] * len(vals), vals, color="#223355", zorder=3, s=14)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=15, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    path = os.path.join(_figdir(out_dir), name)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def fig_memory_table(entries, out_dir, name="memtable.png"):
    """Log-scale bars of the exact cell counts per layout."""
    labels = [e["layout"] for e in entries]
    cells = [e["cells"] for e in entries]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(labels)), cells, color=["#88bb88", "#bbaa66", "#bb6666"][: len(labels)])
    ax.set_yscale("log")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("heatmap cells (exact count)")
    for i, c in enumerate(cells):
        ax.text(i, c, f"{c:,}", ha="center", va="bottom", fontsize=7)
    fig.tight_layout()
    path = os.path.join(_figdir(out_dir), name)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def fig_heatmap_slices(volume, out_dir, name="heatmap_slices.png", max_slices=8):
    """Montage of depth slices of one landmark's rendered volume."""
    volume = np.asarray(volume)
    if volume.ndim == 4:
        volume = volume[0]
    depth = volume.shape[0]
    picks = np.unique(np.linspace(0, depth - 1, min(max_slices, depth)).astype(int))
    fig, axes = plt.subplots(1, len(picks), figsize=(1.6 * len(picks), 2))
    if len(picks) == 1:
        axes = [axes]
    for ax, z in zip(axes, picks):
        ax.imshow(volume[z], origin="lower", cmap="magma", vmin=0.0, vmax=1.0)
        ax.set_title(f"z={z}", fontsize=7)
        ax.axis("off")
    fig.tight_layout()
    path = os.path.join(_figdir(out_dir), name)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
