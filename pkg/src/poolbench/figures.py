"""Figure rendering for the report stage.

Renders the verification results (EER / minDCF per system, fusions
included) as grouped bars and the probe accuracy matrix as an annotated
task-by-pooling grid, saved as PNG files next to the delimited tables.
Uses the Agg backend so it works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_RC = {
    "figure.dpi": 110,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "poolbench",
}


def _new_axes(width: float, height: float):
    plt.rcParams.update(_RC)
    fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def save_results_figure(rows, path) -> None:
    """Grouped bars of EER (%) and minDCF per system.

    ``rows`` are dicts with keys ``system``, ``eer``, ``min_dcf``.
    """
    names = [r["system"] for r in rows]
    eers = [100.0 * r["eer"] for r in rows]
    dcfs = [r["min_dcf"] for r in rows]
    fig, ax = _new_axes(max(6.0, 1.1 * len(names)), 3.6)
    pos = range(len(names))
    ax.bar([p - 0.2 for p in pos], eers, width=0.4, label="EER (%)", color="#3465a4")
    ax.set_ylabel("EER (%)")
    ax.set_xticks(list(pos))
    ax.set_xticklabels(names, rotation=30, ha="right")
    twin = ax.twinx()
    twin.bar([p + 0.2 for p in pos], dcfs, width=0.4, label="minDCF", color="#cc6600")
    twin.set_ylabel("minDCF")
    twin.grid(False)
    ax.set_title("Verification performance by pooling system")
    handles = ax.get_legend_handles_labels()[0] + twin.get_legend_handles_labels()[0]
    labels = ax.get_legend_handles_labels()[1] + twin.get_legend_handles_labels()[1]
    ax.legend(handles, labels, loc="upper left")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_probe_grid(reports, path) -> None:
    """Annotated accuracy grid, probing tasks x pooling systems."""
    tasks = []
    systems = []
    for r in reports:
        if r.task not in tasks:
            tasks.append(r.task)
        if r.pooling not in systems:
            systems.append(r.pooling)
    grid = [[float("nan")] * len(systems) for _ in tasks]
    for r in reports:
        grid[tasks.index(r.task)][systems.index(r.pooling)] = r.accuracy
    fig, ax = _new_axes(max(5.0, 1.2 * len(systems)), max(3.0, 0.6 * len(tasks) + 1.2))
    ax.grid(False)
    im = ax.imshow(grid, vmin=0.0, vmax=1.0, cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(systems)))
    ax.set_xticklabels(systems, rotation=30, ha="right")
    ax.set_yticks(range(len(tasks)))
    ax.set_yticklabels(tasks)
    for i in range(len(tasks)):
        for j in range(len(systems)):
            val = grid[i][j]
            if val == val:
                ax.text(j, i, f"{val:.2f}", ha="center", va="center",
                        color="white" if val < 0.6 else "black", fontsize=8)
    ax.set_title("Probe accuracy by task and pooling")
    fig.colorbar(im, ax=ax, label="accuracy")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
