"""Figure rendering for experiment reports.

Every run directory gets PNGs next to the JSON/CSV output: a per-arm AUC
comparison and the blind-spot correction matrix. Agg only, no display.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_experiment_figures(report, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "fig_auc": _auc_by_arm(report, out / "auc_by_arm.png"),
        "fig_blind_spot": _blind_spot_heatmap(report, out / "blind_spot_matrix.png"),
    }
    return paths


def _auc_by_arm(report, path: Path) -> Path:
    labels = list(report.base_metrics)
    arm_names = list(report.arms)
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / (len(arm_names) + 1)
    positions = np.arange(len(labels))

    base_values = [report.base_metrics[label]["auc"] for label in labels]
    ax.bar(positions, base_values, width, label="base (pretrained)", color="#b0b0b0")
    for k, arm in enumerate(arm_names, start=1):
        outcome = report.arms[arm]
        values = [
            float(np.mean([per_label[label]["auc"] for per_label in outcome.per_node.values()]))
            for label in labels
        ]
        ax.bar(positions + k * width, values, width, label=arm)

    ax.set_xticks(positions + 0.4 - width / 2)
    ax.set_xticklabels(labels)
    ax.set_ylabel("mean AUC over nodes")
    ax.set_ylim(0.5, 1.02)
    ax.set_title("Held-out AUC by arm")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def _blind_spot_heatmap(report, path: Path) -> Path:
    from .sim import blind_spot_matrix

    matrix = blind_spot_matrix(report)
    users = list(matrix)
    labels = list(next(iter(matrix.values())))
    emitted = np.array([[matrix[u][l]["emitted"] for l in labels] for u in users], dtype=float)

    fig, ax = plt.subplots(figsize=(6, 3.5))
    image = ax.imshow(emitted, cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(labels)), labels)
    ax.set_yticks(range(len(users)), users)
    for i, user in enumerate(users):
        for j, label in enumerate(labels):
            cell = matrix[user][label]
            ax.text(
                j, i, f"{cell['emitted']}/{cell['emitted'] + cell['suppressed']}",
                ha="center", va="center",
                color="white" if emitted[i, j] < emitted.max() / 2 else "black",
                fontsize=8,
            )
    ax.set_title("Corrections emitted / warranted per node and label")
    fig.colorbar(image, ax=ax, label="emitted")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
