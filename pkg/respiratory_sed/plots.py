"""Static figures: event duration distributions and training loss curves."""

from __future__ import annotations

import logging
import os
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .objective import COMPONENTS
from .storage import read_csv_rows
from .types import ManifestRecord

logger = logging.getLogger(__name__)

DURATION_EDGES = (0.5, 0.75, 1.0, 1.25)

_STYLE = {
    "axes.labelsize": 10,
    "font.size": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def duration_bins(durations: Sequence[float], edges: Sequence[float] = DURATION_EDGES) -> np.ndarray:
    """Fraction of events in each bin ``[0, e1), [e1, e2), ..., [e_last, inf)``."""
    bounds = np.concatenate([[0.0], np.asarray(edges, dtype=np.float64), [np.inf]])
    counts, _ = np.histogram(np.asarray(durations, dtype=np.float64), bins=bounds)
    total = counts.sum()
    return counts / total if total else counts.astype(np.float64)


def bin_labels(edges: Sequence[float] = DURATION_EDGES) -> List[str]:
    labels = [f"<{edges[0]:g}"]
    labels += [f"{low:g}-{high:g}" for low, high in zip(edges[:-1], edges[1:])]
    labels.append(f">={edges[-1]:g}")
    return labels


def plot_duration_histograms(
    records: Sequence[ManifestRecord],
    classes: Sequence[str],
    out_dir: str,
    edges: Sequence[float] = DURATION_EDGES,
) -> List[str]:
    """One bar chart per class of the share of events per duration bin, split by manifest split."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    splits = sorted({record["split"] for record in records})
    with plt.rc_context(_STYLE):
        for label in classes:
            durations: Dict[str, List[float]] = {split: [] for split in splits}
            for record in records:
                durations[record["split"]].extend(
                    event["offset_s"] - event["onset_s"] for event in record["events"] if event["label"] == label
                )
            figure, axis = plt.subplots(figsize=(4.5, 3.0))
            positions = np.arange(len(edges) + 1)
            width = 0.8 / max(1, len(splits))
            for offset, split in enumerate(splits):
                axis.bar(positions + offset * width, duration_bins(durations[split], edges), width, label=f"{split} (n={len(durations[split])})")
            axis.set_xticks(positions + width * (len(splits) - 1) / 2)
            axis.set_xticklabels(bin_labels(edges))
            axis.set_xlabel("duration (s)")
            axis.set_ylabel("share of events")
            axis.set_title(label)
            axis.legend()
            figure.tight_layout()
            path = os.path.join(out_dir, f"durations_{label.replace(' ', '_')}.png")
            figure.savefig(path)
            plt.close(figure)
            paths.append(path)
    logger.info("Wrote %d duration histograms to %s.", len(paths), out_dir)
    return paths


def plot_loss_curves(loss_csv: str, out_path: str) -> str:
    rows = read_csv_rows(loss_csv)
    steps = [int(row["step"]) for row in rows]
    with plt.rc_context(_STYLE):
        figure, axis = plt.subplots(figsize=(6.0, 3.5))
        for name in (*COMPONENTS, "total"):
            axis.plot(steps, [float(row[name]) for row in rows], label=name, linewidth=1.8 if name == "total" else 1.0)
        axis.set_xlabel("step")
        axis.set_ylabel("loss")
        axis.legend(ncol=2)
        figure.tight_layout()
        os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
        figure.savefig(out_path)
        plt.close(figure)
    return out_path
