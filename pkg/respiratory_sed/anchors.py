"""Multi-scale anchor intervals and IoU-based label assignment."""

from __future__ import annotations

import logging
import math
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .config import AnchorConfig
from .types import AnchorLabels, AnchorSet

logger = logging.getLogger(__name__)

IOU_EPS = 1e-6

TruthEvent = Tuple[Tuple[float, float], int]


class AnchorError(ValueError):
    """Raised for anchor geometry that cannot exist."""


def anchors_per_scale(cfg: AnchorConfig) -> List[int]:
    return [int(math.floor(cfg.base_count * weight + 1e-9)) for weight in cfg.density]


def generate(duration_s: float, cfg: AnchorConfig) -> AnchorSet:
    """Lay ``floor(base_count * density_k)`` evenly centered anchors of width ``d_k`` per scale."""
    if not duration_s > 0:
        raise AnchorError(f"Clip duration must be positive, got {duration_s}")

    scales, indices, alphas, betas = [], [], [], []
    for scale, (width_s, count) in enumerate(zip(cfg.durations, anchors_per_scale(cfg))):
        half = 0.5 * width_s / duration_s
        centers = (np.arange(count, dtype=np.float64) + 0.5) / count
        alphas.append(np.clip(centers - half, 0.0, 1.0))
        betas.append(np.clip(centers + half, 0.0, 1.0))
        scales.append(np.full(count, scale, dtype=np.int64))
        indices.append(np.arange(count, dtype=np.int64))

    return AnchorSet(
        scale=np.concatenate(scales),
        index=np.concatenate(indices),
        alpha=np.concatenate(alphas),
        beta=np.concatenate(betas),
        duration_s=float(duration_s),
    )


def iou(a: Tuple[float, float], g: Tuple[float, float]) -> float:
    intersection = max(0.0, min(a[1], g[1]) - max(a[0], g[0]))
    union = (a[1] - a[0]) + (g[1] - g[0]) - intersection
    return intersection / (union + IOU_EPS)


def iou_matrix(
    starts: np.ndarray,
    ends: np.ndarray,
    truth_starts: np.ndarray,
    truth_ends: np.ndarray,
) -> np.ndarray:
    """IoU of every anchor (rows) against every truth interval (columns)."""
    starts = np.asarray(starts, dtype=np.float64)[:, None]
    ends = np.asarray(ends, dtype=np.float64)[:, None]
    truth_starts = np.asarray(truth_starts, dtype=np.float64)[None, :]
    truth_ends = np.asarray(truth_ends, dtype=np.float64)[None, :]
    intersection = np.maximum(np.minimum(ends, truth_ends) - np.maximum(starts, truth_starts), 0.0)
    union = (ends - starts) + (truth_ends - truth_starts) - intersection
    return intersection / (union + IOU_EPS)


def assign(anchors: AnchorSet, truth: Sequence[TruthEvent], iou_threshold: float) -> AnchorLabels:
    """Label each anchor with its best-overlapping truth event.

    Anchors whose best IoU reaches ``iou_threshold`` take that IoU as a soft
    confidence, the event's class and the event's interval as regression
    target; the rest are background ``(0, -1, (0, 0))``. Ties between
    truth events go to the lowest event index.
    """
    n_anchors = len(anchors)
    conf = np.zeros(n_anchors, dtype=np.float64)
    cls = np.full(n_anchors, -1, dtype=np.int64)
    target_start = np.zeros(n_anchors, dtype=np.float64)
    target_end = np.zeros(n_anchors, dtype=np.float64)
    if not truth or n_anchors == 0:
        return AnchorLabels(conf=conf, cls=cls, target_start=target_start, target_end=target_end)

    truth_starts = np.array([interval[0] for interval, _ in truth], dtype=np.float64)
    truth_ends = np.array([interval[1] for interval, _ in truth], dtype=np.float64)
    truth_classes = np.array([label for _, label in truth], dtype=np.int64)

    overlaps = iou_matrix(anchors.start, anchors.end, truth_starts, truth_ends)
    best = np.argmax(overlaps, axis=1)
    best_iou = overlaps[np.arange(n_anchors), best]
    foreground = best_iou >= iou_threshold

    conf[foreground] = best_iou[foreground]
    cls[foreground] = truth_classes[best[foreground]]
    target_start[foreground] = truth_starts[best[foreground]]
    target_end[foreground] = truth_ends[best[foreground]]
    return AnchorLabels(conf=conf, cls=cls, target_start=target_start, target_end=target_end)


def anchor_dump_rows(anchors: AnchorSet, labels: AnchorLabels) -> Iterable[str]:
    """Tab-separated ``k i t_s t_e conf cls tau_s tau_e`` rows for debugging the assignment."""
    starts, ends = anchors.start, anchors.end
    for row in range(len(anchors)):
        yield "\t".join(
            [
                str(int(anchors.scale[row])),
                str(int(anchors.index[row])),
                f"{starts[row]:.4f}",
                f"{ends[row]:.4f}",
                f"{labels.conf[row]:.6f}",
                str(int(labels.cls[row])),
                f"{labels.target_start[row]:.4f}",
                f"{labels.target_end[row]:.4f}",
            ]
        )
