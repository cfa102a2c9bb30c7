"""Node and interval losses and their weighted total."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .config import LossWeights
from .detector import DetectorOutputs
from .types import AnchorLabels, BatchGraph, LocIoUMode

IOU_FLOOR = 1e-6
COMPONENTS = ("node_conf", "node_cls", "interval_conf", "interval_cls", "interval_loc")


def node_conf_loss(conf_logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(conf_logits, targets.to(conf_logits.dtype))


def _foreground_ce(logits: torch.Tensor, labels: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    if not bool(mask.any()):
        return logits.sum() * 0.0
    return F.cross_entropy(logits[mask], labels[mask])


def node_cls_loss(cls_logits: torch.Tensor, node_class: torch.Tensor) -> torch.Tensor:
    """Cross-entropy over nodes with a class; zero when no node has one."""
    return _foreground_ce(cls_logits, node_class, node_class != -1)


def interval_conf_loss(conf_logits: torch.Tensor, conf_labels: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(conf_logits, conf_labels.to(conf_logits.dtype))


def interval_cls_loss(cls_logits: torch.Tensor, cls_labels: torch.Tensor, conf_labels: torch.Tensor) -> torch.Tensor:
    return _foreground_ce(cls_logits, cls_labels, conf_labels > 0)


def interval_iou(
    start: torch.Tensor,
    end: torch.Tensor,
    target_start: torch.Tensor,
    target_end: torch.Tensor,
    mode: LocIoUMode = LocIoUMode.UNION,
) -> torch.Tensor:
    intersection = torch.clamp(torch.minimum(end, target_end) - torch.maximum(start, target_start), min=0.0)
    if LocIoUMode(mode) is LocIoUMode.SPAN:
        denominator = torch.maximum(end, target_end) - torch.minimum(start, target_start)
    else:
        denominator = (end - start) + (target_end - target_start) - intersection
    return intersection / torch.clamp(denominator, min=IOU_FLOOR)


def interval_loc_loss(
    start: torch.Tensor,
    end: torch.Tensor,
    target_start: torch.Tensor,
    target_end: torch.Tensor,
    conf_labels: torch.Tensor,
    mode: LocIoUMode = LocIoUMode.UNION,
) -> torch.Tensor:
    """Mean ``-log IoU`` over foreground anchors, IoU clipped to ``[1e-6, 1]``."""
    mask = conf_labels > 0
    if not bool(mask.any()):
        return start.sum() * 0.0
    overlap = interval_iou(start[mask], end[mask], target_start[mask], target_end[mask], mode)
    return -torch.log(torch.clamp(overlap, min=IOU_FLOOR, max=1.0)).mean()


def total(components: Dict[str, torch.Tensor], weights: LossWeights) -> torch.Tensor:
    result = None
    for name in COMPONENTS:
        term = getattr(weights, name) * components[name]
        result = term if result is None else result + term
    return result


@dataclass
class LossReport:
    node_conf: float
    node_cls: float
    interval_conf: float
    interval_cls: float
    interval_loc: float
    total: float
    n_fg: int
    m_fg: int

    def as_row(self, step: int) -> Dict[str, float | int]:
        return {
            "step": step,
            "node_conf": self.node_conf,
            "node_cls": self.node_cls,
            "interval_conf": self.interval_conf,
            "interval_cls": self.interval_cls,
            "interval_loc": self.interval_loc,
            "total": self.total,
            "n_fg": self.n_fg,
            "m_fg": self.m_fg,
        }


def concat_labels(labels: Sequence[AnchorLabels]) -> AnchorLabels:
    return AnchorLabels(
        conf=np.concatenate([item.conf for item in labels]),
        cls=np.concatenate([item.cls for item in labels]),
        target_start=np.concatenate([item.target_start for item in labels]),
        target_end=np.concatenate([item.target_end for item in labels]),
    )


def compute_losses(
    outputs: DetectorOutputs,
    batch: BatchGraph,
    labels: Sequence[AnchorLabels],
    weights: LossWeights,
) -> tuple[torch.Tensor, LossReport]:
    """Weighted total loss for one batch plus a detached report of its parts."""
    nodes, intervals = outputs.nodes, outputs.intervals
    dtype, device = nodes.node_logits.dtype, nodes.node_logits.device
    anchor_labels = concat_labels(labels)

    node_conf = torch.as_tensor(batch.node_conf, dtype=dtype, device=device)
    node_class = torch.as_tensor(batch.node_class, dtype=torch.long, device=device)
    anchor_conf = torch.as_tensor(anchor_labels.conf, dtype=dtype, device=device)
    anchor_cls = torch.as_tensor(anchor_labels.cls, dtype=torch.long, device=device)
    target_start = torch.as_tensor(anchor_labels.target_start, dtype=dtype, device=device)
    target_end = torch.as_tensor(anchor_labels.target_end, dtype=dtype, device=device)

    components = {
        "node_conf": node_conf_loss(nodes.conf_logits, node_conf),
        "node_cls": node_cls_loss(nodes.cls_logits, node_class),
        "interval_conf": interval_conf_loss(intervals.conf_logit, anchor_conf),
        "interval_cls": interval_cls_loss(intervals.cls_logits, anchor_cls, anchor_conf),
        "interval_loc": interval_loc_loss(
            intervals.start, intervals.end, target_start, target_end, anchor_conf, weights.loc_iou_mode
        ),
    }
    loss = total(components, weights)
    report = LossReport(
        **{name: float(value.detach()) for name, value in components.items()},
        total=float(loss.detach()),
        n_fg=int((batch.node_class != -1).sum()),
        m_fg=int((anchor_labels.conf > 0).sum()),
    )
    return loss, report
