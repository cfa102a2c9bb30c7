"""End-to-end detector: graph trunk followed by the anchor refiner."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn

from .config import Settings
from .model import GraphTrunk, NodeOutputs
from .refiner import AnchorRefiner, IntervalPrediction
from .types import AnchorSet, BatchGraph

logger = logging.getLogger(__name__)


@dataclass
class DetectorOutputs:
    nodes: NodeOutputs
    intervals: IntervalPrediction


class EventGraphDetector(nn.Module):
    def __init__(self, settings: Settings) -> None:
        super().__init__()
        feats = settings.features
        dataset = settings.dataset
        self.use_meta = settings.model.use_meta
        meta_dim = len(dataset.positions) + len(dataset.genders) if self.use_meta else 0
        self.trunk = GraphTrunk(
            in_channels=len(feats.channels),
            n_bands=feats.n_bands,
            n_frames=feats.frames_per_node,
            n_classes=settings.n_classes,
            cfg=settings.model,
            meta_dim=meta_dim,
        )
        self.refiner = AnchorRefiner(
            d_node=settings.model.d_node,
            n_classes=settings.n_classes,
            n_node_channels=1 + settings.n_classes,
            cfg=settings.refiner,
        )

    def forward(self, batch: BatchGraph, anchors: Sequence[AnchorSet]) -> DetectorOutputs:
        reference = next(self.parameters())
        dtype, device = reference.dtype, reference.device
        chunks = torch.as_tensor(batch.chunk_inputs, dtype=dtype, device=device)
        edge_index = torch.as_tensor(batch.edge_index, dtype=torch.long, device=device)
        node_time = torch.as_tensor(batch.node_time, dtype=dtype, device=device)
        meta = torch.as_tensor(batch.meta_onehot, dtype=dtype, device=device) if self.use_meta else None

        nodes = self.trunk(chunks, edge_index, node_time, meta)
        intervals = self.refiner(nodes.encoded, nodes.node_logits, batch.node_time, batch.ptr, anchors)
        return DetectorOutputs(nodes=nodes, intervals=intervals)


def build_model(settings: Settings) -> EventGraphDetector:
    model = EventGraphDetector(settings)
    logger.info(
        "Built detector: %d parameters (%s head, %s edges).",
        sum(parameter.numel() for parameter in model.parameters()),
        settings.refiner.head_mode.value,
        settings.model.edge_attr_mode.value,
    )
    return model
