"""Anchor refinement from local node context."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.rnn import pack_sequence

from .config import RefinerConfig
from .types import AnchorSet, HeadMode, IntervalArrays

logger = logging.getLogger(__name__)


def gaussian_kernel(size: int, sigma: float) -> torch.Tensor:
    offsets = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    kernel = torch.exp(-0.5 * (offsets / sigma) ** 2)
    return (kernel / kernel.sum()).to(torch.float32)


class ScoreSmoother(nn.Module):
    """Depthwise Gaussian-initialized convolution over the node axis of each clip."""

    def __init__(self, channels: int, kernel_size: int = 5, sigma: float = 1.0) -> None:
        super().__init__()
        self.conv = nn.Conv1d(
            channels,
            channels,
            kernel_size,
            padding=kernel_size // 2,
            padding_mode="replicate",
            groups=channels,
            bias=False,
        )
        with torch.no_grad():
            self.conv.weight.copy_(gaussian_kernel(kernel_size, sigma).expand(channels, 1, kernel_size))

    def forward(self, node_logits: torch.Tensor, ptr: Sequence[int]) -> torch.Tensor:
        smoothed = []
        for first, last in zip(ptr[:-1], ptr[1:]):
            clip = node_logits[int(first):int(last)].transpose(0, 1).unsqueeze(0)
            smoothed.append(self.conv(clip).squeeze(0).transpose(0, 1))
        return torch.cat(smoothed, dim=0)


def smooth_scores(smoother: ScoreSmoother, node_logits: torch.Tensor, ptr: Sequence[int]) -> torch.Tensor:
    """Anomaly score per node: sigmoid of the smoothed confidence channel."""
    return torch.sigmoid(smoother(node_logits, ptr)[:, 0])


def select_nodes(alpha: float, beta: float, node_time: np.ndarray) -> np.ndarray:
    """Indices of nodes whose normalized time lies in ``[alpha, beta]``.

    An anchor that covers no node center falls back to the node nearest to
    the anchor center.
    """
    inside = np.flatnonzero((node_time >= alpha) & (node_time <= beta))
    if inside.size:
        return inside
    center = 0.5 * (alpha + beta)
    return np.array([int(np.argmin(np.abs(node_time - center)))], dtype=np.int64)


def soft_offset(logits: torch.Tensor, centers: torch.Tensor) -> torch.Tensor:
    """Expected bin center under ``softmax(logits)``."""
    return torch.softmax(logits, dim=-1) @ centers


def refine(
    start: torch.Tensor,
    end: torch.Tensor,
    delta_start: torch.Tensor,
    delta_end: torch.Tensor,
    duration_s: torch.Tensor,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Shift anchor endpoints, clamp to ``[0, L]`` and collapse inverted intervals to their midpoint."""
    zero = torch.zeros_like(start)
    new_start = torch.minimum(torch.maximum(start + delta_start, zero), duration_s)
    new_end = torch.minimum(torch.maximum(end + delta_end, zero), duration_s)
    inverted = new_end < new_start
    middle = 0.5 * (new_start + new_end)
    return torch.where(inverted, middle, new_start), torch.where(inverted, middle, new_end)


@dataclass
class HeadOutputs:
    start_logits: torch.Tensor
    end_logits: torch.Tensor
    conf_logit: torch.Tensor
    cls_logits: torch.Tensor


def _mlp(in_features: int, hidden: int, out_features: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(in_features, hidden), nn.ReLU(), nn.Linear(hidden, out_features))


class ScaleHead(nn.Module):
    """Per-scale encoders, prediction head and learnable offset bins."""

    def __init__(self, d_node: int, n_classes: int, n_bins: int, cfg: RefinerConfig) -> None:
        super().__init__()
        self.n_bins = n_bins
        self.n_classes = n_classes
        self.mode = HeadMode(cfg.head_mode)
        self.feature_rnn = nn.GRU(d_node, d_node, batch_first=True)
        self.score_rnn = nn.GRU(1, 1, batch_first=True)
        width = d_node + 3
        if self.mode is HeadMode.INTEGRATED:
            self.head = _mlp(width, cfg.hidden, 2 * n_bins + 1 + n_classes)
        else:
            self.offset_head = _mlp(width, cfg.hidden, 2 * n_bins)
            self.score_head = _mlp(width, cfg.hidden, 1 + n_classes)
        self.bin_centers = nn.Parameter(torch.linspace(-cfg.offset_range, cfg.offset_range, n_bins))

    def encode_local(
        self, features: List[torch.Tensor], scores: List[torch.Tensor]
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Final hidden states ``(h, a)`` for each selected node sequence."""
        _, feature_hidden = self.feature_rnn(pack_sequence(features, enforce_sorted=False))
        _, score_hidden = self.score_rnn(pack_sequence([s.unsqueeze(-1) for s in scores], enforce_sorted=False))
        return feature_hidden[-1], score_hidden[-1]

    def predict(self, shared: torch.Tensor) -> HeadOutputs:
        bins = self.n_bins
        if self.mode is HeadMode.INTEGRATED:
            raw = self.head(shared)
            offsets, scores = raw[:, : 2 * bins], raw[:, 2 * bins :]
        else:
            offsets, scores = self.offset_head(shared), self.score_head(shared)
        return HeadOutputs(
            start_logits=offsets[:, :bins],
            end_logits=offsets[:, bins:],
            conf_logit=scores[:, 0],
            cls_logits=scores[:, 1:],
        )


@dataclass
class IntervalPrediction:
    """Refined anchors of a batch, clip-major and scale-major within a clip."""

    start: torch.Tensor
    end: torch.Tensor
    conf_logit: torch.Tensor
    cls_logits: torch.Tensor
    scale: np.ndarray
    anchor_ptr: np.ndarray
    durations: np.ndarray

    def to_arrays(self, clip: int) -> IntervalArrays:
        rows = slice(int(self.anchor_ptr[clip]), int(self.anchor_ptr[clip + 1]))
        return IntervalArrays(
            start=self.start[rows].detach().cpu().double().numpy(),
            end=self.end[rows].detach().cpu().double().numpy(),
            conf_logit=self.conf_logit[rows].detach().cpu().double().numpy(),
            cls_logits=self.cls_logits[rows].detach().cpu().double().numpy(),
            scale=self.scale[rows].copy(),
            duration_s=float(self.durations[clip]),
        )


class AnchorRefiner(nn.Module):
    def __init__(self, d_node: int, n_classes: int, n_node_channels: int, cfg: RefinerConfig) -> None:
        super().__init__()
        self.smoother = ScoreSmoother(n_node_channels, cfg.smooth_kernel, cfg.smooth_sigma)
        self.scales = nn.ModuleList(ScaleHead(d_node, n_classes, bins, cfg) for bins in cfg.bins_per_scale)

    def forward(
        self,
        encoded: torch.Tensor,
        node_logits: torch.Tensor,
        node_time: np.ndarray,
        ptr: np.ndarray,
        anchors: Sequence[AnchorSet],
    ) -> IntervalPrediction:
        scores = smooth_scores(self.smoother, node_logits, ptr)
        counts = np.array([len(anchor_set) for anchor_set in anchors], dtype=np.int64)
        anchor_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        scale_of = np.concatenate([anchor_set.scale for anchor_set in anchors])

        parts: List[Tuple[np.ndarray, torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]] = []
        for k, head in enumerate(self.scales):
            rows, features, node_scores, shapes, bounds = [], [], [], [], []
            for clip, anchor_set in enumerate(anchors):
                first, last = int(ptr[clip]), int(ptr[clip + 1])
                times = node_time[first:last]
                for local in np.flatnonzero(anchor_set.scale == k):
                    alpha, beta = float(anchor_set.alpha[local]), float(anchor_set.beta[local])
                    picked = torch.as_tensor(first + select_nodes(alpha, beta, times), device=encoded.device)
                    rows.append(anchor_ptr[clip] + local)
                    features.append(encoded[picked])
                    node_scores.append(scores[picked])
                    shapes.append((0.5 * (alpha + beta), beta - alpha))
                    duration = anchor_set.duration_s
                    bounds.append((alpha * duration, beta * duration, duration))
            if not rows:
                continue
            hidden, summary = head.encode_local(features, node_scores)
            geometry = torch.as_tensor(shapes, dtype=encoded.dtype, device=encoded.device)
            outputs = head.predict(torch.cat([hidden, summary, geometry], dim=-1))
            limits = torch.as_tensor(bounds, dtype=encoded.dtype, device=encoded.device)
            centers = head.bin_centers.to(encoded.dtype)
            start, end = refine(
                limits[:, 0],
                limits[:, 1],
                soft_offset(outputs.start_logits, centers),
                soft_offset(outputs.end_logits, centers),
                limits[:, 2],
            )
            parts.append((np.asarray(rows, dtype=np.int64), start, end, outputs.conf_logit, outputs.cls_logits))

        order = torch.as_tensor(np.argsort(np.concatenate([part[0] for part in parts]), kind="stable"), device=encoded.device)
        return IntervalPrediction(
            start=torch.cat([part[1] for part in parts])[order],
            end=torch.cat([part[2] for part in parts])[order],
            conf_logit=torch.cat([part[3] for part in parts])[order],
            cls_logits=torch.cat([part[4] for part in parts])[order],
            scale=scale_of,
            anchor_ptr=anchor_ptr,
            durations=np.array([anchor_set.duration_s for anchor_set in anchors], dtype=np.float64),
        )
