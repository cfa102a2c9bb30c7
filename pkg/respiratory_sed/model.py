"""Graph trunk: dynamic-convolution node generator, edge-aware attention and node head."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Tuple

import torch
import torch.nn.functional as F
from torch import nn
from torch_geometric.nn import GATConv

from .config import ConfigError, ModelConfig
from .types import EdgeAttrMode

logger = logging.getLogger(__name__)

FREQ_POOL = 4
OMEGA_MAX = 10.0


class DynamicConv2d(nn.Module):
    """Convolution whose output mixes ``n_basis`` kernels with per-(sample, frame) softmax weights.

    Kernel attention pools over frequency only, so the mixture can change
    from one frame of a chunk to the next.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, n_basis: int = 4) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.n_basis = n_basis
        self.attention = nn.Conv2d(in_channels, n_basis, kernel_size=1)
        self.basis = nn.Conv2d(in_channels, n_basis * out_channels, kernel_size, padding=kernel_size // 2)

    def kernel_attention(self, x: torch.Tensor) -> torch.Tensor:
        """Softmax weights shaped (B, n_basis, 1, T, 1)."""
        pooled = x.mean(dim=-1, keepdim=True)
        return torch.softmax(self.attention(pooled), dim=1).unsqueeze(2)

    def forward(self, x: torch.Tensor, attention: torch.Tensor | None = None) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ValueError(
                f"DynamicConv2d expects (B, {self.in_channels}, T, F) input, got {tuple(x.shape)}"
            )
        batch, _, frames, bands = x.shape
        responses = self.basis(x).view(batch, self.n_basis, self.out_channels, frames, bands)
        weights = self.kernel_attention(x) if attention is None else attention
        return (weights * responses).sum(dim=1)


class NodeGenerator(nn.Module):
    """Map each (C, bands, frames) chunk to a ``d_node`` embedding."""

    def __init__(self, in_channels: int, n_bands: int, n_frames: int, cfg: ModelConfig, meta_dim: int = 0) -> None:
        super().__init__()
        blocks = []
        channels = in_channels
        bands = n_bands
        for out_channels in cfg.conv_channels:
            bands //= FREQ_POOL
            if bands < 1:
                raise ConfigError(
                    f"{n_bands} frequency bands cannot survive {len(cfg.conv_channels)} pooling steps of {FREQ_POOL}"
                )
            blocks.append(
                nn.ModuleDict(
                    {
                        "conv": DynamicConv2d(channels, out_channels, cfg.kernel_size, cfg.n_basis),
                        "norm": nn.BatchNorm2d(out_channels),
                    }
                )
            )
            channels = out_channels
        self.blocks = nn.ModuleList(blocks)
        self.pool = nn.AvgPool2d(kernel_size=(1, FREQ_POOL))
        self.meta_dim = meta_dim
        self.flat_dim = channels * n_frames * bands
        self.project = nn.Linear(self.flat_dim + meta_dim, cfg.d_node)
        self.norm = nn.LayerNorm(cfg.d_node)

    def forward(self, chunks: torch.Tensor, meta: torch.Tensor | None = None) -> torch.Tensor:
        x = chunks.transpose(-1, -2)
        for block in self.blocks:
            x = self.pool(F.relu(block["norm"](block["conv"](x))))
        x = x.flatten(start_dim=1)
        if self.meta_dim:
            x = torch.cat([x, meta], dim=-1)
        return F.relu(self.norm(self.project(x)))


class EdgeFeatureEncoder(nn.Module):
    """Edge attribute from the ordered pair ``(h_src, h_dst)`` of each directed edge."""

    def __init__(self, d_node: int, edge_dim: int = 12, mode: EdgeAttrMode = EdgeAttrMode.COMPRESSED) -> None:
        super().__init__()
        self.mode = EdgeAttrMode(mode)
        self.edge_dim = edge_dim
        if self.mode is EdgeAttrMode.COMPRESSED:
            self.project = nn.Linear(2 * d_node, edge_dim)
        else:
            self.recurrent = nn.GRU(d_node, edge_dim, batch_first=True)

    def forward(self, embeddings: torch.Tensor, edge_index: torch.Tensor) -> torch.Tensor:
        source = embeddings[edge_index[0]]
        target = embeddings[edge_index[1]]
        if self.mode is EdgeAttrMode.COMPRESSED:
            return F.relu(self.project(torch.cat([source, target], dim=-1)))
        if source.shape[0] == 0:
            return embeddings.new_zeros((0, self.edge_dim))
        _, hidden = self.recurrent(torch.stack([source, target], dim=1))
        return hidden[-1]


class EdgeGAT(nn.Module):
    """Two single-head attention layers with edge attributes; every node attends to itself too."""

    def __init__(self, d_node: int, edge_dim: int = 12, negative_slope: float = 0.2) -> None:
        super().__init__()
        self.conv1 = GATConv(
            d_node,
            d_node,
            heads=1,
            edge_dim=edge_dim,
            negative_slope=negative_slope,
            add_self_loops=True,
            fill_value="mean",
        )
        self.conv2 = GATConv(
            d_node,
            d_node,
            heads=1,
            edge_dim=edge_dim,
            negative_slope=negative_slope,
            add_self_loops=True,
            fill_value="mean",
        )

    def forward(
        self,
        x: torch.Tensor,
        edge_index: torch.Tensor,
        edge_attr: torch.Tensor,
        return_attention: bool = False,
    ):
        if return_attention:
            hidden, first = self.conv1(x, edge_index, edge_attr=edge_attr, return_attention_weights=True)
            hidden = F.elu(hidden)
            out, second = self.conv2(hidden, edge_index, edge_attr=edge_attr, return_attention_weights=True)
            return F.relu(out), (first, second)
        hidden = F.elu(self.conv1(x, edge_index, edge_attr=edge_attr))
        return F.relu(self.conv2(hidden, edge_index, edge_attr=edge_attr))


def temporal_encode(embeddings: torch.Tensor, node_time: torch.Tensor, gamma: float) -> torch.Tensor:
    """Add ``gamma * sin(t * omega)`` with ``omega`` spread linearly over [0, 10]."""
    width = embeddings.shape[-1]
    if width < 2:
        raise ConfigError("Temporal encoding needs an embedding width of at least 2.")
    omega = torch.linspace(0.0, OMEGA_MAX, width, dtype=embeddings.dtype, device=embeddings.device)
    return embeddings + gamma * torch.sin(node_time.unsqueeze(-1).to(embeddings.dtype) * omega)


class NodeHead(nn.Module):
    """Column 0 is the node confidence logit; columns 1..C are abnormal-class logits."""

    def __init__(self, d_node: int, n_classes: int) -> None:
        super().__init__()
        self.linear = nn.Linear(d_node, 1 + n_classes)

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        return self.linear(embeddings)


@dataclass
class NodeOutputs:
    embeddings: torch.Tensor
    node_logits: torch.Tensor
    encoded: torch.Tensor

    @property
    def conf_logits(self) -> torch.Tensor:
        return self.node_logits[:, 0]

    @property
    def cls_logits(self) -> torch.Tensor:
        return self.node_logits[:, 1:]


class GraphTrunk(nn.Module):
    def __init__(
        self,
        in_channels: int,
        n_bands: int,
        n_frames: int,
        n_classes: int,
        cfg: ModelConfig,
        meta_dim: int = 0,
    ) -> None:
        super().__init__()
        self.time_scale = cfg.time_scale
        self.generator = NodeGenerator(in_channels, n_bands, n_frames, cfg, meta_dim=meta_dim)
        self.edges = EdgeFeatureEncoder(cfg.d_node, cfg.edge_dim, cfg.edge_attr_mode)
        self.gat = EdgeGAT(cfg.d_node, cfg.edge_dim, cfg.leaky_slope)
        self.head = NodeHead(cfg.d_node, n_classes)

    def forward(
        self,
        chunks: torch.Tensor,
        edge_index: torch.Tensor,
        node_time: torch.Tensor,
        meta: torch.Tensor | None = None,
    ) -> NodeOutputs:
        nodes = self.generator(chunks, meta)
        edge_attr = self.edges(nodes, edge_index)
        updated = self.gat(nodes, edge_index, edge_attr)
        return NodeOutputs(
            embeddings=updated,
            node_logits=self.head(updated),
            encoded=temporal_encode(updated, node_time, self.time_scale),
        )

    def attention_weights(
        self, chunks: torch.Tensor, edge_index: torch.Tensor, meta: torch.Tensor | None = None
    ) -> Tuple[Tuple[torch.Tensor, torch.Tensor], Tuple[torch.Tensor, torch.Tensor]]:
        """Per-layer ``(edge_index_with_self_loops, alpha)`` pairs."""
        nodes = self.generator(chunks, meta)
        _, weights = self.gat(nodes, edge_index, self.edges(nodes, edge_index), return_attention=True)
        return weights
