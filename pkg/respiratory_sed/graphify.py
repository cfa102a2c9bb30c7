"""Spectrogram-to-graph conversion and batch collation."""

from __future__ import annotations

import logging
from typing import Iterable, Sequence, Tuple

import numpy as np

from .types import BatchGraph, ClipGraph, EventRecord, SpectrogramStack

logger = logging.getLogger(__name__)


class GraphError(ValueError):
    """Raised when annotations cannot be mapped onto the graph."""


def frame_labels_from_events(
    events: Iterable[EventRecord],
    frame_times: np.ndarray,
    vocab: Sequence[str],
) -> np.ndarray:
    """Per-frame class index: 0 for normal, ``1 + vocab.index(label)`` inside an event.

    Events are painted in onset order, so a frame covered by two events
    (including the shared boundary of abutting events) keeps the later one.
    """
    labels = np.zeros(len(frame_times), dtype=np.int64)
    lookup = {name: index + 1 for index, name in enumerate(vocab)}
    for event in sorted(events, key=lambda item: item.onset_s):
        if event.label not in lookup:
            raise GraphError(f"Unknown event label {event.label!r}; expected one of {list(vocab)}")
        inside = (frame_times >= event.onset_s) & (frame_times <= event.offset_s)
        labels[inside] = lookup[event.label]
    return labels


def _pad_frames(frames: np.ndarray, group: int) -> np.ndarray:
    remainder = (-len(frames)) % group
    if remainder == 0:
        return frames
    return np.concatenate([frames, np.repeat(frames[-1:], remainder, axis=0)], axis=0)


def node_labels(frames: np.ndarray, group: int) -> Tuple[np.ndarray, np.ndarray]:
    """Soft confidence and majority abnormal class for every group of frames.

    Confidence is the abnormal fraction of the group. The class is the most
    frequent abnormal frame class, ties going to the class that appears
    first; it is ``-1`` for an all-normal group.
    """
    groups = _pad_frames(np.asarray(frames, dtype=np.int64), group).reshape(-1, group)
    conf = (groups > 0).sum(axis=1).astype(np.float32) / float(group)
    classes = np.full(len(groups), -1, dtype=np.int64)
    for row, values in enumerate(groups):
        abnormal = values[values > 0]
        if abnormal.size == 0:
            continue
        unique, first_seen, counts = np.unique(abnormal, return_index=True, return_counts=True)
        best = max(range(len(unique)), key=lambda i: (counts[i], -first_seen[i]))
        classes[row] = int(unique[best]) - 1
    return conf, classes


def chunk(stack: SpectrogramStack, group: int = 5) -> Tuple[np.ndarray, np.ndarray]:
    """Split the stack into non-overlapping frame groups, padding the last by repetition.

    Returns ``(chunk_inputs, node_time)`` with chunk_inputs shaped
    (n_nodes, channels, bands, group) and node_time the normalized group
    centers in [0, 1].
    """
    values = np.moveaxis(stack.values, -1, 0)
    padded = _pad_frames(values, group)
    n_nodes = padded.shape[0] // group
    chunks = padded.reshape(n_nodes, group, *values.shape[1:])
    chunk_inputs = np.ascontiguousarray(np.moveaxis(chunks, 1, -1))

    centers_s = (np.arange(1, n_nodes + 1) - 0.5) * group * stack.hop_len / float(stack.sample_rate)
    node_time = np.clip(centers_s / stack.source_duration_s, 0.0, 1.0).astype(np.float32)
    return chunk_inputs.astype(np.float32), node_time


def chain_edges(n_nodes: int) -> np.ndarray:
    if n_nodes < 2:
        return np.zeros((2, 0), dtype=np.int64)
    sources = np.arange(n_nodes - 1, dtype=np.int64)
    return np.stack([sources, sources + 1])


def edge_labels(node_class: np.ndarray) -> np.ndarray:
    node_class = np.asarray(node_class)
    if len(node_class) < 2:
        return np.zeros(0, dtype=np.int64)
    return ((node_class[:-1] != -1) | (node_class[1:] != -1)).astype(np.int64)


def meta_onehot(
    position: str | None,
    gender: str | None,
    positions: Sequence[str],
    genders: Sequence[str],
) -> np.ndarray:
    """``[position one-hot | gender one-hot]``; unknown tokens stay all-zero."""
    vector = np.zeros(len(positions) + len(genders), dtype=np.float32)
    if position in positions:
        vector[list(positions).index(position)] = 1.0
    if gender in genders:
        vector[len(positions) + list(genders).index(gender)] = 1.0
    return vector


def build_clip_graph(
    stack: SpectrogramStack,
    events: Iterable[EventRecord],
    vocab: Sequence[str],
    group: int = 5,
    meta: np.ndarray | None = None,
    clip_id: str = "",
) -> ClipGraph:
    chunk_inputs, node_time = chunk(stack, group)
    frames = frame_labels_from_events(events, stack.frame_times, vocab)
    node_conf, node_class = node_labels(frames, group)
    n_nodes = chunk_inputs.shape[0]
    meta_vector = np.zeros(0, dtype=np.float32) if meta is None else np.asarray(meta, dtype=np.float32)
    return ClipGraph(
        chunk_inputs=chunk_inputs,
        node_conf=node_conf,
        node_class=node_class,
        edge_index=chain_edges(n_nodes),
        edge_label=edge_labels(node_class),
        node_time=node_time,
        meta_onehot=np.tile(meta_vector, (n_nodes, 1)),
        duration_s=stack.source_duration_s,
        clip_id=clip_id,
    )


def collate(graphs: Sequence[ClipGraph]) -> BatchGraph:
    """Concatenate clip graphs; edge indices are shifted by cumulative node counts."""
    if not graphs:
        raise GraphError("Cannot collate an empty list of graphs.")
    counts = np.array([graph.n_nodes for graph in graphs], dtype=np.int64)
    ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    edge_index = np.concatenate(
        [graph.edge_index + ptr[index] for index, graph in enumerate(graphs)],
        axis=1,
    ).astype(np.int64)
    return BatchGraph(
        chunk_inputs=np.concatenate([graph.chunk_inputs for graph in graphs]),
        node_conf=np.concatenate([graph.node_conf for graph in graphs]),
        node_class=np.concatenate([graph.node_class for graph in graphs]),
        edge_index=edge_index,
        edge_label=np.concatenate([graph.edge_label for graph in graphs]),
        node_time=np.concatenate([graph.node_time for graph in graphs]),
        meta_onehot=np.concatenate([graph.meta_onehot for graph in graphs]),
        batch=np.repeat(np.arange(len(graphs), dtype=np.int64), counts),
        ptr=ptr,
        durations=np.array([graph.duration_s for graph in graphs], dtype=np.float64),
        clip_ids=[graph.clip_id for graph in graphs],
    )
