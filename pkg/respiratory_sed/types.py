"""Type definitions for respiratory sound event detection."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Tuple, TypedDict

try:
    from typing import NotRequired
except ImportError:  # Python < 3.11
    from typing_extensions import NotRequired

import numpy as np


class SpectrogramChannel(str, Enum):
    MEL = "mel"
    GAMMA = "gamma"
    CQT = "cqt"


class AugmentOp(str, Enum):
    NOISE = "noise"
    TIME_STRETCH = "time_stretch"
    VTLP = "vtlp"
    TIME_SHIFT = "time_shift"


class MaskAxis(str, Enum):
    TIME = "time"
    FREQUENCY = "frequency"


class HeadMode(str, Enum):
    INTEGRATED = "integrated"
    SEPARATE = "separate"


class EdgeAttrMode(str, Enum):
    COMPRESSED = "compressed"
    SEQUENTIAL = "sequential"


class LocIoUMode(str, Enum):
    UNION = "union"
    SPAN = "span"


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class ManifestEvent(TypedDict):
    onset_s: float
    offset_s: float
    label: str


class ManifestRecord(TypedDict):
    clip_id: str
    audio_path: str
    sample_rate: int
    duration_s: float
    events: List[ManifestEvent]
    position: str | None
    gender: str | None
    split: str


class EventRow(TypedDict):
    clip_id: str
    onset_s: float
    offset_s: float
    label: str
    score: NotRequired[float]


@dataclass(frozen=True)
class EventRecord:
    onset_s: float
    offset_s: float
    label: str
    score: float | None = None

    @property
    def duration_s(self) -> float:
        return self.offset_s - self.onset_s


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    events: List[EventRecord] = field(default_factory=list)
    position: str | None = None
    gender: str | None = None

    @property
    def duration_s(self) -> float:
        return len(self.samples) / float(self.sample_rate)


@dataclass
class SpectrogramStack:
    """Log spectrograms shaped (channels, bands, frames) on one shared frame grid."""

    values: np.ndarray
    frame_times: np.ndarray
    source_duration_s: float
    sample_rate: int
    hop_len: int
    channels: Tuple[SpectrogramChannel, ...]

    @property
    def n_frames(self) -> int:
        return int(self.values.shape[-1])


@dataclass
class ClipGraph:
    chunk_inputs: np.ndarray
    node_conf: np.ndarray
    node_class: np.ndarray
    edge_index: np.ndarray
    edge_label: np.ndarray
    node_time: np.ndarray
    meta_onehot: np.ndarray
    duration_s: float
    clip_id: str = ""

    @property
    def n_nodes(self) -> int:
        return int(self.node_conf.shape[0])


@dataclass
class BatchGraph:
    chunk_inputs: np.ndarray
    node_conf: np.ndarray
    node_class: np.ndarray
    edge_index: np.ndarray
    edge_label: np.ndarray
    node_time: np.ndarray
    meta_onehot: np.ndarray
    batch: np.ndarray
    ptr: np.ndarray
    durations: np.ndarray
    clip_ids: List[str]

    @property
    def n_clips(self) -> int:
        return len(self.clip_ids)

    def clip_slice(self, index: int) -> slice:
        return slice(int(self.ptr[index]), int(self.ptr[index + 1]))


@dataclass
class AnchorSet:
    """Multi-scale anchor intervals for one clip, scale-major order."""

    scale: np.ndarray
    index: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    duration_s: float

    @property
    def start(self) -> np.ndarray:
        return self.alpha * self.duration_s

    @property
    def end(self) -> np.ndarray:
        return self.beta * self.duration_s

    def __len__(self) -> int:
        return int(self.alpha.shape[0])


@dataclass
class AnchorLabels:
    conf: np.ndarray
    cls: np.ndarray
    target_start: np.ndarray
    target_end: np.ndarray

    @property
    def foreground(self) -> np.ndarray:
        return self.conf > 0


@dataclass
class IntervalArrays:
    """Detached per-anchor predictions for one clip."""

    start: np.ndarray
    end: np.ndarray
    conf_logit: np.ndarray
    cls_logits: np.ndarray
    scale: np.ndarray
    duration_s: float
