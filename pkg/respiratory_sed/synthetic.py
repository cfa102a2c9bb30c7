"""Synthetic clips with band-limited bursts, for smoke tests and overfit checks."""

from __future__ import annotations

import logging
import os
from typing import Dict, List, Sequence, Tuple

import numpy as np
import soundfile as sf
from scipy.signal import butter, sosfiltfilt

from .storage import write_manifest
from .types import ManifestRecord, Split

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
DEFAULT_BANDS: Dict[str, Tuple[float, float]] = {
    "wheeze": (300.0, 600.0),
    "crackle": (1500.0, 2500.0),
}


def _band_noise(rng: np.random.Generator, n_samples: int, band: Tuple[float, float], sample_rate: int) -> np.ndarray:
    sos = butter(4, band, btype="bandpass", fs=sample_rate, output="sos")
    burst = sosfiltfilt(sos, rng.standard_normal(n_samples + 256))[128:-128]
    return burst / (np.max(np.abs(burst)) + 1e-12)


def _layout(rng: np.random.Generator, duration_s: float, count: int, length_range: Tuple[float, float]) -> List[Tuple[float, float]]:
    """Non-overlapping burst intervals spread over evenly sized slots."""
    slot = duration_s / count
    intervals = []
    for index in range(count):
        length = float(rng.uniform(*length_range))
        length = min(length, 0.8 * slot)
        onset = index * slot + float(rng.uniform(0.1 * slot, slot - length - 0.05 * slot))
        intervals.append((round(onset, 3), round(onset + length, 3)))
    return intervals


def generate_clip(
    rng: np.random.Generator,
    duration_s: float,
    sample_rate: int,
    bands: Dict[str, Tuple[float, float]],
    bursts_per_clip: int = 3,
    length_range: Tuple[float, float] = (0.6, 1.4),
    noise_level: float = 0.01,
) -> Tuple[np.ndarray, List[Tuple[float, float, str]]]:
    n_samples = int(round(duration_s * sample_rate))
    samples = noise_level * rng.standard_normal(n_samples)
    labels = list(bands)
    events = []
    for onset, offset in _layout(rng, duration_s, bursts_per_clip, length_range):
        label = labels[int(rng.integers(len(labels)))]
        first, last = int(onset * sample_rate), int(offset * sample_rate)
        envelope = np.hanning(last - first) ** 0.25
        samples[first:last] += 0.5 * envelope * _band_noise(rng, last - first, bands[label], sample_rate)
        events.append((onset, offset, label))
    return samples.astype(np.float32), events


def generate_dataset(
    out_dir: str,
    n_clips: int = 3,
    duration_s: float = 10.0,
    sample_rate: int = 8000,
    seed: int = 0,
    bands: Dict[str, Tuple[float, float]] | None = None,
    split: str = Split.TRAIN.value,
) -> List[ManifestRecord]:
    """Write ``n_clips`` WAV files plus ``manifest.jsonl`` into ``out_dir``."""
    bands = bands or DEFAULT_BANDS
    rng = np.random.default_rng(seed)
    os.makedirs(out_dir, exist_ok=True)
    records: List[ManifestRecord] = []
    for index in range(n_clips):
        clip_id = f"synthetic_{index:03d}"
        samples, events = generate_clip(rng, duration_s, sample_rate, bands)
        sf.write(os.path.join(out_dir, f"{clip_id}.wav"), samples, sample_rate, subtype="PCM_16")
        records.append(
            {
                "clip_id": clip_id,
                "audio_path": f"{clip_id}.wav",
                "sample_rate": sample_rate,
                "duration_s": duration_s,
                "events": [{"onset_s": onset, "offset_s": offset, "label": label} for onset, offset, label in events],
                "position": None,
                "gender": None,
                "split": split,
            }
        )
    write_manifest(os.path.join(out_dir, MANIFEST_NAME), records)
    logger.info("Wrote %d synthetic clips to %s.", n_clips, out_dir)
    return records


def synthetic_classes(bands: Sequence[str] | None = None) -> Tuple[str, ...]:
    return tuple(bands or DEFAULT_BANDS)
