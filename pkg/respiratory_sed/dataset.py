"""Dataset ingestion: annotation adapters, label mapping and manifest records."""

from __future__ import annotations

import glob
import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterator, List, Mapping, Sequence, Tuple

import soundfile as sf

from .features import load_audio
from .storage import ManifestError, resolve_audio_path
from .types import AudioClip, EventRecord, ManifestEvent, ManifestRecord, Split

logger = logging.getLogger(__name__)

RawEvent = Tuple[float, float, str]

_DEFAULT_MAPPING = {
    "wheeze": "wheeze",
    "rhonchi": "rhonchi",
    "stridor": "stridor",
    "crackle": "crackle",
    "fine crackle": "crackle",
    "coarse crackle": "crackle",
    "d": "crackle",
}
_DEFAULT_DROPPED = frozenset(
    {
        "normal",
        "wheeze & crackle",
        "wheeze+crackle",
        "wheeze and crackle",
        "i",
        "e",
        "inhalation",
        "exhalation",
    }
)
_HF_LINE = re.compile(r"^\s*(?P<label>.+?)\s+(?P<onset>\d+:\d{2}:\d{2}(?:\.\d+)?)\s+(?P<offset>\d+:\d{2}:\d{2}(?:\.\d+)?)\s*$")


def _normalize_label(label: str) -> str:
    return " ".join(label.strip().lower().split())


@dataclass(frozen=True)
class LabelMap:
    """Total mapping from source labels to canonical classes; anything else is an error."""

    mapping: Mapping[str, str] = field(default_factory=lambda: dict(_DEFAULT_MAPPING))
    dropped: FrozenSet[str] = _DEFAULT_DROPPED

    def resolve(self, label: str) -> str | None:
        key = _normalize_label(label)
        if key in self.dropped:
            return None
        if key in self.mapping:
            return self.mapping[key]
        raise KeyError(label)


def default_label_map(classes: Sequence[str]) -> LabelMap:
    mapping = {source: target for source, target in _DEFAULT_MAPPING.items() if target in classes}
    mapping.update({_normalize_label(name): name for name in classes})
    return LabelMap(mapping=mapping)


def assign_split(clip_id: str, val_fraction: float) -> str:
    """Stable train/val assignment from a hash of the clip id."""
    digest = hashlib.sha1(clip_id.encode("utf-8")).hexdigest()
    return Split.VAL.value if int(digest[:8], 16) / 0xFFFFFFFF < val_fraction else Split.TRAIN.value


def _split_from_path(path: str, root: str) -> str | None:
    parts = os.path.relpath(path, root).lower().split(os.sep)[:-1]
    for part in parts:
        for split in Split:
            if split.value in part:
                return split.value
    return None


def _clock_seconds(stamp: str) -> float:
    hours, minutes, seconds = stamp.split(":")
    return int(hours) * 3600 + int(minutes) * 60 + float(seconds)


def _sprsound_clips(root: str) -> Iterator[Tuple[str, str, List[RawEvent], str | None, str | None]]:
    """SPRSound layout: ``<stem>.wav`` with a ``<stem>.json`` event annotation (times in ms).

    Stems follow ``patient_age_gender_position_record``.
    """
    wavs = {os.path.splitext(os.path.basename(path))[0]: path for path in glob.glob(os.path.join(root, "**", "*.wav"), recursive=True)}
    for annotation in sorted(glob.glob(os.path.join(root, "**", "*.json"), recursive=True)):
        stem = os.path.splitext(os.path.basename(annotation))[0]
        if stem not in wavs:
            logger.warning("No audio for annotation %s; skipping.", annotation)
            continue
        with open(annotation, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
        raw_events = [
            (float(item["start"]) / 1000.0, float(item["end"]) / 1000.0, str(item["type"]))
            for item in payload.get("event_annotation", [])
        ]
        tokens = stem.split("_")
        gender = tokens[2] if len(tokens) >= 5 else None
        position = tokens[3].lower() if len(tokens) >= 5 else None
        yield stem, wavs[stem], raw_events, position, gender


def _hf_lung_clips(root: str) -> Iterator[Tuple[str, str, List[RawEvent], str | None, str | None]]:
    """HF-Lung layout: ``<stem>.wav`` with ``<stem>_label.txt`` lines ``Label HH:MM:SS.f HH:MM:SS.f``."""
    for wav in sorted(glob.glob(os.path.join(root, "**", "*.wav"), recursive=True)):
        stem = os.path.splitext(os.path.basename(wav))[0]
        label_file = os.path.join(os.path.dirname(wav), f"{stem}_label.txt")
        if not os.path.exists(label_file):
            logger.warning("No label file for %s; skipping.", wav)
            continue
        raw_events: List[RawEvent] = []
        with open(label_file, "r", encoding="utf-8") as handle:
            for number, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                match = _HF_LINE.match(line)
                if match is None:
                    raise ManifestError(f"{label_file}:{number}: cannot parse {line.strip()!r}")
                raw_events.append((_clock_seconds(match["onset"]), _clock_seconds(match["offset"]), match["label"]))
        yield stem, wav, raw_events, None, None


ADAPTERS: Dict[str, Callable[[str], Iterator[Tuple[str, str, List[RawEvent], str | None, str | None]]]] = {
    "sprsound": _sprsound_clips,
    "hf_lung": _hf_lung_clips,
}


def normalize_events(raw_events: Sequence[RawEvent], duration_s: float, clip_id: str) -> Tuple[List[ManifestEvent], int]:
    """Clip mapped events to ``[0, duration]``; returns the events and how many were dropped as empty."""
    events: List[ManifestEvent] = []
    dropped = 0
    for onset, offset, label in sorted(raw_events):
        clipped_onset, clipped_offset = max(0.0, onset), min(duration_s, offset)
        if (clipped_onset, clipped_offset) != (onset, offset):
            logger.warning(
                "Clip %s: event %s (%.3f, %.3f) clipped to (%.3f, %.3f).",
                clip_id, label, onset, offset, clipped_onset, clipped_offset,
            )
        if clipped_offset <= clipped_onset:
            dropped += 1
            continue
        events.append({"onset_s": clipped_onset, "offset_s": clipped_offset, "label": label})
    return events, dropped


def ingest(dataset_dir: str, fmt: str, label_map: LabelMap, val_fraction: float = 0.2) -> List[ManifestRecord]:
    if fmt not in ADAPTERS:
        raise ManifestError(f"Unknown dataset format {fmt!r}; expected one of {sorted(ADAPTERS)}")
    if not os.path.isdir(dataset_dir):
        raise ManifestError(f"Dataset directory {dataset_dir} does not exist.")

    records: List[ManifestRecord] = []
    unknown: Dict[str, List[str]] = {}
    dropped_total = 0
    for clip_id, audio_path, raw_events, position, gender in ADAPTERS[fmt](dataset_dir):
        info = sf.info(audio_path)
        duration_s = info.frames / float(info.samplerate)
        mapped: List[RawEvent] = []
        for onset, offset, label in raw_events:
            try:
                canonical = label_map.resolve(label)
            except KeyError:
                unknown.setdefault(label, []).append(clip_id)
                continue
            if canonical is not None:
                mapped.append((onset, offset, canonical))
        events, dropped = normalize_events(mapped, duration_s, clip_id)
        dropped_total += dropped
        records.append(
            {
                "clip_id": clip_id,
                "audio_path": os.path.abspath(audio_path),
                "sample_rate": int(info.samplerate),
                "duration_s": duration_s,
                "events": events,
                "position": position,
                "gender": gender,
                "split": _split_from_path(audio_path, dataset_dir) or assign_split(clip_id, val_fraction),
            }
        )

    if unknown:
        offenders = ", ".join(f"{label!r} ({len(clips)} events)" for label, clips in sorted(unknown.items()))
        raise ManifestError(f"Unmapped labels: {offenders}")
    if not records:
        raise ManifestError(f"no clips found in {dataset_dir}")
    if dropped_total:
        logger.warning("Dropped %d zero-length events.", dropped_total)
    logger.info("Ingested %d clips from %s (%s).", len(records), dataset_dir, fmt)
    return records


def check_vocabulary(records: Sequence[ManifestRecord], classes: Sequence[str]) -> None:
    offenders = sorted({event["label"] for record in records for event in record["events"]} - set(classes))
    if offenders:
        raise ManifestError(f"Manifest labels outside the configured classes: {offenders}")


def load_clip(record: ManifestRecord, manifest_dir: str, sample_rate: int) -> AudioClip:
    samples = load_audio(resolve_audio_path(manifest_dir, record), sample_rate)
    return AudioClip(
        samples=samples,
        sample_rate=sample_rate,
        events=[EventRecord(event["onset_s"], event["offset_s"], event["label"]) for event in record["events"]],
        position=record["position"],
        gender=record["gender"],
    )


def reference_events(records: Sequence[ManifestRecord]) -> Dict[str, List[EventRecord]]:
    return {
        record["clip_id"]: [EventRecord(event["onset_s"], event["offset_s"], event["label"]) for event in record["events"]]
        for record in records
    }
