"""Persistence helpers: manifests, event files, feature cache, checkpoints and run logs."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from contextlib import contextmanager
from typing import Any, Callable, Dict, IO, Iterable, Iterator, List, Mapping, Sequence

import numpy as np
import torch

try:
    import fcntl
except ImportError:  # pragma: no cover - non-POSIX fallback
    fcntl = None

from .types import EventRecord, ManifestRecord, SpectrogramChannel, SpectrogramStack

logger = logging.getLogger(__name__)

_MANIFEST_KEYS = ("clip_id", "audio_path", "sample_rate", "duration_s", "events", "position", "gender", "split")
_EVENT_KEYS = ("onset_s", "offset_s", "label")


class ManifestError(ValueError):
    """Raised for unreadable or inconsistent manifests."""


class CheckpointError(RuntimeError):
    """Raised when a checkpoint does not fit the model it is loaded into."""


@contextmanager
def _locked_file(path: str, exclusive: bool) -> Iterator[None]:
    lock_path = f"{path}.lock"
    os.makedirs(os.path.dirname(lock_path) or ".", exist_ok=True)
    with open(lock_path, "a", encoding="utf-8") as lock_handle:
        if fcntl is not None:
            lock_type = fcntl.LOCK_EX if exclusive else fcntl.LOCK_SH
            fcntl.flock(lock_handle.fileno(), lock_type)
        try:
            yield
        finally:
            if fcntl is not None:
                fcntl.flock(lock_handle.fileno(), fcntl.LOCK_UN)


def _atomic_write(path: str, write: Callable[[IO[bytes]], None]) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with _locked_file(path, exclusive=True):
        fd, temp_path = tempfile.mkstemp(prefix=".resp_sed_", suffix=".tmp", dir=directory or ".")
        try:
            with os.fdopen(fd, "wb") as target:
                write(target)
                target.flush()
                os.fsync(target.fileno())
            os.replace(temp_path, path)
        finally:
            if os.path.exists(temp_path):
                try:
                    os.remove(temp_path)
                except OSError:
                    logger.debug("Failed to remove temp file %s", temp_path)


def _write_text(path: str, text: str) -> None:
    _atomic_write(path, lambda target: target.write(text.encode("utf-8")))


def write_json(path: str, payload: Any) -> None:
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path: str) -> Any:
    with _locked_file(path, exclusive=False):
        with open(path, "r", encoding="utf-8") as source:
            return json.load(source)


def _manifest_line(record: ManifestRecord) -> str:
    ordered = {key: record[key] for key in _MANIFEST_KEYS}
    ordered["events"] = [{key: event[key] for key in _EVENT_KEYS} for event in record["events"]]
    return json.dumps(ordered, ensure_ascii=False)


def write_manifest(path: str, records: Sequence[ManifestRecord]) -> None:
    """One clip per line, keys in a fixed order, so rewriting a loaded manifest is byte-identical."""
    _write_text(path, "".join(_manifest_line(record) + "\n" for record in records))


def read_manifest(path: str, check_paths: bool = False) -> List[ManifestRecord]:
    if not os.path.exists(path):
        raise ManifestError(f"Manifest {path} does not exist.")
    records: List[ManifestRecord] = []
    with _locked_file(path, exclusive=False):
        with open(path, "r", encoding="utf-8") as source:
            for number, line in enumerate(source, start=1):
                if not line.strip():
                    continue
                try:
                    raw = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ManifestError(f"{path}:{number}: invalid JSON ({exc.msg})") from exc
                missing = [key for key in _MANIFEST_KEYS if key not in raw]
                if missing:
                    raise ManifestError(f"{path}:{number}: missing fields {missing}")
                records.append(raw)

    if check_paths:
        base = os.path.dirname(os.path.abspath(path))
        absent = [record["clip_id"] for record in records if not os.path.exists(resolve_audio_path(base, record))]
        if absent:
            raise ManifestError(f"Audio files missing for clips: {', '.join(absent[:10])}")
    return records


def resolve_audio_path(manifest_dir: str, record: ManifestRecord) -> str:
    path = record["audio_path"]
    return path if os.path.isabs(path) else os.path.join(manifest_dir, path)


def write_events(path: str, events_by_clip: Mapping[str, Iterable[EventRecord]]) -> None:
    lines = []
    for clip_id in sorted(events_by_clip):
        for event in events_by_clip[clip_id]:
            row: Dict[str, Any] = {
                "clip_id": clip_id,
                "onset_s": event.onset_s,
                "offset_s": event.offset_s,
                "label": event.label,
            }
            if event.score is not None:
                row["score"] = event.score
            lines.append(json.dumps(row) + "\n")
    _write_text(path, "".join(lines))


def read_events(path: str) -> Dict[str, List[EventRecord]]:
    events: Dict[str, List[EventRecord]] = {}
    with open(path, "r", encoding="utf-8") as source:
        for number, line in enumerate(source, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                event = EventRecord(
                    onset_s=float(row["onset_s"]),
                    offset_s=float(row["offset_s"]),
                    label=str(row["label"]),
                    score=float(row["score"]) if row.get("score") is not None else None,
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{number}: malformed event row ({exc})") from exc
            events.setdefault(str(row["clip_id"]), []).append(event)
    return events


def save_feature_cache(path: str, stack: SpectrogramStack, key: str) -> None:
    def write(target: IO[bytes]) -> None:
        np.savez(
            target,
            values=stack.values,
            frame_times=stack.frame_times,
            meta=np.array(
                [
                    key,
                    repr(stack.source_duration_s),
                    str(stack.sample_rate),
                    str(stack.hop_len),
                    ",".join(channel.value for channel in stack.channels),
                ]
            ),
        )

    _atomic_write(path, write)


def load_feature_cache(path: str, key: str) -> SpectrogramStack | None:
    """Cached stack, or ``None`` when the file is missing, unreadable or built with other settings."""
    if not os.path.exists(path):
        return None
    try:
        with np.load(path, allow_pickle=False) as container:
            meta = [str(item) for item in container["meta"]]
            if meta[0] != key:
                logger.info("Feature cache %s is stale; recomputing.", path)
                return None
            return SpectrogramStack(
                values=container["values"],
                frame_times=container["frame_times"],
                source_duration_s=float(meta[1]),
                sample_rate=int(meta[2]),
                hop_len=int(meta[3]),
                channels=tuple(SpectrogramChannel(name) for name in meta[4].split(",")),
            )
    except (OSError, KeyError, ValueError, IndexError) as exc:
        logger.warning("Could not read feature cache %s: %s", path, exc)
        return None


def save_checkpoint(path: str, payload: Mapping[str, Any]) -> None:
    buffer = io.BytesIO()
    torch.save(dict(payload), buffer)
    _atomic_write(path, lambda target: target.write(buffer.getvalue()))


def load_checkpoint(path: str, model: torch.nn.Module | None = None, config_hash: str | None = None) -> Dict[str, Any]:
    """Read a checkpoint and, when ``model`` is given, load its parameters.

    Missing keys, unexpected keys and shape mismatches raise CheckpointError
    before anything is copied into the model.
    """
    if not os.path.exists(path):
        raise CheckpointError(f"Checkpoint {path} does not exist.")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if config_hash is not None and payload.get("config_hash") != config_hash:
        logger.warning("Checkpoint %s was written with a different configuration.", path)
    if model is None:
        return payload

    state = payload["model"]
    expected = model.state_dict()
    problems = [f"missing {name}" for name in expected if name not in state]
    problems += [f"unexpected {name}" for name in state if name not in expected]
    problems += [
        f"{name}: {tuple(state[name].shape)} != {tuple(tensor.shape)}"
        for name, tensor in expected.items()
        if name in state and tuple(state[name].shape) != tuple(tensor.shape)
    ]
    if problems:
        raise CheckpointError(f"Checkpoint {path} does not fit the model: {'; '.join(problems[:5])}")
    model.load_state_dict(state)
    return payload


def append_csv_rows(path: str, rows: Sequence[Mapping[str, Any]]) -> None:
    if not rows:
        return
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    fieldnames = list(rows[0].keys())
    with _locked_file(path, exclusive=True):
        new_file = not os.path.exists(path) or os.path.getsize(path) == 0
        with open(path, "a", encoding="utf-8", newline="") as target:
            writer = csv.DictWriter(target, fieldnames=fieldnames)
            if new_file:
                writer.writeheader()
            writer.writerows(rows)


def read_csv_rows(path: str) -> List[Dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as source:
        return list(csv.DictReader(source))


def write_lines(path: str, lines: Iterable[str]) -> None:
    _write_text(path, "".join(f"{line}\n" for line in lines))
