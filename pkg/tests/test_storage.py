from pathlib import Path

import numpy as np
import pytest
import torch

from respiratory_sed import storage
from respiratory_sed.types import EventRecord, ManifestRecord, SpectrogramChannel, SpectrogramStack


def _record(clip_id: str) -> ManifestRecord:
    return {
        "clip_id": clip_id,
        "audio_path": f"{clip_id}.wav",
        "sample_rate": 8000,
        "duration_s": 9.2,
        "events": [{"onset_s": 1.0, "offset_s": 2.5, "label": "wheeze"}],
        "position": "p1",
        "gender": "0",
        "split": "train",
    }


def test_manifest_round_trip_is_byte_identical(tmp_path: Path) -> None:
    first = tmp_path / "first.jsonl"
    second = tmp_path / "second.jsonl"

    storage.write_manifest(str(first), [_record("a"), _record("b")])
    storage.write_manifest(str(second), storage.read_manifest(str(first)))

    assert first.read_bytes() == second.read_bytes()


def test_manifest_errors(tmp_path: Path) -> None:
    broken = tmp_path / "broken.jsonl"
    broken.write_text('{"clip_id": "a"}\n', encoding="utf-8")

    with pytest.raises(storage.ManifestError, match="missing fields"):
        storage.read_manifest(str(broken))
    with pytest.raises(storage.ManifestError):
        storage.read_manifest(str(tmp_path / "absent.jsonl"))


def test_manifest_path_check(tmp_path: Path) -> None:
    path = tmp_path / "manifest.jsonl"
    storage.write_manifest(str(path), [_record("a")])

    with pytest.raises(storage.ManifestError, match="Audio files missing"):
        storage.read_manifest(str(path), check_paths=True)
    (tmp_path / "a.wav").write_bytes(b"")
    assert len(storage.read_manifest(str(path), check_paths=True)) == 1


def test_events_round_trip(tmp_path: Path) -> None:
    path = tmp_path / "events.jsonl"
    events = {
        "b": [EventRecord(0.5, 1.0, "crackle", score=0.75)],
        "a": [EventRecord(1.0, 2.0, "wheeze"), EventRecord(3.0, 4.5, "wheeze")],
    }

    storage.write_events(str(path), events)
    loaded = storage.read_events(str(path))

    assert loaded == events
    assert path.read_text(encoding="utf-8").splitlines()[0].startswith('{"clip_id": "a"')


def test_malformed_event_row(tmp_path: Path) -> None:
    path = tmp_path / "events.jsonl"
    path.write_text('{"clip_id": "a", "onset_s": 1.0}\n', encoding="utf-8")

    with pytest.raises(storage.ManifestError, match="events.jsonl:1"):
        storage.read_events(str(path))


def _stack() -> SpectrogramStack:
    values = np.arange(3 * 4 * 6, dtype=np.float32).reshape(3, 4, 6)
    return SpectrogramStack(
        values=values,
        frame_times=np.arange(6) * 0.016,
        source_duration_s=0.08,
        sample_rate=8000,
        hop_len=128,
        channels=(SpectrogramChannel.MEL, SpectrogramChannel.GAMMA, SpectrogramChannel.CQT),
    )


def test_feature_cache_hit_and_stale_key(tmp_path: Path) -> None:
    path = tmp_path / "cache" / "a.npz"
    storage.save_feature_cache(str(path), _stack(), key="abc")

    cached = storage.load_feature_cache(str(path), key="abc")
    assert cached is not None
    np.testing.assert_array_equal(cached.values, _stack().values)
    assert cached.channels == _stack().channels
    assert cached.source_duration_s == 0.08
    assert storage.load_feature_cache(str(path), key="other") is None
    assert storage.load_feature_cache(str(tmp_path / "missing.npz"), key="abc") is None


def test_checkpoint_reload_is_bit_identical(tmp_path: Path) -> None:
    torch.manual_seed(0)
    model = torch.nn.Sequential(torch.nn.Linear(4, 3), torch.nn.ReLU(), torch.nn.Linear(3, 2)).eval()
    inputs = torch.randn(5, 4)
    path = tmp_path / "model.pt"

    storage.save_checkpoint(str(path), {"model": model.state_dict(), "step": 7, "config_hash": "h"})
    clone = torch.nn.Sequential(torch.nn.Linear(4, 3), torch.nn.ReLU(), torch.nn.Linear(3, 2)).eval()
    payload = storage.load_checkpoint(str(path), clone, config_hash="h")

    assert payload["step"] == 7
    assert torch.equal(model(inputs), clone(inputs))


def test_checkpoint_shape_mismatch_is_rejected(tmp_path: Path) -> None:
    path = tmp_path / "model.pt"
    storage.save_checkpoint(str(path), {"model": torch.nn.Linear(4, 3).state_dict()})
    target = torch.nn.Linear(4, 2)
    before = target.weight.detach().clone()

    with pytest.raises(storage.CheckpointError, match="does not fit"):
        storage.load_checkpoint(str(path), target)
    assert torch.equal(target.weight, before)
    with pytest.raises(storage.CheckpointError):
        storage.load_checkpoint(str(tmp_path / "absent.pt"))


def test_csv_rows_append_with_single_header(tmp_path: Path) -> None:
    path = tmp_path / "losses.csv"
    storage.append_csv_rows(str(path), [{"step": 1, "total": 0.5}])
    storage.append_csv_rows(str(path), [{"step": 2, "total": 0.25}])

    rows = storage.read_csv_rows(str(path))
    assert [row["step"] for row in rows] == ["1", "2"]
    assert path.read_text(encoding="utf-8").count("step") == 1
