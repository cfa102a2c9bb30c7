import argparse
import json
from pathlib import Path

import pytest

from respiratory_sed import config
from respiratory_sed.command_handlers.utils import settings_from_args
from respiratory_sed.types import EdgeAttrMode, HeadMode


def _isolate(tmp_path: Path, monkeypatch, payload=None) -> Path:
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(payload or {}), encoding="utf-8")
    monkeypatch.setattr(config, "CONFIG_FILE", str(config_path))
    monkeypatch.setattr(config, "_settings_cache", None)
    return config_path


def test_defaults(tmp_path: Path, monkeypatch) -> None:
    _isolate(tmp_path, monkeypatch)

    settings = config.load_settings(environ={})
    assert settings.features.hop_len == 128
    assert settings.anchors.durations == (0.5, 0.8, 1.5)
    assert settings.anchors.density == (0.75, 2.0, 0.75)
    assert settings.refiner.head_mode is HeadMode.INTEGRATED
    assert settings.n_classes == 4


def test_config_file_override(tmp_path: Path, monkeypatch) -> None:
    _isolate(tmp_path, monkeypatch, {"train": {"epochs": 12, "batch_size": 2}, "refiner": {"offset_range": 0.5}})

    settings = config.load_settings(environ={})
    assert settings.train.epochs == 12
    assert settings.train.batch_size == 2
    assert settings.refiner.offset_range == 0.5


def test_invalid_values_are_ignored(tmp_path: Path, monkeypatch) -> None:
    _isolate(tmp_path, monkeypatch, {"train": {"epochs": "many", "unknown": 1}, "nonsense": {}})

    settings = config.load_settings(environ={})
    assert settings.train.epochs == config.TrainConfig().epochs


def test_environment_layer_beats_file(tmp_path: Path, monkeypatch) -> None:
    _isolate(tmp_path, monkeypatch, {"train": {"epochs": 12}})

    settings = config.load_settings(environ={"RESP_SED_TRAIN__EPOCHS": "50", "RESP_SED_MODEL__USE_META": "true"})
    assert settings.train.epochs == 50
    assert settings.model.use_meta is True


def test_command_line_beats_environment(tmp_path: Path, monkeypatch) -> None:
    _isolate(tmp_path, monkeypatch)

    settings = config.load_settings(
        environ={"RESP_SED_TRAIN__SEED": "3"},
        overrides={"train": {"seed": 7}},
    )
    assert settings.train.seed == 7


def test_preset_applies_table_row(tmp_path: Path, monkeypatch) -> None:
    _isolate(tmp_path, monkeypatch)

    settings = config.load_settings(preset="separate_sequential_r0.5", environ={})
    assert settings.refiner.head_mode is HeadMode.SEPARATE
    assert settings.model.edge_attr_mode is EdgeAttrMode.SEQUENTIAL
    assert settings.refiner.offset_range == 0.5
    assert "integrated_compressed_r20.0" in config.list_presets()


def test_unknown_preset_raises(tmp_path: Path, monkeypatch) -> None:
    _isolate(tmp_path, monkeypatch)

    with pytest.raises(config.ConfigError, match="Unknown preset"):
        config.load_settings(preset="does_not_exist", environ={})


def test_missing_explicit_config_raises(tmp_path: Path) -> None:
    with pytest.raises(config.ConfigError):
        config.load_settings(config_path=str(tmp_path / "absent.json"), environ={})


@pytest.mark.parametrize(
    "overrides",
    [
        {"anchors": {"iou_threshold": 1.5}},
        {"refiner": {"smooth_kernel": 4}},
        {"refiner": {"bins_per_scale": [10, 10]}},
        {"model": {"d_node": 1}},
        {"features": {"hop_len": 2048}},
        {"loss": {"node_cls": -1.0}},
    ],
)
def test_validation_rejects_broken_settings(tmp_path: Path, monkeypatch, overrides) -> None:
    _isolate(tmp_path, monkeypatch)

    with pytest.raises(config.ConfigError):
        config.load_settings(overrides=overrides, environ={})


def test_snapshot_round_trip_keeps_hash(tmp_path: Path, monkeypatch) -> None:
    _isolate(tmp_path, monkeypatch)

    settings = config.load_settings(preset="integrated_compressed_r20.0", environ={})
    restored = config.settings_from_dict(json.loads(json.dumps(settings.to_dict())))
    assert restored == settings
    assert restored.config_hash() == settings.config_hash()
    assert restored.section_hash("features") == config.Settings().section_hash("features")


def test_plain_commands_share_the_cached_settings(tmp_path: Path, monkeypatch) -> None:
    _isolate(tmp_path, monkeypatch, {"train": {"epochs": 12}})
    plain = argparse.Namespace(config=None, preset=None, seed=None, use_meta=False)

    first = settings_from_args(plain)
    assert first is config.get_settings()
    assert first.train.epochs == 12

    seeded = settings_from_args(argparse.Namespace(config=None, preset=None, seed=5, use_meta=False))
    assert seeded is not first
    assert seeded.train.seed == 5
    assert config.get_settings() is first
