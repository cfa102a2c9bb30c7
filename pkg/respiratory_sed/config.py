"""Configuration helpers for respiratory sound event detection.

Settings are layered: built-in defaults, then ``data/config.json`` (or an
explicit ``--config`` file), then a named preset, then ``RESP_SED_*``
environment variables, then command line overrides.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Mapping, Tuple

from .types import EdgeAttrMode, HeadMode, LocIoUMode, SpectrogramChannel

logger = logging.getLogger(__name__)

DATA_DIR = "data"
CONFIG_FILE = os.path.join(DATA_DIR, "config.json")
PRESET_DIR = os.path.join(os.path.dirname(__file__), "presets")
ENV_PREFIX = "RESP_SED_"


class ConfigError(ValueError):
    """Raised when a configuration value violates its invariants."""


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 8000
    n_fft: int = 1024
    win_len: int = 1000
    hop_len: int = 128
    f_min: float = 32.7
    f_max: float = 4000.0
    n_bands: int = 84
    channels: Tuple[SpectrogramChannel, ...] = (
        SpectrogramChannel.MEL,
        SpectrogramChannel.GAMMA,
        SpectrogramChannel.CQT,
    )
    frames_per_node: int = 5


@dataclass(frozen=True)
class AugmentConfig:
    enabled: bool = True
    probability: float = 0.5
    ops: Tuple[str, ...] = ("noise", "time_stretch", "vtlp", "time_shift")
    noise_snr_db: Tuple[float, float] = (15.0, 30.0)
    stretch_range: Tuple[float, float] = (0.9, 1.1)
    vtlp_alpha_range: Tuple[float, float] = (0.9, 1.1)
    vtlp_boundary_hz: float = 3200.0
    shift_fraction: float = 0.5
    min_fragment_s: float = 0.05
    mask_probability: float = 0.5
    time_mask_width: int = 20
    time_mask_count: int = 2
    freq_mask_width: int = 8
    freq_mask_count: int = 2


@dataclass(frozen=True)
class ModelConfig:
    n_basis: int = 4
    conv_channels: Tuple[int, ...] = (16, 32, 64)
    kernel_size: int = 3
    d_node: int = 64
    edge_dim: int = 12
    edge_attr_mode: EdgeAttrMode = EdgeAttrMode.COMPRESSED
    leaky_slope: float = 0.2
    time_scale: float = 0.05
    use_meta: bool = False


@dataclass(frozen=True)
class AnchorConfig:
    durations: Tuple[float, ...] = (0.5, 0.8, 1.5)
    density: Tuple[float, ...] = (0.75, 2.0, 0.75)
    base_count: int = 20
    iou_threshold: float = 0.3


@dataclass(frozen=True)
class RefinerConfig:
    head_mode: HeadMode = HeadMode.INTEGRATED
    bins_per_scale: Tuple[int, ...] = (10, 10, 10)
    offset_range: float = 1.0
    smooth_kernel: int = 5
    smooth_sigma: float = 1.0
    hidden: int = 64


@dataclass(frozen=True)
class LossWeights:
    node_conf: float = 1.0
    node_cls: float = 1.0
    interval_conf: float = 1.0
    interval_cls: float = 1.0
    interval_loc: float = 1.0
    loc_iou_mode: LocIoUMode = LocIoUMode.UNION


@dataclass(frozen=True)
class DecodeConfig:
    conf_threshold: float = 0.5
    nms_iou: float = 0.4
    collar: float = 0.2
    offset_ratio: float = 0.1


@dataclass(frozen=True)
class TrainConfig:
    lr_node: float = 1e-3
    lr_interval: float = 1e-3
    node_decay_base: float = 0.99
    node_decay_period: int = 126
    lr_interval_min: float = 2e-4
    t_max: int = 0
    epochs: int = 400
    batch_size: int = 8
    seed: int = 0
    grad_clip: float = 5.0
    num_workers: int = 0
    deterministic: bool = False
    device: str = "cpu"


@dataclass(frozen=True)
class DatasetConfig:
    classes: Tuple[str, ...] = ("wheeze", "rhonchi", "stridor", "crackle")
    positions: Tuple[str, ...] = ("p1", "p2", "p3", "p4")
    genders: Tuple[str, ...] = ("0", "1")
    val_fraction: float = 0.2
    cache_dir: str = "cache"


@dataclass(frozen=True)
class Settings:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    anchors: AnchorConfig = field(default_factory=AnchorConfig)
    refiner: RefinerConfig = field(default_factory=RefinerConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)

    @property
    def n_classes(self) -> int:
        return len(self.dataset.classes)

    def to_dict(self) -> Dict[str, Any]:
        return _jsonable(dataclasses.asdict(self))

    def config_hash(self) -> str:
        return _hash_payload(self.to_dict())

    def section_hash(self, *names: str) -> str:
        payload = self.to_dict()
        return _hash_payload({name: payload[name] for name in names})


_SECTION_TYPES: Dict[str, type] = {
    "features": FeatureConfig,
    "augment": AugmentConfig,
    "model": ModelConfig,
    "anchors": AnchorConfig,
    "refiner": RefinerConfig,
    "loss": LossWeights,
    "decode": DecodeConfig,
    "train": TrainConfig,
    "dataset": DatasetConfig,
}

_settings_cache: Settings | None = None


def _jsonable(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {key: _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    return value


def _hash_payload(payload: Mapping[str, Any]) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha1(canonical.encode("utf-8")).hexdigest()


def _load_config(path: str | None = None) -> Dict[str, Any]:
    config_path = path or CONFIG_FILE
    if not os.path.exists(config_path):
        if path is not None:
            raise ConfigError(f"Config file {config_path} does not exist.")
        return {}

    try:
        with open(config_path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
            if isinstance(data, dict):
                return data
            logger.warning("Config file %s does not contain a dictionary.", config_path)
    except (json.JSONDecodeError, OSError) as exc:
        logger.warning("Could not load config from %s: %s", config_path, exc)
    return {}


def _load_preset(name: str) -> Dict[str, Any]:
    path = name if name.endswith(".json") and os.path.exists(name) else os.path.join(PRESET_DIR, f"{name}.json")
    if not os.path.exists(path):
        available = sorted(entry[:-5] for entry in os.listdir(PRESET_DIR) if entry.endswith(".json"))
        raise ConfigError(f"Unknown preset {name!r}. Available presets: {', '.join(available)}")
    with open(path, "r", encoding="utf-8") as handle:
        data = json.load(handle)
    if not isinstance(data, dict):
        raise ConfigError(f"Preset {name!r} does not contain a dictionary.")
    return data


def list_presets() -> list[str]:
    return sorted(entry[:-5] for entry in os.listdir(PRESET_DIR) if entry.endswith(".json"))


def _coerce(default: Any, value: Any) -> Any:
    """Convert ``value`` to the type of ``default`` or raise TypeError."""
    if isinstance(default, Enum):
        return type(default)(value)
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.strip().lower() in {"1", "true", "yes", "on", "0", "false", "no", "off"}:
            return value.strip().lower() in {"1", "true", "yes", "on"}
        raise TypeError(f"expected a boolean, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise TypeError(f"expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise TypeError(f"expected a list, got {value!r}")
        if default:
            return tuple(_coerce(default[0], item) for item in value)
        return tuple(value)
    return value


def _apply_section(section: Any, overrides: Mapping[str, Any], source: str) -> Any:
    known = {item.name: getattr(section, item.name) for item in dataclasses.fields(section)}
    changes: Dict[str, Any] = {}
    for key, value in overrides.items():
        if key not in known:
            logger.warning("Ignoring unknown setting %s.%s from %s.", type(section).__name__, key, source)
            continue
        try:
            changes[key] = _coerce(known[key], value)
        except (TypeError, ValueError) as exc:
            logger.warning("Ignoring invalid setting %s=%r from %s: %s", key, value, source, exc)
    return dataclasses.replace(section, **changes) if changes else section


def _apply_layer(settings: Settings, layer: Mapping[str, Any], source: str) -> Settings:
    sections: Dict[str, Any] = {}
    for name, overrides in layer.items():
        if name not in _SECTION_TYPES:
            logger.warning("Ignoring unknown config section %r from %s.", name, source)
            continue
        if not isinstance(overrides, dict):
            logger.warning("Config section %r from %s is not a dictionary.", name, source)
            continue
        sections[name] = _apply_section(getattr(settings, name), overrides, source)
    return dataclasses.replace(settings, **sections) if sections else settings


def _environment_layer(environ: Mapping[str, str]) -> Dict[str, Dict[str, Any]]:
    layer: Dict[str, Dict[str, Any]] = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX) or "__" not in key:
            continue
        section, _, name = key[len(ENV_PREFIX):].lower().partition("__")
        try:
            value: Any = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        layer.setdefault(section, {})[name] = value
    return layer


def validate_settings(settings: Settings) -> Settings:
    """Check cross-field invariants; raise ConfigError on the first violation."""
    feats = settings.features
    if not (0 < feats.hop_len <= feats.win_len <= feats.n_fft):
        raise ConfigError("features: require 0 < hop_len <= win_len <= n_fft")
    if not (0 <= feats.f_min < feats.f_max <= feats.sample_rate / 2):
        raise ConfigError("features: require 0 <= f_min < f_max <= sample_rate / 2")
    if feats.n_bands <= 0:
        raise ConfigError("features: n_bands must be positive")
    if sorted(channel.value for channel in feats.channels) != sorted(channel.value for channel in SpectrogramChannel):
        raise ConfigError("features: channels must list mel, gamma and cqt exactly once")
    if feats.frames_per_node < 1:
        raise ConfigError("features: frames_per_node must be at least 1")

    anchors = settings.anchors
    if not (len(anchors.durations) == len(anchors.density) == len(settings.refiner.bins_per_scale)):
        raise ConfigError("anchors/refiner: durations, density and bins_per_scale need one entry per scale")
    if any(value <= 0 for value in anchors.durations) or any(value <= 0 for value in anchors.density):
        raise ConfigError("anchors: durations and density weights must be positive")
    if anchors.base_count < 1:
        raise ConfigError("anchors: base_count must be at least 1")
    if not (0 < anchors.iou_threshold < 1):
        raise ConfigError("anchors: iou_threshold must lie in (0, 1)")
    if any(int(anchors.base_count * weight) < 1 for weight in anchors.density):
        raise ConfigError("anchors: every scale needs at least one anchor")

    refiner = settings.refiner
    if any(bins < 2 for bins in refiner.bins_per_scale):
        raise ConfigError("refiner: bins_per_scale entries must be at least 2")
    if refiner.offset_range <= 0:
        raise ConfigError("refiner: offset_range must be positive")
    if refiner.smooth_kernel < 1 or refiner.smooth_kernel % 2 == 0:
        raise ConfigError("refiner: smooth_kernel must be odd")

    if settings.model.d_node < 2:
        raise ConfigError("model: d_node must be at least 2")
    if len(settings.model.conv_channels) != 3:
        raise ConfigError("model: conv_channels needs exactly three blocks")

    weights = settings.loss
    if any(value < 0 for value in (weights.node_conf, weights.node_cls, weights.interval_conf, weights.interval_cls, weights.interval_loc)):
        raise ConfigError("loss: weights must be non-negative")

    train = settings.train
    if train.lr_node <= 0 or train.lr_interval <= 0 or train.lr_interval_min < 0:
        raise ConfigError("train: learning rates must be positive")
    if train.t_max < 0 or train.node_decay_period < 1:
        raise ConfigError("train: t_max must be >= 0 and node_decay_period >= 1")
    if train.batch_size < 1 or train.epochs < 1:
        raise ConfigError("train: batch_size and epochs must be at least 1")

    if not settings.dataset.classes:
        raise ConfigError("dataset: at least one abnormal class is required")
    return settings


def load_settings(
    config_path: str | None = None,
    preset: str | None = None,
    overrides: Mapping[str, Mapping[str, Any]] | None = None,
    environ: Mapping[str, str] | None = None,
) -> Settings:
    """Build validated settings from every configuration layer."""
    settings = Settings()
    settings = _apply_layer(settings, _load_config(config_path), config_path or CONFIG_FILE)
    if preset:
        settings = _apply_layer(settings, _load_preset(preset), f"preset {preset}")
    env_layer = _environment_layer(os.environ if environ is None else environ)
    if env_layer:
        settings = _apply_layer(settings, env_layer, "environment")
    if overrides:
        settings = _apply_layer(settings, overrides, "command line")
    return validate_settings(settings)


def settings_from_dict(payload: Mapping[str, Any], overrides: Mapping[str, Mapping[str, Any]] | None = None) -> Settings:
    """Rebuild settings from a snapshot such as the one stored in a checkpoint."""
    settings = _apply_layer(Settings(), payload, "snapshot")
    if overrides:
        settings = _apply_layer(settings, overrides, "command line")
    return validate_settings(settings)


def get_settings() -> Settings:
    """Return the default layered settings, cached for the process."""
    global _settings_cache
    if _settings_cache is not None:
        return _settings_cache

    _settings_cache = load_settings()
    return _settings_cache
