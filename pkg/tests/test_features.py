import dataclasses

import numpy as np
import pytest

from respiratory_sed import features
from respiratory_sed.config import AugmentConfig, FeatureConfig
from respiratory_sed.types import AudioClip, EventRecord, MaskAxis, SpectrogramChannel, SpectrogramStack


def _clip(duration_s: float, events=(), seed: int = 0, sample_rate: int = 8000) -> AudioClip:
    rng = np.random.default_rng(seed)
    samples = (0.1 * rng.standard_normal(int(round(duration_s * sample_rate)))).astype(np.float32)
    return AudioClip(samples=samples, sample_rate=sample_rate, events=list(events))


def _stack(values: np.ndarray) -> SpectrogramStack:
    return SpectrogramStack(
        values=values,
        frame_times=np.arange(values.shape[-1]) * 0.016,
        source_duration_s=values.shape[-1] * 0.016,
        sample_rate=8000,
        hop_len=128,
        channels=(SpectrogramChannel.MEL, SpectrogramChannel.GAMMA, SpectrogramChannel.CQT)[: values.shape[0]],
    )


def test_mel_of_hz() -> None:
    assert features.mel_of_hz(0.0) == 0.0
    assert features.mel_of_hz(700.0) == pytest.approx(781.17, abs=0.01)
    assert features.mel_of_hz(4000.0) == pytest.approx(2146.06, abs=0.01)
    with pytest.raises(features.FeatureError):
        features.mel_of_hz(-1.0)


@pytest.mark.parametrize("duration_s, frames", [(10.0, 626), (9.2, 576)])
def test_compute_stack_shape(duration_s: float, frames: int) -> None:
    stack = features.compute_stack(_clip(duration_s), FeatureConfig())

    assert stack.values.shape == (3, 84, frames)
    assert np.isfinite(stack.values).all()
    assert len(stack.frame_times) == frames


def test_silent_clip_hits_log_floor() -> None:
    clip = AudioClip(samples=np.zeros(16000, dtype=np.float32), sample_rate=8000)
    stack = features.compute_stack(clip, FeatureConfig())

    np.testing.assert_allclose(stack.values, np.log(features.LOG_FLOOR), rtol=1e-5)


def test_channel_order_permutes_output() -> None:
    clip = _clip(2.0, seed=3)
    forward = features.compute_stack(clip, FeatureConfig())
    reordered = features.compute_stack(
        clip,
        FeatureConfig(channels=(SpectrogramChannel.CQT, SpectrogramChannel.MEL, SpectrogramChannel.GAMMA)),
    )

    np.testing.assert_array_equal(reordered.values[0], forward.values[2])
    np.testing.assert_array_equal(reordered.values[1], forward.values[0])
    np.testing.assert_array_equal(reordered.values[2], forward.values[1])


def test_frame_count_matches_framing_rule() -> None:
    rng = np.random.default_rng(11)
    cfg = FeatureConfig(channels=(SpectrogramChannel.MEL,))
    for n_samples in rng.integers(cfg.win_len, 30000, size=200):
        clip = AudioClip(samples=np.ones(int(n_samples), dtype=np.float32), sample_rate=cfg.sample_rate)
        stack = features.compute_stack(clip, cfg)
        assert stack.n_frames == features.frame_count(int(n_samples), cfg.hop_len) == 1 + int(n_samples) // 128


def test_short_clip_is_rejected() -> None:
    with pytest.raises(features.FeatureError, match="shorter than one window"):
        features.compute_stack(AudioClip(samples=np.ones(999, dtype=np.float32), sample_rate=8000), FeatureConfig())


def test_row_normalize_examples() -> None:
    values = np.zeros((1, 2, 2), dtype=np.float32)
    values[0, 0] = [3.0, 3.0]
    values[0, 1] = [0.0, 2.0]

    normalized = features.row_normalize(_stack(values)).values
    np.testing.assert_allclose(normalized[0, 0], [0.0, 0.0])
    np.testing.assert_allclose(normalized[0, 1], [-1.0, 1.0], atol=1e-6)


def test_row_normalize_is_idempotent() -> None:
    values = np.random.default_rng(0).normal(3.0, 5.0, size=(3, 84, 200))
    once = features.row_normalize(_stack(values))
    twice = features.row_normalize(once)

    np.testing.assert_allclose(once.values.mean(axis=-1), 0.0, atol=1e-5)
    np.testing.assert_allclose(twice.values, once.values, atol=1e-6)


def _shift(events, shift_s: float, min_fragment_s: float = 0.05):
    clip = _clip(10.0, events=[EventRecord(on, off, "wheeze") for on, off in events])
    shifted = features.augment_waveform(clip, "time_shift", {"shift_s": shift_s, "min_fragment_s": min_fragment_s})
    return [(event.onset_s, event.offset_s) for event in shifted.events], shifted


def test_time_shift_translates_events() -> None:
    events, shifted = _shift([(1.0, 2.0)], 2.0)

    assert events == [pytest.approx((3.0, 4.0))]
    assert len(shifted.samples) == 80000


def test_time_shift_wraps_events() -> None:
    assert _shift([(8.5, 9.5)], 2.0)[0] == [pytest.approx((0.5, 1.5))]
    assert _shift([(9.0, 10.0)], 2.0)[0] == [pytest.approx((1.0, 2.0))]
    assert _shift([(1.0, 2.0)], -2.0)[0] == [pytest.approx((9.0, 10.0))]


def test_time_shift_splits_boundary_crossing_event() -> None:
    events, _ = _shift([(8.5, 9.5)], 1.0)

    assert events == [pytest.approx((0.0, 0.5)), pytest.approx((9.5, 10.0))]


def test_time_shift_drops_tiny_fragments() -> None:
    events, _ = _shift([(9.0, 9.98)], 0.99)

    assert events == [pytest.approx((0.0, 0.97))]


def test_time_shift_conserves_event_duration() -> None:
    rng = np.random.default_rng(5)
    for _ in range(50):
        onsets = np.sort(rng.uniform(0.0, 9.0, size=3))
        events = [(float(on), float(min(on + rng.uniform(0.1, 1.0), 10.0))) for on in onsets]
        shift_s = float(rng.uniform(-10.0, 10.0))
        shifted, _ = _shift(events, shift_s, min_fragment_s=0.0)

        before = sum(off - on for on, off in events)
        after = sum(off - on for on, off in shifted)
        assert after == pytest.approx(before, abs=2 * len(events) / 8000)


def test_shift_beyond_duration_is_rejected() -> None:
    with pytest.raises(features.FeatureError):
        _shift([(1.0, 2.0)], 11.0)


def test_time_stretch_rescales_events() -> None:
    clip = _clip(4.0, events=[EventRecord(1.0, 2.0, "crackle")])
    stretched = features.augment_waveform(clip, "time_stretch", {"factor": 1.25})

    assert stretched.events[0].onset_s == pytest.approx(1.25)
    assert stretched.events[0].offset_s == pytest.approx(2.5)
    assert stretched.duration_s == pytest.approx(5.0, abs=0.01)
    with pytest.raises(features.FeatureError):
        features.augment_waveform(clip, "time_stretch", {"factor": 0.0})


@pytest.mark.parametrize("op, params", [("noise", {"snr_db": 10.0}), ("vtlp", {"alpha": 1.1, "boundary_hz": 3200.0})])
def test_noise_and_vtlp_keep_events(op: str, params) -> None:
    clip = _clip(2.0, events=[EventRecord(0.5, 1.0, "wheeze")])
    augmented = features.augment_waveform(clip, op, params, np.random.default_rng(0))

    assert augmented.events == clip.events
    assert len(augmented.samples) == len(clip.samples)
    assert np.isfinite(augmented.samples).all()
    assert not np.array_equal(augmented.samples, clip.samples)


def test_vtlp_warp_is_monotone_and_fixes_nyquist() -> None:
    freqs = np.linspace(0.0, 4000.0, 257)
    warped = features._vtlp_warp(freqs, 0.9, 3200.0, 8000)

    assert np.all(np.diff(warped) > 0)
    assert warped[0] == 0.0
    assert warped[-1] == pytest.approx(4000.0)


def test_time_mask_fills_row_mean() -> None:
    values = np.random.default_rng(1).standard_normal((3, 84, 100)).astype(np.float32)
    stack = features.row_normalize(_stack(values))
    masked = features.mask_spectrogram(stack, MaskAxis.TIME, width=10, count=1, starts=[50])

    np.testing.assert_allclose(masked.values[:, :, 50:60], 0.0, atol=1e-5)
    np.testing.assert_array_equal(masked.values[:, :, :50], stack.values[:, :, :50])
    np.testing.assert_array_equal(masked.values[:, :, 60:], stack.values[:, :, 60:])


def test_frequency_masks_touch_at_most_width_times_count_bands() -> None:
    values = np.random.default_rng(2).standard_normal((3, 84, 100)).astype(np.float32)
    stack = _stack(values)
    masked = features.mask_spectrogram(stack, "frequency", width=4, count=2, rng=np.random.default_rng(0))

    changed = np.any(masked.values != stack.values, axis=(0, 2))
    assert 1 <= changed.sum() <= 8


def test_mask_edge_cases() -> None:
    stack = _stack(np.zeros((3, 8, 20), dtype=np.float32))

    assert features.mask_spectrogram(stack, "time", width=5, count=0) is stack
    with pytest.raises(features.FeatureError):
        features.mask_spectrogram(stack, "frequency", width=8, count=1)


def test_random_augmentation_can_be_disabled() -> None:
    clip = _clip(1.0)
    cfg = dataclasses.replace(AugmentConfig(), probability=0.0)

    assert features.augment_randomly(clip, cfg, np.random.default_rng(0)) is clip
