"""Spectrogram stacks, row normalization and audio augmentation."""

from __future__ import annotations

import dataclasses
import logging
import math
from typing import Any, Iterable, List, Mapping, Sequence

import librosa
import numpy as np
import soundfile as sf
from scipy.interpolate import interp1d

from .config import AugmentConfig, FeatureConfig
from .types import AudioClip, AugmentOp, EventRecord, MaskAxis, SpectrogramChannel, SpectrogramStack

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-10
ROW_EPS = 1e-8
GAMMATONE_ORDER = 4
# Keeps the top CQT filter (plus its bandwidth) under Nyquist.
_CQT_HEADROOM = 0.9


class FeatureError(ValueError):
    """Raised for audio that cannot be turned into a spectrogram stack."""


def mel_of_hz(frequency: float) -> float:
    if frequency < 0:
        raise FeatureError(f"Frequency must be non-negative, got {frequency}")
    return 2595.0 * math.log10(1.0 + frequency / 700.0)


def frame_count(n_samples: int, hop_len: int) -> int:
    """Frames produced by centered framing."""
    return 1 + n_samples // hop_len


def load_audio(path: str, sample_rate: int) -> np.ndarray:
    """Read a WAV file as mono float32 at ``sample_rate``."""
    data, native_rate = sf.read(path, dtype="float32", always_2d=True)
    samples = data.mean(axis=1)
    if native_rate != sample_rate:
        logger.debug("Resampling %s from %s Hz to %s Hz.", path, native_rate, sample_rate)
        samples = librosa.resample(samples, orig_sr=native_rate, target_sr=sample_rate)
    return np.asarray(samples, dtype=np.float32)


def _erb_rate(frequency: np.ndarray) -> np.ndarray:
    return 21.4 * np.log10(1.0 + 0.00437 * frequency)


def _inverse_erb_rate(rate: np.ndarray) -> np.ndarray:
    return (np.power(10.0, rate / 21.4) - 1.0) / 0.00437


def gammatone_weights(sample_rate: int, n_fft: int, n_bands: int, f_min: float, f_max: float) -> np.ndarray:
    """Power response of ERB-spaced 4th-order gammatone filters on FFT bins."""
    centers = _inverse_erb_rate(np.linspace(_erb_rate(np.float64(f_min)), _erb_rate(np.float64(f_max)), n_bands))
    bandwidth = 1.019 * 24.7 * (4.37e-3 * centers + 1.0)
    freqs = librosa.fft_frequencies(sr=sample_rate, n_fft=n_fft)
    detune = (freqs[None, :] - centers[:, None]) / bandwidth[:, None]
    return np.power(1.0 + detune**2, -float(GAMMATONE_ORDER))


def _cqt_bins_per_octave(cfg: FeatureConfig) -> int:
    top = min(cfg.f_max, cfg.sample_rate / 2.0) * _CQT_HEADROOM
    octaves = math.log2(top / cfg.f_min)
    return max(1, int(math.ceil(cfg.n_bands / octaves)))


def _cqt_power(samples: np.ndarray, cfg: FeatureConfig, frame_times: np.ndarray) -> np.ndarray:
    transform = librosa.cqt(
        samples,
        sr=cfg.sample_rate,
        hop_length=cfg.hop_len,
        fmin=cfg.f_min,
        n_bins=cfg.n_bands,
        bins_per_octave=_cqt_bins_per_octave(cfg),
    )
    power = np.abs(transform).astype(np.float64) ** 2
    native_times = librosa.frames_to_time(np.arange(power.shape[1]), sr=cfg.sample_rate, hop_length=cfg.hop_len)
    if power.shape[1] == len(frame_times) and np.allclose(native_times, frame_times):
        return power
    if power.shape[1] == 1:
        return np.repeat(power, len(frame_times), axis=1)
    resample = interp1d(
        native_times,
        power,
        axis=1,
        bounds_error=False,
        fill_value=(power[:, 0], power[:, -1]),
        assume_sorted=True,
    )
    return resample(frame_times)


def compute_stack(clip: AudioClip, cfg: FeatureConfig) -> SpectrogramStack:
    """Log Mel, gammatone and CQT spectrograms on one centered frame grid."""
    samples = np.asarray(clip.samples, dtype=np.float32)
    if clip.sample_rate != cfg.sample_rate:
        samples = librosa.resample(samples, orig_sr=clip.sample_rate, target_sr=cfg.sample_rate)
    if len(samples) < cfg.win_len:
        raise FeatureError(f"Clip has {len(samples)} samples, shorter than one window ({cfg.win_len}).")

    spectrum = librosa.stft(
        samples,
        n_fft=cfg.n_fft,
        hop_length=cfg.hop_len,
        win_length=cfg.win_len,
        center=True,
    )
    power = np.abs(spectrum).astype(np.float64) ** 2
    frame_times = librosa.frames_to_time(np.arange(power.shape[1]), sr=cfg.sample_rate, hop_length=cfg.hop_len)

    spectra: dict[SpectrogramChannel, np.ndarray] = {}
    for channel in cfg.channels:
        if channel is SpectrogramChannel.MEL:
            spectra[channel] = librosa.feature.melspectrogram(
                S=power,
                sr=cfg.sample_rate,
                n_fft=cfg.n_fft,
                n_mels=cfg.n_bands,
                fmin=cfg.f_min,
                fmax=cfg.f_max,
            )
        elif channel is SpectrogramChannel.GAMMA:
            weights = gammatone_weights(cfg.sample_rate, cfg.n_fft, cfg.n_bands, cfg.f_min, cfg.f_max)
            spectra[channel] = weights @ power
        else:
            spectra[channel] = _cqt_power(samples, cfg, frame_times)

    values = np.stack([np.log(spectra[channel] + LOG_FLOOR) for channel in cfg.channels]).astype(np.float32)
    return SpectrogramStack(
        values=values,
        frame_times=frame_times,
        source_duration_s=len(samples) / float(cfg.sample_rate),
        sample_rate=cfg.sample_rate,
        hop_len=cfg.hop_len,
        channels=tuple(cfg.channels),
    )


def row_normalize(stack: SpectrogramStack) -> SpectrogramStack:
    """Z-score every (channel, band) row independently."""
    values = stack.values.astype(np.float64)
    mean = values.mean(axis=-1, keepdims=True)
    std = values.std(axis=-1, keepdims=True)
    normalized = (values - mean) / (std + ROW_EPS)
    return dataclasses.replace(stack, values=normalized.astype(stack.values.dtype))


def _shift_events(events: Iterable[EventRecord], shift_s: float, duration_s: float, min_fragment_s: float) -> List[EventRecord]:
    shifted: List[EventRecord] = []
    for event in events:
        length = event.offset_s - event.onset_s
        onset = (event.onset_s + shift_s) % duration_s
        if onset >= duration_s:
            onset -= duration_s
        offset = onset + length
        if offset <= duration_s + 1e-12:
            pieces = [(onset, min(offset, duration_s))]
        else:
            pieces = [(onset, duration_s), (0.0, offset - duration_s)]
        for start, end in pieces:
            if end - start < min_fragment_s:
                logger.debug("Dropping %.3f s fragment of %s after time shift.", end - start, event.label)
                continue
            shifted.append(dataclasses.replace(event, onset_s=start, offset_s=end))
    return sorted(shifted, key=lambda item: (item.onset_s, item.offset_s))


def _vtlp_warp(freqs: np.ndarray, alpha: float, boundary_hz: float, sample_rate: int) -> np.ndarray:
    nyquist = sample_rate / 2.0
    scale = min(alpha, 1.0)
    threshold = boundary_hz * scale / alpha
    lower = freqs * alpha
    upper = nyquist - (nyquist - freqs) * ((nyquist - boundary_hz * scale) / (nyquist - boundary_hz * scale / alpha))
    return np.where(freqs <= threshold, lower, upper)


def _apply_vtlp(samples: np.ndarray, sample_rate: int, alpha: float, boundary_hz: float) -> np.ndarray:
    n_fft = 512
    hop = n_fft // 4
    spectrum = librosa.stft(samples, n_fft=n_fft, hop_length=hop)
    freqs = librosa.fft_frequencies(sr=sample_rate, n_fft=n_fft)
    warped = _vtlp_warp(freqs, alpha, boundary_hz, sample_rate)
    source = np.interp(freqs, warped, freqs)
    magnitude = interp1d(freqs, np.abs(spectrum), axis=0, bounds_error=False, fill_value=0.0)(source)
    rebuilt = magnitude * np.exp(1j * np.angle(spectrum))
    return librosa.istft(rebuilt, hop_length=hop, length=len(samples)).astype(np.float32)


def augment_waveform(
    clip: AudioClip,
    op: AugmentOp | str,
    params: Mapping[str, Any],
    rng: np.random.Generator | None = None,
) -> AudioClip:
    """Apply one waveform augmentation and keep the event list consistent."""
    op = AugmentOp(op)
    rng = rng or np.random.default_rng()
    samples = np.asarray(clip.samples, dtype=np.float32)
    duration = clip.duration_s

    if op is AugmentOp.NOISE:
        snr_db = float(params.get("snr_db", 20.0))
        rms = float(np.sqrt(np.mean(samples.astype(np.float64) ** 2)))
        noise = rng.standard_normal(len(samples)) * rms / (10.0 ** (snr_db / 20.0))
        return dataclasses.replace(clip, samples=(samples + noise).astype(np.float32))

    if op is AugmentOp.TIME_STRETCH:
        factor = float(params.get("factor", 1.0))
        if factor <= 0:
            raise FeatureError(f"Stretch factor must be positive, got {factor}")
        stretched = librosa.effects.time_stretch(samples, rate=1.0 / factor).astype(np.float32)
        new_duration = len(stretched) / float(clip.sample_rate)
        events = [
            dataclasses.replace(event, onset_s=event.onset_s * factor, offset_s=min(event.offset_s * factor, new_duration))
            for event in clip.events
            if event.onset_s * factor < new_duration
        ]
        return dataclasses.replace(clip, samples=stretched, events=events)

    if op is AugmentOp.VTLP:
        alpha = float(params.get("alpha", 1.0))
        boundary_hz = float(params.get("boundary_hz", 0.8 * clip.sample_rate / 2.0))
        return dataclasses.replace(clip, samples=_apply_vtlp(samples, clip.sample_rate, alpha, boundary_hz))

    shift_s = float(params.get("shift_s", 0.0))
    if abs(shift_s) > duration:
        raise FeatureError(f"Shift of {shift_s} s exceeds the clip duration {duration:.3f} s")
    shift_samples = int(round(shift_s * clip.sample_rate))
    applied = shift_samples / float(clip.sample_rate)
    events = _shift_events(clip.events, applied, duration, float(params.get("min_fragment_s", 0.05)))
    return dataclasses.replace(clip, samples=np.roll(samples, shift_samples), events=events)


def mask_spectrogram(
    stack: SpectrogramStack,
    axis: MaskAxis | str,
    width: int,
    count: int,
    rng: np.random.Generator | None = None,
    starts: Sequence[int] | None = None,
) -> SpectrogramStack:
    """Replace ``count`` bands or frame spans of ``width`` with the row mean."""
    axis = MaskAxis(axis)
    if count <= 0 or width <= 0:
        return stack
    extent = stack.values.shape[2] if axis is MaskAxis.TIME else stack.values.shape[1]
    if width >= extent:
        raise FeatureError(f"Mask width {width} must be smaller than the {axis.value} extent {extent}")
    if starts is None:
        rng = rng or np.random.default_rng()
        starts = rng.integers(0, extent - width + 1, size=count).tolist()

    values = stack.values.copy()
    row_mean = stack.values.mean(axis=-1, keepdims=True)
    for start in list(starts)[:count]:
        span = slice(int(start), int(start) + width)
        if axis is MaskAxis.TIME:
            values[:, :, span] = row_mean
        else:
            values[:, span, :] = row_mean[:, span, :]
    return dataclasses.replace(stack, values=values)


def augment_randomly(clip: AudioClip, cfg: AugmentConfig, rng: np.random.Generator) -> AudioClip:
    """Per clip, apply one enabled waveform augmentation with probability ``cfg.probability``."""
    if not cfg.enabled or not cfg.ops or rng.random() >= cfg.probability:
        return clip
    op = AugmentOp(cfg.ops[int(rng.integers(len(cfg.ops)))])
    if op is AugmentOp.NOISE:
        params: dict[str, Any] = {"snr_db": rng.uniform(*cfg.noise_snr_db)}
    elif op is AugmentOp.TIME_STRETCH:
        params = {"factor": rng.uniform(*cfg.stretch_range)}
    elif op is AugmentOp.VTLP:
        params = {"alpha": rng.uniform(*cfg.vtlp_alpha_range), "boundary_hz": cfg.vtlp_boundary_hz}
    else:
        limit = cfg.shift_fraction * clip.duration_s
        params = {"shift_s": rng.uniform(-limit, limit), "min_fragment_s": cfg.min_fragment_s}
    logger.debug("Augmenting clip with %s %s.", op.value, params)
    return augment_waveform(clip, op, params, rng)


def mask_randomly(stack: SpectrogramStack, cfg: AugmentConfig, rng: np.random.Generator) -> SpectrogramStack:
    if not cfg.enabled or rng.random() >= cfg.mask_probability:
        return stack
    if rng.random() < 0.5:
        if cfg.time_mask_width < stack.n_frames:
            return mask_spectrogram(stack, MaskAxis.TIME, cfg.time_mask_width, cfg.time_mask_count, rng)
        return stack
    if cfg.freq_mask_width < stack.values.shape[1]:
        return mask_spectrogram(stack, MaskAxis.FREQUENCY, cfg.freq_mask_width, cfg.freq_mask_count, rng)
    return stack
