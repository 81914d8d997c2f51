"""Spectral front-end: STFT magnitudes, mel-filterbank log-amplitude
spectrograms, and FBank+delta acoustic features.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import Waveform
from .errors import ConfigError, ParameterError


@dataclass
class MelSpectrogram:
    """C x T matrix of log mel amplitudes plus its framing parameters."""

    values: np.ndarray
    frame_length_ms: float
    frame_shift_ms: float

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]


@dataclass
class AcousticFeatures:
    """T x F feature matrix, F = 2 * static channel count (FBank + delta)."""

    values: np.ndarray


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def frame_count(n_samples: int, frame_len: int, shift: int) -> int:
    """Number of analysis frames: 1 + floor((N - frame_len) / shift)."""
    if n_samples < frame_len:
        return 1
    return 1 + (n_samples - frame_len) // shift


def stft_magnitude(
    w: Waveform,
    frame_length_ms: float = 25.0,
    frame_shift_ms: float = 10.0,
    fft_size: int | None = None,
) -> np.ndarray:
    """Hamming-windowed one-sided DFT magnitudes, (fft_size/2 + 1) x T.

    Input shorter than one frame is zero-padded to a single frame.
    """
    if frame_length_ms <= 0 or frame_shift_ms <= 0:
        raise ParameterError("frame lengths must be positive")
    sr = w.sample_rate
    frame_len = max(1, int(round(frame_length_ms * 1e-3 * sr)))
    shift = max(1, int(round(frame_shift_ms * 1e-3 * sr)))
    if fft_size is None:
        fft_size = _next_pow2(frame_len)
    if fft_size < frame_len:
        raise ParameterError(
            f"fft_size {fft_size} smaller than frame length {frame_len}"
        )
    if fft_size & (fft_size - 1):
        raise ParameterError(f"fft_size must be a power of two, got {fft_size}")
    x = np.asarray(w.samples, dtype=np.float64)
    if len(x) < frame_len:
        x = np.pad(x, (0, frame_len - len(x)))
    n_frames = frame_count(len(x), frame_len, shift)
    window = np.hamming(frame_len)
    frames = np.empty((n_frames, frame_len))
    for t in range(n_frames):
        frames[t] = x[t * shift : t * shift + frame_len]
    spect = np.abs(np.fft.rfft(frames * window, n=fft_size, axis=1))
    return spect.T


def mel_hz(m: np.ndarray | float) -> np.ndarray | float:
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def hz_mel(f: np.ndarray | float) -> np.ndarray | float:
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_filterbank(
    n_channels: int, fft_size: int, sample_rate: int
) -> np.ndarray:
    """Triangular mel filters spanning [0, Nyquist], one row per channel.

    Raises ConfigError when the FFT resolution cannot give every filter at
    least one non-zero weight.
    """
    n_bins = fft_size // 2 + 1
    if n_channels > n_bins - 2:
        raise ConfigError(
            f"channels={n_channels} exceeds usable FFT bins ({n_bins - 2})"
        )
    nyquist = sample_rate / 2.0
    mel_points = np.linspace(0.0, hz_mel(nyquist), n_channels + 2)
    hz_points = np.asarray(mel_hz(mel_points))
    bin_freqs = np.arange(n_bins) * sample_rate / fft_size
    fb = np.zeros((n_channels, n_bins))
    for c in range(n_channels):
        lo, mid, hi = hz_points[c], hz_points[c + 1], hz_points[c + 2]
        rising = (bin_freqs - lo) / (mid - lo)
        falling = (hi - bin_freqs) / (hi - mid)
        fb[c] = np.maximum(0.0, np.minimum(rising, falling))
    row_sums = fb.sum(axis=1)
    if np.any(row_sums <= 0.0):
        empty = int(np.argmin(row_sums))
        raise ConfigError(
            f"channels={n_channels} leaves mel filter {empty} empty at "
            f"fft_size={fft_size}, sample_rate={sample_rate}"
        )
    return fb


def mel_spectrogram(
    w: Waveform,
    n_channels: int = 80,
    frame_length_ms: float = 25.0,
    frame_shift_ms: float = 10.0,
    fft_size: int | None = None,
    amplitude_floor: float = 1e-10,
) -> MelSpectrogram:
    """Log mel-filterbank amplitude spectrogram, C x T."""
    if n_channels < 2:
        raise ParameterError(f"n_channels must be >= 2, got {n_channels}")
    if amplitude_floor <= 0:
        raise ParameterError("amplitude_floor must be positive")
    mag = stft_magnitude(w, frame_length_ms, frame_shift_ms, fft_size)
    if fft_size is None:
        fft_size = 2 * (mag.shape[0] - 1)
    fb = mel_filterbank(n_channels, fft_size, w.sample_rate)
    values = np.log(np.maximum(fb @ mag, amplitude_floor))
    return MelSpectrogram(
        values=values,
        frame_length_ms=frame_length_ms,
        frame_shift_ms=frame_shift_ms,
    )


def fbank_delta(m: MelSpectrogram) -> AcousticFeatures:
    """Per-frame [static ; delta] features, T x 2C.

    Deltas use a 2-frame regression window with edge replication:
    d_t = sum_n n * (x_{t+n} - x_{t-n}) / (2 * sum_n n^2), n in {1, 2}.
    """
    static = m.values.T
    n_frames = static.shape[0]
    padded = np.concatenate(
        [static[[0, 0]], static, static[[-1, -1]]], axis=0
    )
    delta = np.zeros_like(static)
    for n in (1, 2):
        delta += n * (padded[2 + n : 2 + n + n_frames] - padded[2 - n : 2 - n + n_frames])
    delta /= 2.0 * (1 + 4)
    return AcousticFeatures(values=np.concatenate([static, delta], axis=1))
