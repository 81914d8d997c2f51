"""Audio ingest: WAV parsing, speed perturbation, energy-based silence
stripping, and the corpus manifest format.

Only RIFF/WAVE with PCM 16-bit or IEEE float-32 payloads is supported;
multichannel audio is averaged to mono on load.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    EmptyAudioError,
    FormatError,
    ParameterError,
    UnsupportedCodecError,
)

INTELLIGIBILITY_GROUPS = ("VL", "L", "M", "H", "CTL")
DYSARTHRIC_GROUPS = ("VL", "L", "M", "H")

MANIFEST_HEADER = ["path", "speaker_id", "block_id", "word_id", "intelligibility"]


@dataclass
class Waveform:
    """Mono audio signal with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class UtteranceMeta:
    speaker_id: str
    block_id: str
    word_id: str
    intelligibility: str

    def __post_init__(self) -> None:
        if self.intelligibility not in INTELLIGIBILITY_GROUPS:
            raise DataError(
                f"intelligibility must be one of {INTELLIGIBILITY_GROUPS}, "
                f"got {self.intelligibility!r}"
            )


@dataclass
class ManifestEntry:
    path: str
    meta: UtteranceMeta


# -- WAV ---------------------------------------------------------------------

_FMT_PCM = 1
_FMT_IEEE_FLOAT = 3


def load_wav(path: str | Path) -> Waveform:
    """Load a RIFF/WAVE file as a mono Waveform.

    16-bit PCM is scaled by 1/32768; float32 is taken as-is. Multichannel
    data is averaged to mono. Samples are clipped to [-1, 1].
    """
    buf = Path(path).read_bytes()
    if len(buf) < 12 or buf[:4] != b"RIFF" or buf[8:12] != b"WAVE":
        raise FormatError(f"not a RIFF/WAVE file: {path}")
    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(buf):
        chunk_id = buf[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", buf, pos + 4)
        body = buf[pos + 8 : pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            if len(body) < chunk_size:
                raise FormatError(f"truncated data chunk in {path}")
            data = body
        # chunks are padded to even length
        pos += 8 + chunk_size + (chunk_size & 1)
    if fmt is None or len(fmt) < 16:
        raise FormatError(f"missing or short fmt chunk in {path}")
    if data is None:
        raise FormatError(f"missing data chunk in {path}")
    audio_format, n_channels, sample_rate, _, _, bits = struct.unpack_from(
        "<HHIIHH", fmt, 0
    )
    if n_channels < 1:
        raise FormatError(f"invalid channel count {n_channels} in {path}")
    if audio_format == _FMT_PCM and bits == 16:
        raw = np.frombuffer(data[: len(data) - len(data) % 2], dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif audio_format == _FMT_IEEE_FLOAT and bits == 32:
        raw = np.frombuffer(data[: len(data) - len(data) % 4], dtype="<f4")
        samples = raw.astype(np.float64)
    else:
        raise UnsupportedCodecError(
            f"unsupported encoding (format={audio_format}, bits={bits}) in {path}"
        )
    if samples.size == 0:
        raise EmptyAudioError(f"zero-length audio data in {path}")
    if n_channels > 1:
        usable = len(samples) - len(samples) % n_channels
        samples = samples[:usable].reshape(-1, n_channels).mean(axis=1)
    if samples.size == 0:
        raise EmptyAudioError(f"zero-length audio data in {path}")
    if not np.all(np.isfinite(samples)):
        raise FormatError(f"non-finite samples in {path}")
    samples = np.clip(samples, -1.0, 1.0)
    return Waveform(samples=samples, sample_rate=int(sample_rate), source_id=str(path))


def write_wav(path: str | Path, w: Waveform, encoding: str = "pcm16") -> None:
    """Write a mono WAV file ('pcm16' or 'float32' encoding)."""
    x = np.clip(np.asarray(w.samples, dtype=np.float64), -1.0, 1.0)
    if encoding == "pcm16":
        ints = np.clip(np.rint(x * 32768.0), -32768, 32767).astype("<i2")
        payload = ints.tobytes()
        audio_format, bits = _FMT_PCM, 16
    elif encoding == "float32":
        payload = x.astype("<f4").tobytes()
        audio_format, bits = _FMT_IEEE_FLOAT, 32
    else:
        raise ParameterError(f"unknown encoding {encoding!r}")
    block_align = bits // 8
    byte_rate = w.sample_rate * block_align
    fmt = struct.pack(
        "<HHIIHH", audio_format, 1, w.sample_rate, byte_rate, block_align, bits
    )
    body = b"WAVE"
    body += b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


# -- Transforms ---------------------------------------------------------------


def speed_perturb(w: Waveform, factor: float) -> Waveform:
    """Resample the time axis so output duration = input duration / factor.

    Linear interpolation; sample rate is unchanged, so pitch scales with
    the factor.
    """
    if not 0.5 <= factor <= 2.0:
        raise ParameterError(f"speed factor must be in [0.5, 2.0], got {factor}")
    n_in = len(w.samples)
    n_out = max(1, int(round(n_in / factor)))
    positions = np.arange(n_out) * factor
    out = np.interp(positions, np.arange(n_in), w.samples)
    return Waveform(samples=out, sample_rate=w.sample_rate, source_id=w.source_id)


def strip_silence(
    w: Waveform, frame_ms: float = 25.0, energy_floor_db: float = -35.0
) -> Waveform:
    """Drop frames whose energy falls below (max frame energy + floor dB).

    Frames are non-overlapping, with a final partial frame when the length
    does not divide evenly. The loudest frame is always retained, so an
    all-silence input yields a single frame. Idempotent: kept frames are
    re-framed identically on a second pass.
    """
    if frame_ms <= 0:
        raise ParameterError(f"frame_ms must be positive, got {frame_ms}")
    x = np.asarray(w.samples, dtype=np.float64)
    frame_len = max(1, int(round(frame_ms * 1e-3 * w.sample_rate)))
    bounds = list(range(0, len(x), frame_len))
    frames = [x[b : b + frame_len] for b in bounds]
    energy = np.array([float(np.mean(f * f)) for f in frames])
    if np.max(energy) <= 0.0:
        out = frames[0]
    else:
        with np.errstate(divide="ignore"):
            db = 10.0 * np.log10(energy)
        keep = db >= (np.max(db) + energy_floor_db)
        keep[int(np.argmax(energy))] = True
        out = np.concatenate([f for f, k in zip(frames, keep) if k])
    return Waveform(samples=out, sample_rate=w.sample_rate, source_id=w.source_id)


# -- Manifest -----------------------------------------------------------------


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Read a corpus manifest CSV (header: path,speaker_id,block_id,word_id,intelligibility)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"empty manifest {path}") from None
        if [h.strip() for h in header] != MANIFEST_HEADER:
            raise FormatError(
                f"manifest header must be {','.join(MANIFEST_HEADER)}, "
                f"got {','.join(header)}"
            )
        entries = []
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise FormatError(f"line {i}: expected {len(MANIFEST_HEADER)} fields")
            p, spk, blk, word, intel = (c.strip() for c in row)
            entries.append(
                ManifestEntry(p, UtteranceMeta(spk, blk, word, intel))
            )
    return entries


def write_manifest(path: str | Path, entries: list[ManifestEntry]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for e in entries:
            m = e.meta
            writer.writerow(
                [e.path, m.speaker_id, m.block_id, m.word_id, m.intelligibility]
            )
