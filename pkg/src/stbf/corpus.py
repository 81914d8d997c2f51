"""Synthetic multi-speaker isolated-word corpus.

Words are short phone sequences rendered by additive formant synthesis:
voiced phones sum harmonics of the speaker's fundamental shaped by
Lorentzian formant resonances; fricatives and stop bursts are
spectrally-shaped noise. Speaker profiles then degrade the template along
the axes the benchmark separates: spectral tilt, formant shift, speaking
rate (applied at synthesis time so spectra are preserved), inserted pauses,
and additive noise. Everything is deterministic given the corpus seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import ManifestEntry, UtteranceMeta, Waveform, write_manifest, write_wav
from .config import derive_seed
from .errors import ConfigError, ParameterError


@dataclass
class PhoneSpec:
    kind: str  # vowel | nasal | fricative | stop
    dur_ms: float
    amp: float
    formants: tuple[float, ...] = ()
    bandwidths: tuple[float, ...] = ()
    noise_center: float = 0.0
    noise_bw: float = 0.0


# The five vowels form a geometric continuum: formants AND bandwidths of
# each are the previous vowel's times 1.12. A speaker's formant_shift_ratio
# slides the whole continuum along that same axis, so one speaker's vowel k
# can be spectrally identical to another speaker's vowel k+1. A single
# frame cannot tell them apart; the speaker's shift (recoverable from
# speaker-level spectral evidence) can.
PHONES: dict[str, PhoneSpec] = {
    "u": PhoneSpec("vowel", 140, 0.28, (330.0, 850.0, 2210.0), (80.0, 105.0, 165.0)),
    "o": PhoneSpec("vowel", 140, 0.28, (369.6, 952.0, 2475.2), (89.6, 117.6, 184.8)),
    "a": PhoneSpec("vowel", 140, 0.28, (413.95, 1066.24, 2772.22), (100.35, 131.71, 206.98)),
    "e": PhoneSpec("vowel", 140, 0.28, (463.63, 1194.19, 3104.89), (112.39, 147.52, 231.81)),
    "i": PhoneSpec("vowel", 140, 0.28, (519.26, 1337.49, 3477.48), (125.88, 165.22, 259.63)),
    "m": PhoneSpec("nasal", 90, 0.16, (250, 1000, 2200), (60, 120, 180)),
    "n": PhoneSpec("nasal", 90, 0.16, (300, 1100, 2300), (60, 120, 180)),
    "s": PhoneSpec("fricative", 100, 0.10, noise_center=6000, noise_bw=1400),
    "sh": PhoneSpec("fricative", 100, 0.12, noise_center=3300, noise_bw=1100),
    "t": PhoneSpec("stop", 60, 0.16, noise_center=4200, noise_bw=1600),
    "k": PhoneSpec("stop", 60, 0.16, noise_center=1900, noise_bw=900),
}

# 4 consonant frames x 5 vowels; within-frame confusions are vowel
# confusions, which the shifted vowel continuum makes speaker-dependent
VOCAB: dict[str, tuple[str, ...]] = {
    "mas": ("m", "a", "s"), "mes": ("m", "e", "s"), "mis": ("m", "i", "s"),
    "mos": ("m", "o", "s"), "mus": ("m", "u", "s"),
    "kan": ("k", "a", "n"), "ken": ("k", "e", "n"), "kin": ("k", "i", "n"),
    "kon": ("k", "o", "n"), "kun": ("k", "u", "n"),
    "sha": ("sh", "a"), "she": ("sh", "e"), "shi": ("sh", "i"),
    "sho": ("sh", "o"), "shu": ("sh", "u"),
    "tak": ("t", "a", "k"), "tek": ("t", "e", "k"), "tik": ("t", "i", "k"),
    "tok": ("t", "o", "k"), "tuk": ("t", "u", "k"),
}

BLOCKS = ("B1", "B2", "B3")


@dataclass
class SyntheticSpeakerProfile:
    speaker_id: str
    spectral_tilt_db_per_octave: float
    formant_shift_ratio: float
    rate_factor: float
    pause_insertion_prob: float
    noise_db: float
    severity: str

    def __post_init__(self) -> None:
        if not 0.4 <= self.rate_factor <= 1.5:
            raise ConfigError(
                f"rate_factor: must be in [0.4, 1.5], got {self.rate_factor}"
            )
        if not 0.8 <= self.formant_shift_ratio <= 1.2:
            raise ConfigError(
                f"formant_shift_ratio: must be in [0.8, 1.2], "
                f"got {self.formant_shift_ratio}"
            )
        if not 0.0 <= self.pause_insertion_prob <= 1.0:
            raise ConfigError(
                f"pause_insertion_prob: must be in [0, 1], "
                f"got {self.pause_insertion_prob}"
            )


# Severity bands: (tilt dB/oct, rate, pause prob, noise dB). Lower
# intelligibility = steeper tilt, slower rate, more pauses, more noise.
# Formant shift is deliberately NOT band-coupled: each speaker draws an
# independent vowel-space scaling, so single frames reveal severity but
# not the speaker's vowel geometry. Resolving that requires speaker-level
# spectral evidence, which is exactly what the embeddings summarize.
SEVERITY_BANDS = {
    "default": {
        "VL": (-6.0, 0.55, 0.25, -32.0),
        "L": (-4.5, 0.70, 0.15, -38.0),
        "M": (-3.0, 0.85, 0.08, -44.0),
        "H": (-1.5, 0.95, 0.04, -50.0),
        "CTL": (0.0, 1.10, 0.01, -60.0),
    },
    # groups differ only spectrally (tilt, noise floor); rate and pauses equal
    "spectral": {
        "VL": (-6.0, 1.00, 0.05, -32.0),
        "L": (-4.5, 1.00, 0.05, -38.0),
        "M": (-3.0, 1.00, 0.05, -44.0),
        "H": (-1.5, 1.00, 0.05, -50.0),
        "CTL": (0.0, 1.00, 0.05, -60.0),
    },
    # groups differ only in speaking rate; spectral traits identical
    "rate": {
        "VL": (0.0, 0.50, 0.05, -55.0),
        "L": (0.0, 0.65, 0.05, -55.0),
        "M": (0.0, 0.85, 0.05, -55.0),
        "H": (0.0, 1.00, 0.05, -55.0),
        "CTL": (0.0, 1.15, 0.05, -55.0),
    },
}

_SHIFT_RANGE = (0.88, 1.10)

_N_DYS_PER_GROUP = 4
_N_CTL = 13


# Fundamental frequency is drawn per utterance, not per speaker: source
# variation within a speaker dwarfs between-speaker differences at this
# scale, so harmonic spacing carries no speaker identity.
_F0_RANGE = (130.0, 210.0)


def default_profiles(variant: str = "default", seed: int = 0) -> list[SyntheticSpeakerProfile]:
    """16 dysarthric speakers (4 per severity band) plus 13 controls, with
    seeded per-speaker jitter inside each band."""
    if variant not in SEVERITY_BANDS:
        raise ParameterError(f"variant must be one of {tuple(SEVERITY_BANDS)}")
    bands = SEVERITY_BANDS[variant]
    profiles = []
    dys_ids = []
    idx = 1
    for sev in ("VL", "L", "M", "H"):
        for _ in range(_N_DYS_PER_GROUP):
            dys_ids.append((f"DYS{idx:02d}", sev))
            idx += 1
    ctl_ids = [(f"CTL{j + 1:02d}", "CTL") for j in range(_N_CTL)]
    for spk, sev in dys_ids + ctl_ids:
        tilt, rate, pause, noise = bands[sev]
        rng = np.random.default_rng(derive_seed(seed, f"profile:{variant}:{spk}"))
        jit = rng.uniform(-1.0, 1.0, size=5)
        lo, hi = _SHIFT_RANGE
        shift = lo + (hi - lo) * 0.5 * (jit[1] + 1.0)
        profiles.append(
            SyntheticSpeakerProfile(
                speaker_id=spk,
                spectral_tilt_db_per_octave=tilt + 0.3 * jit[0],
                formant_shift_ratio=float(shift),
                rate_factor=float(np.clip(rate + 0.03 * jit[2], 0.4, 1.5)),
                pause_insertion_prob=float(np.clip(pause + 0.01 * jit[3], 0.0, 1.0)),
                noise_db=noise + 2.0 * jit[4],
                severity=sev,
            )
        )
    return profiles


# -- synthesis ----------------------------------------------------------------


def _edge_envelope(n: int, sr: int, edge_ms: float = 8.0) -> np.ndarray:
    edge = min(n // 2, max(1, int(edge_ms * 1e-3 * sr)))
    env = np.ones(n)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(edge) / edge)
    env[:edge] = ramp
    env[n - edge :] = ramp[::-1]
    return env


def _shaped_noise(n: int, sr: int, center: float, bw: float, rng) -> np.ndarray:
    noise = rng.standard_normal(n)
    spec = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spec *= np.exp(-0.5 * ((freqs - center) / bw) ** 2)
    return np.fft.irfft(spec, n=n)


def _harmonic_phone(
    spec: PhoneSpec, f0: float, shift: float, n: int, sr: int
) -> np.ndarray:
    t = np.arange(n) / sr
    formants = np.asarray(spec.formants) * shift
    bws = np.asarray(spec.bandwidths)
    out = np.zeros(n)
    k = 1
    while k * f0 < min(sr / 2.0 - 200.0, 4500.0):
        f = k * f0
        res = np.sum(1.0 / (1.0 + ((f - formants) / bws) ** 2))
        amp = res * k ** -0.2
        out += amp * np.sin(2.0 * np.pi * f * t)
        k += 1
    return out


def synthesize_phone(
    name: str, f0: float, shift: float, dur_s: float, sr: int, rng
) -> np.ndarray:
    """Render one phone at the given duration (rate already applied).

    Only vowels move with the speaker's formant shift. Consonants are
    shift-invariant so no single frame betrays where the speaker's vowel
    continuum sits.
    """
    spec = PHONES[name]
    n = max(8, int(round(dur_s * sr)))
    if spec.kind == "vowel":
        x = _harmonic_phone(spec, f0, shift, n, sr)
    elif spec.kind == "nasal":
        x = _harmonic_phone(spec, f0, 1.0, n, sr)
    elif spec.kind == "fricative":
        x = _shaped_noise(n, sr, spec.noise_center, spec.noise_bw, rng)
    elif spec.kind == "stop":
        # closure silence then a decaying burst
        n_gap = n // 3
        burst = _shaped_noise(n - n_gap, sr, spec.noise_center, spec.noise_bw, rng)
        burst *= np.exp(-np.arange(n - n_gap) / (0.010 * sr))
        x = np.concatenate([np.zeros(n_gap), burst])
    else:
        raise ParameterError(f"unknown phone kind {spec.kind!r}")
    peak = np.max(np.abs(x))
    if peak > 0:
        x = x * (spec.amp / peak)
    return x * _edge_envelope(n, sr)


def synthesize_word(
    phones: tuple[str, ...],
    f0: float,
    rate: float,
    shift: float,
    pause_prob: float,
    rng,
    sr: int,
) -> np.ndarray:
    """Concatenate phones with rate-scaled durations, seeded duration and
    pitch jitter, and probabilistic inter-phone pauses."""
    f0_utt = f0 * (1.0 + 0.04 * rng.uniform(-1.0, 1.0))  # small within-utterance drift
    margin = np.zeros(int(0.015 * sr))
    segments = [margin]
    for idx, name in enumerate(phones):
        base = PHONES[name].dur_ms * 1e-3
        dur = base * (1.0 + 0.08 * rng.uniform(-1.0, 1.0)) / rate
        segments.append(synthesize_phone(name, f0_utt, shift, dur, sr, rng))
        if idx < len(phones) - 1 and rng.random() < pause_prob:
            pause = rng.uniform(0.06, 0.15) / rate
            segments.append(np.zeros(int(round(pause * sr))))
    segments.append(margin)
    return np.concatenate(segments)


def tilt_filter(x: np.ndarray, db_per_octave: float, sr: int) -> np.ndarray:
    """Spectral tilt above a 1 kHz reference: gain(f) = tilt * log2(f/1kHz)
    dB for f > 1 kHz, unity below. Zero tilt is an exact identity."""
    if db_per_octave == 0.0:
        return x
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(len(x), 1.0 / sr)
    octaves = np.log2(np.maximum(freqs, 1000.0) / 1000.0)
    spec *= 10.0 ** (db_per_octave * octaves / 20.0)
    return np.fft.irfft(spec, n=len(x))


def generate_utterance(
    profile: SyntheticSpeakerProfile,
    word: str,
    rng: np.random.Generator,
    sr: int = 16000,
) -> Waveform:
    """Render one utterance of ``word`` under a speaker profile.

    An identity profile (rate 1, shift 1, tilt 0, no pauses, noise -inf)
    reproduces the untransformed template exactly.
    """
    if word not in VOCAB:
        raise ParameterError(f"unknown word {word!r}")
    x = synthesize_word(
        VOCAB[word],
        float(rng.uniform(*_F0_RANGE)),
        profile.rate_factor,
        profile.formant_shift_ratio,
        profile.pause_insertion_prob,
        rng,
        sr,
    )
    x = tilt_filter(x, profile.spectral_tilt_db_per_octave, sr)
    if math.isfinite(profile.noise_db):
        rms = float(np.sqrt(np.mean(x * x)))
        sigma = rms * 10.0 ** (profile.noise_db / 20.0)
        x = x + sigma * rng.standard_normal(len(x))
    x = np.clip(x, -1.0, 1.0)
    return Waveform(samples=x, sample_rate=sr, source_id="")


def generate_corpus(
    profiles: list[SyntheticSpeakerProfile],
    vocab: dict[str, tuple[str, ...]] | None = None,
    n_per_word: int = 1,
    seed: int = 0,
    sr: int = 16000,
) -> list[tuple[Waveform, UtteranceMeta]]:
    """Render the full corpus: every speaker says every word once per
    block (times n_per_word), across 3 blocks. Deterministic per seed."""
    vocab = VOCAB if vocab is None else vocab
    if not vocab:
        raise ParameterError("vocabulary must be non-empty")
    if len({p.severity for p in profiles}) < 2:
        raise ParameterError("profiles must cover >= 2 severity groups")
    out = []
    for profile in profiles:
        for block in BLOCKS:
            for word in vocab:
                for rep in range(n_per_word):
                    rng = np.random.default_rng(
                        derive_seed(
                            seed,
                            f"utt:{profile.speaker_id}:{block}:{word}:{rep}",
                        )
                    )
                    w = generate_utterance(profile, word, rng, sr)
                    w.source_id = f"{profile.speaker_id}_{block}_{word}_{rep}"
                    meta = UtteranceMeta(
                        speaker_id=profile.speaker_id,
                        block_id=block,
                        word_id=word,
                        intelligibility=profile.severity,
                    )
                    out.append((w, meta))
    return out


def write_corpus(
    out_dir: str | Path, corpus: list[tuple[Waveform, UtteranceMeta]]
) -> Path:
    """Write WAVs plus manifest.csv; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for w, meta in corpus:
        name = f"{w.source_id}.wav"
        write_wav(out_dir / name, w, encoding="pcm16")
        entries.append(ManifestEntry(str(out_dir / name), meta))
    manifest = out_dir / "manifest.csv"
    write_manifest(manifest, entries)
    return manifest
