"""Pipeline configuration: a flat key=value file format with CLI overrides,
validation that names the offending field, and named sub-seed derivation so
every stage draws from one master seed.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

_VARIANTS = ("default", "spectral", "rate")
_LABEL_CONFIGS = ("intel", "intel+spkr")


def derive_seed(master: int, name: str) -> int:
    """Stable named sub-seed: sha256 of "master:name", first 8 bytes."""
    digest = hashlib.sha256(f"{master}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


@dataclass
class PipelineConfig:
    seed: int = 0
    # front-end
    channels: int = 80
    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0
    fft_size: int = 0  # 0 = next power of two over the frame length
    amplitude_floor: float = 1e-10
    strip_silence: bool = False
    vad_frame_ms: float = 25.0
    vad_floor_db: float = -35.0
    speed_factor: float = 1.0
    # subspace features
    d_s: int = 2
    d_t: int = 5
    window: int = 25
    stride: int = 1
    # intelligibility classifier
    clf_hidden: tuple = (2000, 2000, 2000, 25)
    clf_bottleneck: int = 512
    clf_dropout: float = 0.2
    clf_batch: int = 64
    clf_lr: float = 0.01
    clf_momentum: float = 0.9
    clf_l2: float = 0.0
    clf_epochs: int = 100
    clf_patience: int = 10
    clf_holdout: float = 0.1
    label_config: str = "intel+spkr"
    mtl_w1: float = 0.5
    mtl_w2: float = 0.5
    # embedding classifier used inside the adaptation benchmark
    emb_clf_hidden: tuple = (512, 512, 512, 25)
    emb_clf_bottleneck: int = 128
    emb_clf_epochs: int = 30
    emb_clf_patience: int = 5
    # word classifier / adaptation benchmark
    word_hidden: tuple = (256, 256, 256)
    word_dropout: float = 0.3
    word_batch: int = 256
    word_lr: float = 0.02
    word_lr_decay: float = 0.85
    word_momentum: float = 0.9
    word_l2: float = 1e-5
    word_epochs: int = 16
    frame_subsample: int = 2
    lhuc_layer: int = 0
    lhuc_epochs: int = 2
    lhuc_lr: float = 0.05
    bench_seeds: int = 5
    # synthetic corpus
    corpus_variant: str = "default"
    corpus_sr: int = 16000
    n_per_word: int = 2

    def validate(self) -> None:
        """Raise ConfigError naming the first field violating a constraint."""
        c = self
        checks = [
            (c.channels >= 2, "channels", "must be >= 2"),
            (c.frame_length_ms > 0, "frame_length_ms", "must be positive"),
            (c.frame_shift_ms > 0, "frame_shift_ms", "must be positive"),
            (
                c.fft_size == 0 or (c.fft_size > 0 and c.fft_size & (c.fft_size - 1) == 0),
                "fft_size",
                "must be 0 (auto) or a power of two",
            ),
            (c.amplitude_floor > 0, "amplitude_floor", "must be positive"),
            (c.vad_frame_ms > 0, "vad_frame_ms", "must be positive"),
            (0.5 <= c.speed_factor <= 2.0, "speed_factor", "must be in [0.5, 2.0]"),
            (c.d_s >= 1, "d_s", "must be >= 1"),
            (c.d_t >= 1, "d_t", "must be >= 1"),
            (c.window >= 1, "window", "must be >= 1"),
            (c.stride >= 1, "stride", "must be >= 1"),
            (len(c.clf_hidden) == 4, "clf_hidden", "must list 4 widths"),
            (
                all(h >= 1 for h in c.clf_hidden),
                "clf_hidden",
                "widths must be >= 1",
            ),
            (
                c.clf_bottleneck < min(c.clf_hidden[:3]),
                "clf_bottleneck",
                "must be smaller than the hidden widths it projects",
            ),
            (0 <= c.clf_dropout < 1, "clf_dropout", "must be in [0, 1)"),
            (c.clf_batch >= 1, "clf_batch", "must be >= 1"),
            (c.clf_lr > 0, "clf_lr", "must be positive"),
            (0 <= c.clf_momentum < 1, "clf_momentum", "must be in [0, 1)"),
            (c.clf_l2 >= 0, "clf_l2", "must be >= 0"),
            (c.clf_epochs >= 1, "clf_epochs", "must be >= 1"),
            (c.clf_patience >= 1, "clf_patience", "must be >= 1"),
            (0 <= c.clf_holdout <= 0.5, "clf_holdout", "must be in [0, 0.5]"),
            (c.label_config in _LABEL_CONFIGS, "label_config", f"must be one of {_LABEL_CONFIGS}"),
            (c.mtl_w1 >= 0, "mtl_w1", "must be >= 0"),
            (c.mtl_w2 >= 0, "mtl_w2", "must be >= 0"),
            (
                abs(c.mtl_w1 + c.mtl_w2 - 1.0) < 1e-9,
                "mtl_w1",
                "mtl_w1 + mtl_w2 must sum to 1",
            ),
            (len(c.emb_clf_hidden) == 4, "emb_clf_hidden", "must list 4 widths"),
            (
                c.emb_clf_bottleneck < min(c.emb_clf_hidden[:3]),
                "emb_clf_bottleneck",
                "must be smaller than the hidden widths it projects",
            ),
            (c.emb_clf_epochs >= 1, "emb_clf_epochs", "must be >= 1"),
            (c.emb_clf_patience >= 1, "emb_clf_patience", "must be >= 1"),
            (len(c.word_hidden) >= 1, "word_hidden", "must list >= 1 width"),
            (0 <= c.word_dropout < 1, "word_dropout", "must be in [0, 1)"),
            (c.word_batch >= 1, "word_batch", "must be >= 1"),
            (c.word_lr > 0, "word_lr", "must be positive"),
            (0 < c.word_lr_decay <= 1, "word_lr_decay", "must be in (0, 1]"),
            (0 <= c.word_momentum < 1, "word_momentum", "must be in [0, 1)"),
            (c.word_l2 >= 0, "word_l2", "must be >= 0"),
            (c.word_epochs >= 1, "word_epochs", "must be >= 1"),
            (c.frame_subsample >= 1, "frame_subsample", "must be >= 1"),
            (
                0 <= c.lhuc_layer < len(c.word_hidden),
                "lhuc_layer",
                "must index a word-classifier hidden layer",
            ),
            (c.lhuc_epochs >= 1, "lhuc_epochs", "must be >= 1"),
            (c.lhuc_lr > 0, "lhuc_lr", "must be positive"),
            (c.bench_seeds >= 3, "bench_seeds", "must be >= 3"),
            (c.corpus_variant in _VARIANTS, "corpus_variant", f"must be one of {_VARIANTS}"),
            (c.corpus_sr >= 8000, "corpus_sr", "must be >= 8000"),
            (c.n_per_word >= 1, "n_per_word", "must be >= 1"),
        ]
        for ok, name, reason in checks:
            if not ok:
                raise ConfigError(f"{name}: {reason}")


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _convert(name: str, raw: str):
    if name not in _FIELD_TYPES:
        raise ConfigError(f"unknown config field {name!r}")
    current = getattr(PipelineConfig(), name)
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse value {raw!r}") from None


def parse_assignments(pairs: list[str]) -> dict:
    """Parse key=value strings (file lines or CLI --set arguments)."""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"expected key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        out[key.strip()] = _convert(key.strip(), value)
    return out


def load_config(
    path: str | Path | None = None, overrides: list[str] | None = None
) -> PipelineConfig:
    """Defaults, then key=value lines from ``path``, then CLI overrides."""
    values: dict = {}
    if path is not None:
        lines = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            lines.append(stripped)
        values.update(parse_assignments(lines))
    if overrides:
        values.update(parse_assignments(list(overrides)))
    cfg = PipelineConfig(**values)
    cfg.validate()
    return cfg
