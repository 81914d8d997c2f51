"""Speaker-adaptation harness: a frame-level isolated-word classifier over
FBank+delta features, optionally conditioned on 25-dim speaker embeddings
(auxiliary-feature adaptation) and per-speaker LHUC scaling, benchmarked
across configurations with a matched-pairs significance test.

Protocol: blocks B1+B3 train the word models, block B2 of the dysarthric
speakers is the test set, and block B3 doubles as the held-out adaptation
split on which LHUC vectors are re-estimated with all other parameters
frozen.
"""
from __future__ import annotations

import io
import csv
from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np

from .audio_io import DYSARTHRIC_GROUPS, Waveform, UtteranceMeta
from .classifier import ClassifierConfig, extract_embeddings, train_classifier
from .config import PipelineConfig, derive_seed
from .errors import DataError, ParameterError
from .neural import LayerSpec, MtlBatch, Network, freeze_non_lhuc, train_step
from .spectrogram import fbank_delta, mel_spectrogram
from .subspace import SubspaceConfig, UtteranceFeature, utterance_feature

TRAIN_BLOCKS = ("B1", "B3")
TEST_BLOCK = "B2"
ADAPT_BLOCK = "B3"

AUX_FEATURES = ("none", "sbe", "tbe", "sbe+tbe")
AUX_TO_SOURCE = {"sbe": "SB", "tbe": "TB", "sbe+tbe": "SB+TB"}


@dataclass
class AdaptationConfig:
    name: str
    aux_feature: str = "none"
    lhuc: bool = False
    lhuc_layer: int = 0
    zero_aux: bool = False

    def __post_init__(self) -> None:
        if self.aux_feature not in AUX_FEATURES:
            raise ParameterError(f"aux_feature must be one of {AUX_FEATURES}")
        if self.zero_aux and self.aux_feature == "none":
            raise ParameterError("zero_aux requires an auxiliary feature")

    @property
    def rng_stream(self) -> str:
        """Per-run rng stream key. Configs that feed the word model the same
        inputs share a stream, so paired contrasts (e.g. with and without
        LHUC) use common random numbers instead of reseeding noise."""
        if self.aux_feature == "none":
            return "none"
        return self.aux_feature + ("+zero" if self.zero_aux else "")


@dataclass
class WordModelConfig:
    hidden: tuple[int, ...] = (256, 256, 256)
    dropout: float = 0.3
    batch_size: int = 256
    lr: float = 0.02
    lr_decay: float = 0.85  # per-epoch multiplier; anneals run-to-run variance
    momentum: float = 0.9
    l2: float = 1e-5
    epochs: int = 16
    frame_subsample: int = 2
    lhuc_epochs: int = 2
    lhuc_lr: float = 0.05
    dtype: str = "f4"


@dataclass
class AdaptUtterance:
    utt_id: str
    speaker_id: str
    block_id: str
    word_id: str
    severity: str
    frames: np.ndarray  # T x F acoustic features


@dataclass
class AdaptBundle:
    """Everything run_benchmark needs: per-utterance acoustic frames split
    by block, speaker embeddings per source configuration, and the word
    inventory."""

    train: list[AdaptUtterance]
    test: list[AdaptUtterance]
    adapt: list[AdaptUtterance]
    embeddings: dict[str, dict[str, np.ndarray]]
    words: tuple[str, ...]
    acoustic_dim: int
    embedding_dim: int = 25


@dataclass
class ConfigResult:
    name: str
    aux_feature: str
    lhuc: bool
    zero_aux: bool
    group_errors: dict[str, float]
    avg_error: float
    per_seed_errors: list[float]
    p_vs_baseline: float | None


@dataclass
class BenchmarkResult:
    rows: list[ConfigResult]
    seeds: list[int]
    n_test: int
    baseline: str | None


# -- significance -------------------------------------------------------------


def matched_pairs_pvalue(correct_a: np.ndarray, correct_b: np.ndarray) -> float:
    """Exact two-sided sign-corrected binomial (McNemar) test on paired
    per-utterance correctness. Identical predictions give p = 1.0."""
    a = np.asarray(correct_a, dtype=bool)
    b = np.asarray(correct_b, dtype=bool)
    if a.shape != b.shape:
        raise ParameterError("paired correctness vectors must align")
    n01 = int(np.sum(a & ~b))
    n10 = int(np.sum(~a & b))
    n = n01 + n10
    if n == 0:
        return 1.0
    k = min(n01, n10)
    tail = sum(comb(n, i) for i in range(k + 1))
    p = 2 * Fraction(tail, 2**n)
    return float(min(Fraction(1), p))


# -- feature preparation -------------------------------------------------------


def compute_features(
    corpus: list[tuple[Waveform, UtteranceMeta]],
    cfg: PipelineConfig,
) -> list[UtteranceFeature]:
    """Subspace utterance features for every corpus item, in order."""
    sub = SubspaceConfig(d_s=cfg.d_s, d_t=cfg.d_t, window=cfg.window, stride=cfg.stride)
    feats = []
    for w, meta in corpus:
        m = mel_spectrogram(
            w,
            n_channels=cfg.channels,
            frame_length_ms=cfg.frame_length_ms,
            frame_shift_ms=cfg.frame_shift_ms,
            fft_size=cfg.fft_size or None,
            amplitude_floor=cfg.amplitude_floor,
        )
        feats.append(utterance_feature(m, sub, meta))
    return feats


def compute_acoustic(
    corpus: list[tuple[Waveform, UtteranceMeta]],
    cfg: PipelineConfig,
) -> list[AdaptUtterance]:
    """FBank+delta frame features for every corpus item, in order."""
    out = []
    for w, meta in corpus:
        m = mel_spectrogram(
            w,
            n_channels=cfg.channels,
            frame_length_ms=cfg.frame_length_ms,
            frame_shift_ms=cfg.frame_shift_ms,
            fft_size=cfg.fft_size or None,
            amplitude_floor=cfg.amplitude_floor,
        )
        frames = fbank_delta(m).values.astype(np.float32)
        out.append(
            AdaptUtterance(
                utt_id=w.source_id or f"{meta.speaker_id}_{meta.block_id}_{meta.word_id}",
                speaker_id=meta.speaker_id,
                block_id=meta.block_id,
                word_id=meta.word_id,
                severity=meta.intelligibility,
                frames=frames,
            )
        )
    return out


def prepare_bundle(
    corpus: list[tuple[Waveform, UtteranceMeta]],
    sources: set[str],
    cfg: PipelineConfig,
    features: list[UtteranceFeature] | None = None,
    acoustic: list[AdaptUtterance] | None = None,
) -> AdaptBundle:
    """Build the benchmark bundle from a corpus: acoustic frames, plus one
    trained embedding classifier per requested source configuration
    ("SB", "TB", "SB+TB"), each trained on blocks B1+B3 only."""
    if features is None:
        features = compute_features(corpus, cfg)
    if acoustic is None:
        acoustic = compute_acoustic(corpus, cfg)
    train_feats = [f for f in features if f.meta.block_id in TRAIN_BLOCKS]
    embeddings: dict[str, dict[str, np.ndarray]] = {}
    for source in sorted(sources):
        clf_cfg = ClassifierConfig(
            hidden=tuple(cfg.emb_clf_hidden),
            bottleneck_width=cfg.emb_clf_bottleneck,
            dropout_rate=cfg.clf_dropout,
            batch_size=cfg.clf_batch,
            lr=cfg.clf_lr,
            momentum=cfg.clf_momentum,
            l2=cfg.clf_l2,
            max_epochs=cfg.emb_clf_epochs,
            patience=cfg.emb_clf_patience,
            holdout_fraction=cfg.clf_holdout,
            label_config=cfg.label_config,
            mtl_weights=(cfg.mtl_w1, cfg.mtl_w2),
            seed=derive_seed(cfg.seed, f"embed-clf:{source}"),
        )
        clf = train_classifier(train_feats, clf_cfg, input_config=source)
        embeddings[source] = {
            e.speaker_id: e.vector for e in extract_embeddings(clf, train_feats)
        }
    words = tuple(sorted({u.word_id for u in acoustic}))
    return AdaptBundle(
        train=[u for u in acoustic if u.block_id in TRAIN_BLOCKS],
        test=[
            u
            for u in acoustic
            if u.block_id == TEST_BLOCK and u.severity in DYSARTHRIC_GROUPS
        ],
        adapt=[u for u in acoustic if u.block_id == ADAPT_BLOCK],
        embeddings=embeddings,
        words=words,
        acoustic_dim=acoustic[0].frames.shape[1] if acoustic else 0,
    )


# -- word classifier -----------------------------------------------------------


def build_word_trunk(
    input_dim: int,
    hidden: tuple[int, ...],
    lhuc: bool,
    lhuc_layer: int,
    dropout: float = 0.0,
) -> list[LayerSpec]:
    """Affine/ReLU/BatchNorm blocks, with an LHUC scaling layer after the
    chosen hidden block when enabled and dropout closing each block."""
    if lhuc and not 0 <= lhuc_layer < len(hidden):
        raise ParameterError(f"lhuc_layer {lhuc_layer} outside hidden layers")
    trunk = []
    d = input_dim
    for j, h in enumerate(hidden):
        trunk.append(LayerSpec("Affine", d, h))
        trunk.append(LayerSpec("ReLU", h, h))
        trunk.append(LayerSpec("BatchNorm", h, h))
        if lhuc and j == lhuc_layer:
            trunk.append(LayerSpec("LHUCScale", h, h))
        if dropout > 0.0:
            trunk.append(LayerSpec("Dropout", h, h, rate=dropout))
        d = h
    return trunk


def _aux_vector(
    bundle: AdaptBundle, adapt_cfg: AdaptationConfig, speaker_id: str
) -> np.ndarray | None:
    if adapt_cfg.aux_feature == "none":
        return None
    source = AUX_TO_SOURCE[adapt_cfg.aux_feature]
    table = bundle.embeddings.get(source)
    if table is None or speaker_id not in table:
        raise DataError(
            f"missing {source} embedding for speaker {speaker_id}"
        )
    vec = table[speaker_id]
    return np.zeros_like(vec) if adapt_cfg.zero_aux else vec


def _assemble(
    utts: list[AdaptUtterance],
    bundle: AdaptBundle,
    adapt_cfg: AdaptationConfig,
    subsample: int,
) -> tuple[np.ndarray, np.ndarray, list[str], np.ndarray]:
    """Stack (sub-sampled) frames with per-frame word labels and speaker
    ids; returns (X, y, speakers, spans) with spans = rows per utterance."""
    word_index = {wrd: i for i, wrd in enumerate(bundle.words)}
    mats, labels, speakers, spans = [], [], [], []
    for u in utts:
        frames = u.frames[::subsample]
        aux = _aux_vector(bundle, adapt_cfg, u.speaker_id)
        if aux is not None:
            frames = np.concatenate(
                [frames, np.tile(aux.astype(frames.dtype), (len(frames), 1))],
                axis=1,
            )
        mats.append(frames)
        labels.extend([word_index[u.word_id]] * len(frames))
        speakers.extend([u.speaker_id] * len(frames))
        spans.append(len(frames))
    return (
        np.concatenate(mats, axis=0),
        np.array(labels),
        speakers,
        np.array(spans),
    )


def train_adapted(
    bundle: AdaptBundle,
    adapt_cfg: AdaptationConfig,
    word_cfg: WordModelConfig,
    seed: int,
) -> Network:
    """Train the word classifier on blocks B1+B3 under one adaptation
    configuration. LHUC configurations learn per-speaker vectors jointly
    (speaker-adaptive training)."""
    x, y, speakers, _ = _assemble(
        bundle.train, bundle, adapt_cfg, word_cfg.frame_subsample
    )
    dtype = np.float32 if word_cfg.dtype == "f4" else np.float64
    net = Network(
        build_word_trunk(
            x.shape[1],
            tuple(word_cfg.hidden),
            adapt_cfg.lhuc,
            adapt_cfg.lhuc_layer,
            word_cfg.dropout,
        ),
        [("word", len(bundle.words))],
        seed=derive_seed(seed, "init"),
        dtype=dtype,
    )
    order_rng = np.random.default_rng(derive_seed(seed, "order"))
    spk_arr = np.array(speakers)
    lr = word_cfg.lr
    for epoch in range(word_cfg.epochs):
        drop_rng = np.random.default_rng(derive_seed(seed, f"dropout:{epoch}"))
        order = order_rng.permutation(len(x))
        for start in range(0, len(order), word_cfg.batch_size):
            sel = order[start : start + word_cfg.batch_size]
            batch = MtlBatch(
                x[sel],
                {"word": y[sel]},
                {"word": 1.0},
                speakers=list(spk_arr[sel]) if adapt_cfg.lhuc else None,
            )
            train_step(
                net, batch, lr, word_cfg.momentum, word_cfg.l2, rng=drop_rng
            )
        lr *= word_cfg.lr_decay
    return net


def lhuc_adapt(
    bundle: AdaptBundle,
    net: Network,
    adapt_cfg: AdaptationConfig,
    word_cfg: WordModelConfig,
    seed: int,
) -> None:
    """Re-estimate LHUC vectors on the adaptation block with every other
    parameter frozen. Batchnorm runs on its frozen running statistics."""
    if not net.has_lhuc():
        raise ParameterError("network has no LHUC layer to adapt")
    x, y, speakers, _ = _assemble(
        bundle.adapt, bundle, adapt_cfg, word_cfg.frame_subsample
    )
    net.velocity.clear()
    spk_arr = np.array(speakers)
    order_rng = np.random.default_rng(derive_seed(seed, "lhuc-order"))
    for _ in range(word_cfg.lhuc_epochs):
        order = order_rng.permutation(len(x))
        for start in range(0, len(order), word_cfg.batch_size):
            sel = order[start : start + word_cfg.batch_size]
            batch = MtlBatch(
                x[sel],
                {"word": y[sel]},
                {"word": 1.0},
                speakers=list(spk_arr[sel]),
            )
            train_step(
                net,
                batch,
                word_cfg.lhuc_lr,
                word_cfg.momentum,
                l2=0.0,
                freeze=freeze_non_lhuc,
                train_mode=False,
            )


def predict_words(
    bundle: AdaptBundle,
    net: Network,
    adapt_cfg: AdaptationConfig,
    utts: list[AdaptUtterance],
) -> np.ndarray:
    """Per-utterance correctness: argmax of the mean frame posterior."""
    x, _, speakers, spans = _assemble(utts, bundle, adapt_cfg, 1)
    word_index = {wrd: i for i, wrd in enumerate(bundle.words)}
    n_words = len(bundle.words)
    posts = np.empty((len(x), n_words), dtype=np.float64)
    needs_spk = net.has_lhuc()
    for start in range(0, len(x), 4096):
        stop = min(start + 4096, len(x))
        probs = net.forward(
            x[start:stop],
            train=False,
            speakers=speakers[start:stop] if needs_spk else None,
        )
        posts[start:stop] = probs["word"]
    correct = np.zeros(len(utts), dtype=bool)
    row = 0
    for i, u in enumerate(utts):
        block = posts[row : row + spans[i]]
        row += spans[i]
        correct[i] = int(np.argmax(block.mean(axis=0))) == word_index[u.word_id]
    return correct


# -- benchmark -----------------------------------------------------------------


def parse_config_token(token: str) -> AdaptationConfig:
    """Parse CLI tokens like 'si', 'sbe', 'sbe+tbe-lhuc', 'sbe-zero'."""
    tok = token.strip().lower()
    name = tok
    lhuc = tok.endswith("-lhuc")
    if lhuc:
        tok = tok[: -len("-lhuc")]
    zero = tok.endswith("-zero")
    if zero:
        tok = tok[: -len("-zero")]
    aux = "none" if tok == "si" else tok
    if aux != "none" and aux not in AUX_FEATURES:
        raise ParameterError(f"unknown benchmark config {token!r}")
    return AdaptationConfig(name=name, aux_feature=aux, lhuc=lhuc, zero_aux=zero)


def run_benchmark(
    bundle: AdaptBundle,
    configs: list[AdaptationConfig],
    n_seeds: int = 5,
    master_seed: int = 0,
    word_cfg: WordModelConfig | None = None,
) -> BenchmarkResult:
    """Train and evaluate every configuration across seeds on fixed splits,
    with a pooled matched-pairs test against the speaker-independent
    baseline (the first config with no auxiliary feature and no LHUC)."""
    if not configs:
        raise ParameterError("config list must be non-empty")
    if n_seeds < 3:
        raise ParameterError(f"n_seeds must be >= 3, got {n_seeds}")
    word_cfg = word_cfg or WordModelConfig()
    baseline = next(
        (c.name for c in configs if c.aux_feature == "none" and not c.lhuc), None
    )
    severities = np.array([u.severity for u in bundle.test])
    pooled: dict[str, list[np.ndarray]] = {c.name: [] for c in configs}
    per_seed_err: dict[str, list[float]] = {c.name: [] for c in configs}
    group_err: dict[str, list[dict[str, float]]] = {c.name: [] for c in configs}
    seeds = [derive_seed(master_seed, f"bench:{s}") for s in range(n_seeds)]
    for seed in seeds:
        for cfg in configs:
            run_seed = derive_seed(seed, f"cfg:{cfg.rng_stream}")
            net = train_adapted(bundle, cfg, word_cfg, run_seed)
            if cfg.lhuc:
                lhuc_adapt(bundle, net, cfg, word_cfg, run_seed)
            correct = predict_words(bundle, net, cfg, bundle.test)
            pooled[cfg.name].append(correct)
            per_seed_err[cfg.name].append(float(100.0 * np.mean(~correct)))
            group_err[cfg.name].append(
                {
                    g: float(100.0 * np.mean(~correct[severities == g]))
                    for g in DYSARTHRIC_GROUPS
                    if np.any(severities == g)
                }
            )
    rows = []
    for cfg in configs:
        pooled_vec = np.concatenate(pooled[cfg.name])
        if baseline is None or cfg.name == baseline:
            p_val = None
        else:
            p_val = matched_pairs_pvalue(
                np.concatenate(pooled[baseline]), pooled_vec
            )
        groups = {
            g: float(np.mean([ge[g] for ge in group_err[cfg.name] if g in ge]))
            for g in DYSARTHRIC_GROUPS
        }
        rows.append(
            ConfigResult(
                name=cfg.name,
                aux_feature=cfg.aux_feature,
                lhuc=cfg.lhuc,
                zero_aux=cfg.zero_aux,
                group_errors=groups,
                avg_error=float(np.mean(per_seed_err[cfg.name])),
                per_seed_errors=per_seed_err[cfg.name],
                p_vs_baseline=p_val,
            )
        )
    return BenchmarkResult(
        rows=rows, seeds=seeds, n_test=len(bundle.test), baseline=baseline
    )


def benchmark_csv(result: BenchmarkResult) -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["config", "VL", "L", "M", "H", "Avg", "p_value"])
    for r in result.rows:
        writer.writerow(
            [r.name]
            + [f"{r.group_errors[g]:.2f}" for g in DYSARTHRIC_GROUPS]
            + [
                f"{r.avg_error:.2f}",
                "" if r.p_vs_baseline is None else f"{r.p_vs_baseline:.6f}",
            ]
        )
    return out.getvalue()


def benchmark_dict(result: BenchmarkResult) -> dict:
    return {
        "baseline": result.baseline,
        "seeds": result.seeds,
        "n_test": result.n_test,
        "rows": [
            {
                "config": r.name,
                "aux_feature": r.aux_feature,
                "lhuc": r.lhuc,
                "zero_aux": r.zero_aux,
                "group_errors": r.group_errors,
                "avg_error": r.avg_error,
                "per_seed_errors": r.per_seed_errors,
                "p_vs_baseline": r.p_vs_baseline,
            }
            for r in result.rows
        ],
    }
