"""Intelligibility classifier: a four-hidden-layer bottleneck DNN over
utterance features, trained with an optional speaker-ID auxiliary head,
plus assessment reports and speaker-averaged bottleneck embeddings.
"""
from __future__ import annotations

import io
import csv
from dataclasses import dataclass, field

import numpy as np

from .audio_io import DYSARTHRIC_GROUPS, INTELLIGIBILITY_GROUPS
from .config import derive_seed
from .errors import DataError, ParameterError, TrainingDataError
from .neural import LayerSpec, MtlBatch, Network, mtl_loss, train_step
from .subspace import UtteranceFeature

INPUT_CONFIGS = ("SB", "TB", "SB+TB")
LABEL_CONFIGS = ("intel", "intel+spkr")


@dataclass
class ClassifierConfig:
    hidden: tuple[int, ...] = (2000, 2000, 2000, 25)
    bottleneck_width: int = 512
    dropout_rate: float = 0.2
    batch_size: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    l2: float = 0.0
    max_epochs: int = 100
    patience: int = 10
    holdout_fraction: float = 0.1
    label_config: str = "intel+spkr"
    mtl_weights: tuple[float, float] = (0.5, 0.5)
    seed: int = 0
    dtype: str = "f4"


@dataclass
class TrainedClassifier:
    net: Network
    input_config: str
    label_config: str
    intel_groups: tuple[str, ...]
    speaker_ids: tuple[str, ...]
    history: list = field(default_factory=list)


@dataclass
class AssessmentReport:
    mode: str
    input_config: str
    label_config: str
    group_accuracy: dict[str, float]
    group_counts: dict[str, int]
    dys_avg: float
    ctl: float
    overall: float
    n_utterances: int


@dataclass
class SpeakerEmbedding:
    vector: np.ndarray
    speaker_id: str
    n_utterances: int
    intelligibility: str


def feature_matrix(features: list[UtteranceFeature], input_config: str) -> np.ndarray:
    """Stack utterance features by input configuration: spectral basis
    values (SB), windowed temporal statistics (TB), or both."""
    if input_config not in INPUT_CONFIGS:
        raise ParameterError(f"input_config must be one of {INPUT_CONFIGS}")
    if input_config == "SB":
        rows = [f.spectral_part for f in features]
    elif input_config == "TB":
        rows = [f.temporal_part for f in features]
    else:
        rows = [f.vector for f in features]
    x = np.stack(rows)
    return x


def build_classifier_trunk(input_dim: int, cfg: ClassifierConfig) -> list[LayerSpec]:
    """Four hidden layers with dropout on the first three, linear
    bottleneck projections into layers 2 and 3, and an additive skip from
    the first layer's normalized output to the third's."""
    if len(cfg.hidden) != 4:
        raise ParameterError("classifier needs exactly 4 hidden widths")
    h0, h1, h2, h3 = cfg.hidden
    if h0 != h2:
        raise ParameterError("skip connection requires hidden[0] == hidden[2]")
    bw = cfg.bottleneck_width
    r = cfg.dropout_rate
    return [
        LayerSpec("Affine", input_dim, h0),
        LayerSpec("ReLU", h0, h0),
        LayerSpec("BatchNorm", h0, h0),
        LayerSpec("Dropout", h0, h0, rate=r),
        LayerSpec("LinearBottleneckProjection", h0, bw),
        LayerSpec("Affine", bw, h1),
        LayerSpec("ReLU", h1, h1),
        LayerSpec("BatchNorm", h1, h1),
        LayerSpec("Dropout", h1, h1, rate=r),
        LayerSpec("LinearBottleneckProjection", h1, bw),
        LayerSpec("Affine", bw, h2),
        LayerSpec("ReLU", h2, h2),
        LayerSpec("BatchNorm", h2, h2),
        LayerSpec("SkipJunction", h2, h2, source=2),
        LayerSpec("Dropout", h2, h2, rate=r),
        LayerSpec("Affine", h2, h3),
        LayerSpec("ReLU", h3, h3),
        LayerSpec("BatchNorm", h3, h3),
    ]


def _labels(features: list[UtteranceFeature]) -> tuple[list[str], list[str]]:
    intels, speakers = [], []
    for f in features:
        if f.meta is None:
            raise DataError("utterance feature lacks metadata")
        intels.append(f.meta.intelligibility)
        speakers.append(f.meta.speaker_id)
    return intels, speakers


def _stratified_split(
    labels: np.ndarray, fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    # per-class shuffle; every class keeps at least one training utterance
    train_idx, val_idx = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = rng.permutation(idx)
        n_val = int(round(fraction * len(idx)))
        n_val = min(n_val, len(idx) - 1)
        val_idx.extend(idx[:n_val])
        train_idx.extend(idx[n_val:])
    return np.sort(np.array(train_idx, int)), np.sort(np.array(val_idx, int))


def train_classifier(
    features: list[UtteranceFeature],
    cfg: ClassifierConfig,
    input_config: str = "SB+TB",
) -> TrainedClassifier:
    """Train the intelligibility classifier with minibatch momentum SGD and
    early stopping on held-out cross-entropy."""
    if cfg.label_config not in LABEL_CONFIGS:
        raise ParameterError(f"label_config must be one of {LABEL_CONFIGS}")
    x = feature_matrix(features, input_config)
    intels, speakers = _labels(features)
    intel_groups = tuple(g for g in INTELLIGIBILITY_GROUPS if g in set(intels))
    speaker_ids = tuple(sorted(set(speakers)))
    if len(intel_groups) < 2:
        raise TrainingDataError(
            f"need >= 2 intelligibility groups, got {intel_groups}"
        )
    mtl = cfg.label_config == "intel+spkr"
    if mtl and len(speaker_ids) < 2:
        raise TrainingDataError("need >= 2 speakers for the speaker-ID head")
    g_index = {g: i for i, g in enumerate(intel_groups)}
    s_index = {s: i for i, s in enumerate(speaker_ids)}
    y_intel = np.array([g_index[g] for g in intels])
    y_spkr = np.array([s_index[s] for s in speakers])

    heads = [("intel", len(intel_groups))]
    weights = {"intel": 1.0}
    if mtl:
        heads.append(("spkr", len(speaker_ids)))
        weights = {"intel": cfg.mtl_weights[0], "spkr": cfg.mtl_weights[1]}
    dtype = np.float32 if cfg.dtype == "f4" else np.float64
    net = Network(
        build_classifier_trunk(x.shape[1], cfg),
        heads,
        seed=derive_seed(cfg.seed, "init"),
        dtype=dtype,
    )

    rng = np.random.default_rng(derive_seed(cfg.seed, "split"))
    tr, va = _stratified_split(y_intel, cfg.holdout_fraction, rng)
    if len(va) == 0:
        va = tr
    x_tr, x_va = x[tr], x[va]

    def val_loss() -> float:
        probs = net.forward(x_va, train=False)
        labels = {"intel": y_intel[va]}
        if mtl:
            labels["spkr"] = y_spkr[va]
        loss, _ = mtl_loss(probs, MtlBatch(x_va, labels, weights))
        return loss

    order_rng = np.random.default_rng(derive_seed(cfg.seed, "order"))
    best = np.inf
    best_snap = net.snapshot()
    patience = cfg.patience
    history = []
    clf = TrainedClassifier(
        net, input_config, cfg.label_config, intel_groups, speaker_ids, history
    )
    for epoch in range(cfg.max_epochs):
        drop_rng = np.random.default_rng(derive_seed(cfg.seed, f"dropout:{epoch}"))
        order = order_rng.permutation(len(tr))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            labels = {"intel": y_intel[tr][sel]}
            if mtl:
                labels["spkr"] = y_spkr[tr][sel]
            batch = MtlBatch(x_tr[sel], labels, weights)
            losses.append(
                train_step(
                    net, batch, cfg.lr, cfg.momentum, cfg.l2, rng=drop_rng
                )
            )
        v = val_loss()
        history.append(
            {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": v}
        )
        if v < best - 1e-6:
            best = v
            best_snap = net.snapshot()
            patience = cfg.patience
        else:
            patience -= 1
            if patience <= 0:
                break
    net.restore(best_snap)
    return clf


def predict_groups(clf: TrainedClassifier, features: list[UtteranceFeature]) -> list[str]:
    """Utterance-level argmax intelligibility group for each feature."""
    x = feature_matrix(features, clf.input_config)
    preds = []
    for start in range(0, len(x), 1024):
        probs = clf.net.forward(x[start : start + 1024], train=False)
        preds.extend(int(i) for i in np.argmax(probs["intel"], axis=1))
    return [clf.intel_groups[i] for i in preds]


def assess(
    clf: TrainedClassifier,
    features: list[UtteranceFeature],
    mode: str = "5way",
) -> AssessmentReport:
    """Utterance-level accuracy report. Binary mode collapses the four
    dysarthric groups and CTL into a two-way decision on the same head."""
    if mode not in ("5way", "binary"):
        raise ParameterError(f"mode must be '5way' or 'binary', got {mode!r}")
    preds = predict_groups(clf, features)
    truths = [f.meta.intelligibility for f in features]

    def collapse(g: str) -> str:
        return "DYS" if g in DYSARTHRIC_GROUPS else "CTL"

    if mode == "binary":
        hits = [collapse(p) == collapse(t) for p, t in zip(preds, truths)]
    else:
        hits = [p == t for p, t in zip(preds, truths)]
    hits = np.array(hits, dtype=float)
    truths_arr = np.array(truths)
    group_accuracy: dict[str, float] = {}
    group_counts: dict[str, int] = {}
    for g in INTELLIGIBILITY_GROUPS:
        sel = truths_arr == g
        group_counts[g] = int(sel.sum())
        group_accuracy[g] = float(100.0 * hits[sel].mean()) if sel.any() else float("nan")
    dys_sel = np.isin(truths_arr, DYSARTHRIC_GROUPS)
    ctl_sel = truths_arr == "CTL"
    return AssessmentReport(
        mode=mode,
        input_config=clf.input_config,
        label_config=clf.label_config,
        group_accuracy=group_accuracy,
        group_counts=group_counts,
        dys_avg=float(100.0 * hits[dys_sel].mean()) if dys_sel.any() else float("nan"),
        ctl=float(100.0 * hits[ctl_sel].mean()) if ctl_sel.any() else float("nan"),
        overall=float(100.0 * hits.mean()),
        n_utterances=len(features),
    )


def report_csv(reports: list[AssessmentReport]) -> str:
    """CSV rows shaped like the assessment table: one row per report."""
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(
        ["input_config", "label_config", "mode", "VL", "L", "M", "H",
         "DYS_avg", "CTL", "overall"]
    )
    for r in reports:
        writer.writerow(
            [r.input_config, r.label_config, r.mode]
            + [f"{r.group_accuracy[g]:.2f}" for g in DYSARTHRIC_GROUPS]
            + [f"{r.dys_avg:.2f}", f"{r.ctl:.2f}", f"{r.overall:.2f}"]
        )
    return out.getvalue()


def report_dict(r: AssessmentReport) -> dict:
    return {
        "mode": r.mode,
        "input_config": r.input_config,
        "label_config": r.label_config,
        "group_accuracy": {k: v for k, v in r.group_accuracy.items()},
        "group_counts": r.group_counts,
        "dys_avg": r.dys_avg,
        "ctl": r.ctl,
        "overall": r.overall,
        "n_utterances": r.n_utterances,
    }


def extract_embeddings(
    clf: TrainedClassifier, features: list[UtteranceFeature]
) -> list[SpeakerEmbedding]:
    """Speaker-averaged bottleneck activations (eval mode), one embedding
    per speaker present in ``features``."""
    by_speaker: dict[str, list[UtteranceFeature]] = {}
    for f in features:
        if f.meta is None:
            raise DataError("utterance feature lacks metadata")
        by_speaker.setdefault(f.meta.speaker_id, []).append(f)
    embeddings = []
    for spk in sorted(by_speaker):
        group = by_speaker[spk]
        intels = {f.meta.intelligibility for f in group}
        if len(intels) != 1:
            raise DataError(f"speaker {spk} has inconsistent intelligibility labels")
        x = feature_matrix(group, clf.input_config)
        vecs = []
        for start in range(0, len(x), 1024):
            vecs.append(clf.net.trunk_output(x[start : start + 1024]))
        mean_vec = np.concatenate(vecs).mean(axis=0)
        embeddings.append(
            SpeakerEmbedding(
                vector=np.asarray(mean_vec, dtype=np.float64),
                speaker_id=spk,
                n_utterances=len(group),
                intelligibility=next(iter(intels)),
            )
        )
    return embeddings
