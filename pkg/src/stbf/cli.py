"""Command-line surface: corpus generation, batch feature extraction,
classifier training and assessment, embedding export, the adaptation
benchmark, and a gradient self-check.

Every subcommand takes --config (a UTF-8 key=value file) and repeatable
--set KEY=VALUE overrides. All randomness flows from the single config
seed through named sub-seeds. The STBF_LOG environment variable sets log
verbosity and nothing else.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import adapt
from .audio_io import (
    ManifestEntry,
    UtteranceMeta,
    load_wav,
    read_manifest,
    speed_perturb,
    strip_silence,
)
from .classifier import (
    ClassifierConfig,
    TrainedClassifier,
    assess,
    extract_embeddings,
    report_csv,
    report_dict,
    train_classifier,
)
from .config import PipelineConfig, derive_seed, load_config
from .corpus import default_profiles, generate_corpus, write_corpus
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    ParameterError,
    ShapeError,
    StbfError,
)
from .neural import LayerSpec, MtlBatch, Network, grad_check, load_checkpoint, save_checkpoint
from .spectrogram import mel_spectrogram
from .stbf_io import read_sidecar, read_stbf, write_sidecar, write_stbf
from .subspace import SubspaceConfig, UtteranceFeature, utterance_feature

_LOG = logging.getLogger("stbf")


def _setup_logging() -> None:
    name = os.environ.get("STBF_LOG", "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config field (repeatable)",
    )


def _cfg(args: argparse.Namespace) -> PipelineConfig:
    return load_config(args.config, args.overrides)


# -- gen-corpus ----------------------------------------------------------------


def cmd_gen_corpus(args: argparse.Namespace) -> int:
    cfg = _cfg(args)
    variant = args.variant or cfg.corpus_variant
    profiles = default_profiles(variant=variant, seed=cfg.seed)
    corpus = generate_corpus(
        profiles, n_per_word=cfg.n_per_word, seed=cfg.seed, sr=cfg.corpus_sr
    )
    manifest = write_corpus(Path(args.out), corpus)
    print(f"wrote {len(corpus)} utterances, {len(profiles)} speakers")
    print(f"manifest: {manifest}")
    return 0


# -- extract -------------------------------------------------------------------


def _extract_one(
    entry: ManifestEntry, cfg: PipelineConfig, sub: SubspaceConfig
) -> UtteranceFeature:
    w = load_wav(entry.path)
    if cfg.speed_factor != 1.0:
        w = speed_perturb(w, cfg.speed_factor)
    if cfg.strip_silence:
        w = strip_silence(w, cfg.vad_frame_ms, cfg.vad_floor_db)
    m = mel_spectrogram(
        w,
        n_channels=cfg.channels,
        frame_length_ms=cfg.frame_length_ms,
        frame_shift_ms=cfg.frame_shift_ms,
        fft_size=cfg.fft_size or None,
        amplitude_floor=cfg.amplitude_floor,
    )
    return utterance_feature(m, sub, entry.meta)


def cmd_extract(args: argparse.Namespace) -> int:
    cfg = _cfg(args)
    sub = SubspaceConfig(d_s=cfg.d_s, d_t=cfg.d_t, window=cfg.window, stride=cfg.stride)
    entries = read_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(entry: ManifestEntry):
        try:
            return _extract_one(entry, cfg, sub)
        except (StbfError, OSError) as exc:
            return exc

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        results = list(pool.map(work, entries))

    failures = []
    seen = set()
    n_ok = 0
    for entry, result in zip(entries, results):
        stem = Path(entry.path).stem
        if isinstance(result, Exception):
            _LOG.warning("skipped %s: %s", entry.path, result)
            failures.append({"path": entry.path, "error": str(result)})
            continue
        if stem in seen:
            failures.append({"path": entry.path, "error": "duplicate output name"})
            continue
        seen.add(stem)
        write_stbf(out_dir / f"{stem}.stbf", result.vector)
        write_sidecar(
            out_dir / f"{stem}.json",
            {
                "source": entry.path,
                "speaker_id": entry.meta.speaker_id,
                "block_id": entry.meta.block_id,
                "word_id": entry.meta.word_id,
                "intelligibility": entry.meta.intelligibility,
                "spectral_dim": int(result.spectral_part.size),
                "d_s": result.d_s,
                "d_t": result.d_t,
                "window": result.window,
                "padded": result.padded,
            },
        )
        n_ok += 1
    summary = {
        "n_rows": len(entries),
        "n_ok": n_ok,
        "n_failed": len(failures),
        "failures": failures,
    }
    write_sidecar(out_dir / "summary.json", summary)
    print(f"extracted {n_ok}/{len(entries)} utterances to {out_dir}")
    if failures:
        print(f"{len(failures)} rows skipped", file=sys.stderr)
    # a trickle of bad rows is tolerated; more than 1% is a hard failure
    return 0 if len(failures) <= 0.01 * len(entries) else 1


def load_feature_dir(path: str | Path) -> list[UtteranceFeature]:
    """Read back features written by the extract command (.stbf + .json)."""
    feats = []
    for stbf_path in sorted(Path(path).glob("*.stbf")):
        side = read_sidecar(stbf_path.with_suffix(".json"))
        vec = read_stbf(stbf_path)
        sd = int(side["spectral_dim"])
        meta = UtteranceMeta(
            speaker_id=side["speaker_id"],
            block_id=side["block_id"],
            word_id=side["word_id"],
            intelligibility=side["intelligibility"],
        )
        feats.append(
            UtteranceFeature(
                spectral_part=vec[:sd],
                temporal_part=vec[sd:],
                d_s=int(side["d_s"]),
                d_t=int(side["d_t"]),
                window=int(side["window"]),
                meta=meta,
                padded=bool(side["padded"]),
            )
        )
    if not feats:
        raise DataError(f"no .stbf features under {path}")
    return feats


def _filter_blocks(
    feats: list[UtteranceFeature], blocks: str
) -> list[UtteranceFeature]:
    if blocks == "all":
        return feats
    wanted = {b.strip() for b in blocks.split(",") if b.strip()}
    out = [f for f in feats if f.meta.block_id in wanted]
    if not out:
        raise DataError(f"no features in blocks {sorted(wanted)}")
    return out


# -- train / assess / embed ----------------------------------------------------


def _classifier_config(cfg: PipelineConfig, seed: int) -> ClassifierConfig:
    return ClassifierConfig(
        hidden=tuple(cfg.clf_hidden),
        bottleneck_width=cfg.clf_bottleneck,
        dropout_rate=cfg.clf_dropout,
        batch_size=cfg.clf_batch,
        lr=cfg.clf_lr,
        momentum=cfg.clf_momentum,
        l2=cfg.clf_l2,
        max_epochs=cfg.clf_epochs,
        patience=cfg.clf_patience,
        holdout_fraction=cfg.clf_holdout,
        label_config=cfg.label_config,
        mtl_weights=(cfg.mtl_w1, cfg.mtl_w2),
        seed=seed,
    )


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _cfg(args)
    feats = _filter_blocks(load_feature_dir(args.features), args.blocks)
    clf_cfg = _classifier_config(cfg, derive_seed(cfg.seed, f"train:{args.input_config}"))
    clf = train_classifier(feats, clf_cfg, input_config=args.input_config)
    save_checkpoint(
        args.out,
        clf.net,
        extra={
            "kind": "intelligibility-classifier",
            "input_config": clf.input_config,
            "label_config": clf.label_config,
            "intel_groups": list(clf.intel_groups),
            "speaker_ids": list(clf.speaker_ids),
            "history": clf.history,
        },
    )
    best = min((h["val_loss"] for h in clf.history), default=float("nan"))
    print(
        f"trained {clf.input_config}/{clf.label_config} on {len(feats)} utterances, "
        f"{len(clf.history)} epochs, best held-out loss {best:.4f}"
    )
    print(f"checkpoint: {args.out}")
    return 0


def _load_classifier(path: str | Path) -> TrainedClassifier:
    net, extra = load_checkpoint(path)
    if extra.get("kind") != "intelligibility-classifier":
        raise FormatError(f"{path} is not an intelligibility classifier checkpoint")
    return TrainedClassifier(
        net=net,
        input_config=extra["input_config"],
        label_config=extra["label_config"],
        intel_groups=tuple(extra["intel_groups"]),
        speaker_ids=tuple(extra["speaker_ids"]),
        history=list(extra.get("history", [])),
    )


def cmd_assess(args: argparse.Namespace) -> int:
    _cfg(args)  # validate config even though assessment itself is config-free
    clf = _load_classifier(args.checkpoint)
    feats = _filter_blocks(load_feature_dir(args.features), args.blocks)
    report = assess(clf, feats, mode=args.mode)
    csv_text = report_csv([report])
    print(csv_text, end="")
    if args.out:
        Path(f"{args.out}.csv").write_text(csv_text, encoding="utf-8")
        write_sidecar(f"{args.out}.json", report_dict(report))
        print(f"report: {args.out}.csv, {args.out}.json")
    return 0


def cmd_embed(args: argparse.Namespace) -> int:
    _cfg(args)
    clf = _load_classifier(args.checkpoint)
    feats = _filter_blocks(load_feature_dir(args.features), args.blocks)
    embs = extract_embeddings(clf, feats)
    matrix = np.stack([e.vector for e in embs])
    write_stbf(args.out, matrix)
    write_sidecar(
        Path(args.out).with_suffix(".json"),
        {
            "input_config": clf.input_config,
            "speakers": [e.speaker_id for e in embs],
            "intelligibility": {e.speaker_id: e.intelligibility for e in embs},
            "n_utterances": {e.speaker_id: e.n_utterances for e in embs},
            "dim": int(matrix.shape[1]),
        },
    )
    print(f"wrote {matrix.shape[0]} embeddings of dim {matrix.shape[1]} to {args.out}")
    return 0


# -- benchmark -------------------------------------------------------------------


def cmd_benchmark(args: argparse.Namespace) -> int:
    cfg = _cfg(args)
    tokens = [t for t in args.configs.split(",") if t.strip()]
    if not tokens:
        raise ParameterError("--configs must name at least one configuration")
    configs = []
    for tok in tokens:
        c = adapt.parse_config_token(tok)
        c.lhuc_layer = cfg.lhuc_layer
        configs.append(c)
    entries = read_manifest(args.manifest)
    corpus = [(load_wav(e.path), e.meta) for e in entries]
    sources = {
        adapt.AUX_TO_SOURCE[c.aux_feature] for c in configs if c.aux_feature != "none"
    }
    bundle = adapt.prepare_bundle(corpus, sources, cfg)
    word_cfg = adapt.WordModelConfig(
        hidden=tuple(cfg.word_hidden),
        dropout=cfg.word_dropout,
        batch_size=cfg.word_batch,
        lr=cfg.word_lr,
        lr_decay=cfg.word_lr_decay,
        momentum=cfg.word_momentum,
        l2=cfg.word_l2,
        epochs=cfg.word_epochs,
        frame_subsample=cfg.frame_subsample,
        lhuc_epochs=cfg.lhuc_epochs,
        lhuc_lr=cfg.lhuc_lr,
    )
    result = adapt.run_benchmark(
        bundle,
        configs,
        n_seeds=cfg.bench_seeds,
        master_seed=cfg.seed,
        word_cfg=word_cfg,
    )
    csv_text = adapt.benchmark_csv(result)
    print(csv_text, end="")
    if args.out:
        Path(f"{args.out}.csv").write_text(csv_text, encoding="utf-8")
        write_sidecar(f"{args.out}.json", adapt.benchmark_dict(result))
        print(f"results: {args.out}.csv, {args.out}.json")
    return 0


# -- grad-check ------------------------------------------------------------------


def cmd_grad_check(args: argparse.Namespace) -> int:
    # compact double-precision net touching every layer kind
    trunk = [
        LayerSpec("Affine", 12, 16),
        LayerSpec("ReLU", 16, 16),
        LayerSpec("BatchNorm", 16, 16),
        LayerSpec("Dropout", 16, 16, rate=0.2),
        LayerSpec("LinearBottleneckProjection", 16, 8),
        LayerSpec("Affine", 8, 16),
        LayerSpec("ReLU", 16, 16),
        LayerSpec("BatchNorm", 16, 16),
        LayerSpec("SkipJunction", 16, 16, source=2),
        LayerSpec("LHUCScale", 16, 16),
    ]
    net = Network(trunk, [("intel", 5), ("spkr", 3)], seed=args.seed, dtype=np.float64)
    rng = np.random.default_rng(derive_seed(args.seed, "grad-check-data"))
    n = 8
    batch = MtlBatch(
        rng.normal(size=(n, 12)),
        {"intel": rng.integers(0, 5, size=n), "spkr": rng.integers(0, 3, size=n)},
        {"intel": 0.5, "spkr": 0.5},
        speakers=[f"S{i % 2}" for i in range(n)],
    )
    report = grad_check(net, batch, seed=args.seed)
    worst = sorted(report["per_tensor"].items(), key=lambda kv: -kv[1])
    for name, err in worst[:10]:
        print(f"{err:12.3e}  {name}")
    print(f"max relative error: {report['max_rel_err']:.3e} (tolerance {args.tol:g})")
    ok = report["max_rel_err"] <= args.tol
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stbf",
        description="subspace-basis feature extraction, intelligibility "
        "assessment, and speaker-adaptation benchmarking",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-corpus", help="synthesize the speaker corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--variant", default=None, help="severity-band variant")
    _add_common(p)
    p.set_defaults(func=cmd_gen_corpus)

    p = subs.add_parser("extract", help="batch feature extraction from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1, help="worker pool size")
    _add_common(p)
    p.set_defaults(func=cmd_extract)

    p = subs.add_parser("train", help="train the intelligibility classifier")
    p.add_argument("--features", required=True, help="extract output directory")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--input-config", default="SB+TB", choices=("SB", "TB", "SB+TB"))
    p.add_argument("--blocks", default="B1,B3", help="training blocks, or 'all'")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("assess", help="report accuracy of a trained classifier")
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", default="5way", choices=("5way", "binary"))
    p.add_argument("--blocks", default="B2", help="evaluation blocks, or 'all'")
    p.add_argument("--out", default=None, help="report path prefix")
    _add_common(p)
    p.set_defaults(func=cmd_assess)

    p = subs.add_parser("embed", help="export speaker embeddings")
    p.add_argument("--features", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--blocks", default="B1,B3", help="source blocks, or 'all'")
    p.add_argument("--out", required=True, help="embedding matrix path (.stbf)")
    _add_common(p)
    p.set_defaults(func=cmd_embed)

    p = subs.add_parser("benchmark", help="run the adaptation benchmark")
    p.add_argument("--manifest", required=True)
    p.add_argument("--configs", default="si,sbe,sbe-lhuc,sbe-zero")
    p.add_argument("--out", default=None, help="result path prefix")
    _add_common(p)
    p.set_defaults(func=cmd_benchmark)

    p = subs.add_parser("grad-check", help="verify gradients on a compact network")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParameterError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (StbfError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
