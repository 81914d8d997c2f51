"""Spectro-temporal subspace basis features for speech intelligibility
assessment and speaker adaptation.

The pipeline: WAV audio -> log mel-spectrogram -> SVD -> fixed-length
utterance feature (spectral + temporal basis statistics) -> bottleneck DNN
intelligibility classifier -> 25-dim speaker embeddings -> auxiliary-feature
and LHUC adaptation of a word classifier, with a matched-pairs benchmark.
"""
from .audio_io import (
    DYSARTHRIC_GROUPS,
    INTELLIGIBILITY_GROUPS,
    ManifestEntry,
    UtteranceMeta,
    Waveform,
    load_wav,
    read_manifest,
    speed_perturb,
    strip_silence,
    write_manifest,
    write_wav,
)
from .classifier import (
    AssessmentReport,
    ClassifierConfig,
    SpeakerEmbedding,
    TrainedClassifier,
    assess,
    extract_embeddings,
    predict_groups,
    train_classifier,
)
from .config import PipelineConfig, derive_seed, load_config
from .corpus import (
    SyntheticSpeakerProfile,
    VOCAB,
    default_profiles,
    generate_corpus,
    generate_utterance,
    write_corpus,
)
from .errors import (
    ConfigError,
    DataError,
    DecompositionError,
    EmptyAudioError,
    FormatError,
    NumericError,
    NumericInputError,
    ParameterError,
    ShapeError,
    StbfError,
    TrainingDataError,
    UnsupportedCodecError,
)
from .neural import (
    LayerSpec,
    MtlBatch,
    Network,
    grad_check,
    load_checkpoint,
    mtl_loss,
    save_checkpoint,
    sgd_step,
    train_step,
)
from .spectrogram import (
    AcousticFeatures,
    MelSpectrogram,
    fbank_delta,
    mel_filterbank,
    mel_spectrogram,
    stft_magnitude,
)
from .stbf_io import pack_tensor, read_stbf, unpack_tensor, write_stbf
from .subspace import (
    SubspaceConfig,
    SubspaceDecomposition,
    UtteranceFeature,
    svd,
    temporal_window_stats,
    truncate,
    utterance_feature,
)
from .adapt import (
    AdaptationConfig,
    AdaptBundle,
    BenchmarkResult,
    WordModelConfig,
    matched_pairs_pvalue,
    prepare_bundle,
    run_benchmark,
)

__version__ = "0.1.0"

__all__ = [
    "AcousticFeatures",
    "AdaptBundle",
    "AdaptationConfig",
    "AssessmentReport",
    "BenchmarkResult",
    "ClassifierConfig",
    "ConfigError",
    "DYSARTHRIC_GROUPS",
    "DataError",
    "DecompositionError",
    "EmptyAudioError",
    "FormatError",
    "INTELLIGIBILITY_GROUPS",
    "LayerSpec",
    "ManifestEntry",
    "MelSpectrogram",
    "MtlBatch",
    "Network",
    "NumericError",
    "NumericInputError",
    "ParameterError",
    "PipelineConfig",
    "ShapeError",
    "SpeakerEmbedding",
    "StbfError",
    "SubspaceConfig",
    "SubspaceDecomposition",
    "SyntheticSpeakerProfile",
    "TrainedClassifier",
    "TrainingDataError",
    "UnsupportedCodecError",
    "UtteranceFeature",
    "UtteranceMeta",
    "VOCAB",
    "Waveform",
    "WordModelConfig",
    "assess",
    "default_profiles",
    "derive_seed",
    "extract_embeddings",
    "fbank_delta",
    "generate_corpus",
    "generate_utterance",
    "grad_check",
    "load_checkpoint",
    "load_config",
    "load_wav",
    "matched_pairs_pvalue",
    "mel_filterbank",
    "mel_spectrogram",
    "mtl_loss",
    "pack_tensor",
    "predict_groups",
    "prepare_bundle",
    "read_manifest",
    "read_stbf",
    "run_benchmark",
    "save_checkpoint",
    "sgd_step",
    "speed_perturb",
    "stft_magnitude",
    "strip_silence",
    "svd",
    "temporal_window_stats",
    "train_classifier",
    "train_step",
    "truncate",
    "unpack_tensor",
    "utterance_feature",
    "write_corpus",
    "write_manifest",
    "write_stbf",
    "write_wav",
]
