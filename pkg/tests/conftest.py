"""Shared session fixtures.

Everything derived from the bundled synthetic corpora is expensive to
build, so it is built exactly once per session and shared between the
acceptance suite and the module tests:

  * the default 29-speaker corpus (two repetitions per word) and its
    subspace features and adaptation bundle;
  * the two single-repetition contrast corpora (classes separated only
    spectrally, or only by speaking rate).

The raw default corpus is dropped after features and bundle are built;
tests that need waveforms synthesize their own small ones.
"""
import numpy as np
import pytest

from stbf import PipelineConfig, default_profiles, generate_corpus
from stbf.adapt import compute_acoustic, compute_features, prepare_bundle


def features_in_blocks(features, blocks):
    return [f for f in features if f.meta.block_id in blocks]


@pytest.fixture(scope="session")
def default_assets():
    """Features and adaptation bundle for the default corpus variant.

    Mirrors the default pipeline end to end: profiles and corpus from
    seed 0, two repetitions per word, embedding classifier trained on
    blocks B1+B3 for the "SB" input configuration.
    """
    cfg = PipelineConfig()
    corpus = generate_corpus(
        default_profiles("default", seed=cfg.seed),
        n_per_word=cfg.n_per_word,
        seed=cfg.seed,
        sr=cfg.corpus_sr,
    )
    features = compute_features(corpus, cfg)
    acoustic = compute_acoustic(corpus, cfg)
    bundle = prepare_bundle(
        corpus, {"SB"}, cfg, features=features, acoustic=acoustic
    )
    return {"features": features, "bundle": bundle}


@pytest.fixture(scope="session")
def main_features(default_assets):
    return default_assets["features"]


@pytest.fixture(scope="session")
def main_bundle(default_assets):
    return default_assets["bundle"]


def make_variant_features(variant):
    """Features for a single-repetition contrast corpus variant."""
    cfg = PipelineConfig(corpus_variant=variant, n_per_word=1)
    corpus = generate_corpus(
        default_profiles(variant, seed=cfg.seed),
        n_per_word=1,
        seed=cfg.seed,
        sr=cfg.corpus_sr,
    )
    return compute_features(corpus, cfg)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260817)
