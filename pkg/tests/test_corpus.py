"""Synthetic speaker profiles and corpus generation."""
import math
from dataclasses import replace

import numpy as np
import pytest

from stbf import (
    ConfigError,
    ParameterError,
    SyntheticSpeakerProfile,
    default_profiles,
    generate_corpus,
    generate_utterance,
    load_wav,
    read_manifest,
    write_corpus,
)
from stbf.corpus import BLOCKS, VOCAB, synthesize_word, tilt_filter

from oracles import spectral_centroid_hz

SR = 16000


def identity_profile(**overrides):
    base = dict(
        speaker_id="ID00",
        spectral_tilt_db_per_octave=0.0,
        formant_shift_ratio=1.0,
        rate_factor=1.0,
        pause_insertion_prob=0.0,
        noise_db=-math.inf,
        severity="CTL",
    )
    base.update(overrides)
    return SyntheticSpeakerProfile(**base)


class TestProfiles:
    def test_default_roster_is_16_dys_plus_13_ctl(self):
        profiles = default_profiles("default", seed=0)
        assert len(profiles) == 29
        by_sev = {}
        for p in profiles:
            by_sev.setdefault(p.severity, []).append(p.speaker_id)
        assert {g: len(v) for g, v in by_sev.items()} == {
            "VL": 4, "L": 4, "M": 4, "H": 4, "CTL": 13,
        }
        assert sum(s.startswith("DYS") for p in profiles for s in [p.speaker_id]) == 16
        assert sum(s.startswith("CTL") for p in profiles for s in [p.speaker_id]) == 13

    def test_profiles_deterministic_per_seed(self):
        assert default_profiles("default", seed=3) == default_profiles("default", seed=3)
        assert default_profiles("default", seed=3) != default_profiles("default", seed=4)

    def test_unknown_variant_rejected(self):
        with pytest.raises(ParameterError):
            default_profiles("prosodic", seed=0)

    def test_field_ranges_validated(self):
        with pytest.raises(ConfigError, match="rate_factor"):
            identity_profile(rate_factor=0.3)
        with pytest.raises(ConfigError, match="formant_shift_ratio"):
            identity_profile(formant_shift_ratio=1.3)
        with pytest.raises(ConfigError, match="pause_insertion_prob"):
            identity_profile(pause_insertion_prob=1.5)

    @staticmethod
    def group_means(profiles, attr):
        groups = ("VL", "L", "M", "H", "CTL")
        return [
            np.mean([getattr(p, attr) for p in profiles if p.severity == g])
            for g in groups
        ]

    def test_spectral_variant_separates_groups_by_tilt_only(self):
        profiles = default_profiles("spectral", seed=0)
        tilts = self.group_means(profiles, "spectral_tilt_db_per_octave")
        rates = self.group_means(profiles, "rate_factor")
        assert all(a < b for a, b in zip(tilts, tilts[1:]))  # VL steepest
        assert max(rates) - min(rates) < 0.05

    def test_rate_variant_separates_groups_by_rate_only(self):
        profiles = default_profiles("rate", seed=0)
        tilts = self.group_means(profiles, "spectral_tilt_db_per_octave")
        rates = self.group_means(profiles, "rate_factor")
        assert all(a < b for a, b in zip(rates, rates[1:]))  # VL slowest
        assert max(tilts) - min(tilts) < 0.5


class TestUtteranceSynthesis:
    def test_identity_profile_reproduces_template(self):
        rng_a = np.random.default_rng(11)
        rng_b = np.random.default_rng(11)
        w = generate_utterance(identity_profile(), "tak", rng_a, sr=SR)
        f0 = float(rng_b.uniform(130.0, 210.0))
        template = synthesize_word(VOCAB["tak"], f0, 1.0, 1.0, 0.0, rng_b, SR)
        np.testing.assert_array_equal(w.samples, template)

    def test_half_rate_doubles_duration(self):
        margin = 2 * int(0.015 * SR)  # fixed silence padding at both ends
        w_full = generate_utterance(
            identity_profile(), "mas", np.random.default_rng(5), sr=SR
        )
        w_half = generate_utterance(
            identity_profile(rate_factor=0.5), "mas", np.random.default_rng(5), sr=SR
        )
        ratio = (len(w_half.samples) - margin) / (len(w_full.samples) - margin)
        assert abs(ratio - 2.0) < 0.01

    def test_negative_tilt_lowers_spectral_centroid(self):
        w = generate_utterance(identity_profile(), "she", np.random.default_rng(6), sr=SR)
        tilted = tilt_filter(w.samples, -6.0, SR)
        assert spectral_centroid_hz(tilted, SR) < spectral_centroid_hz(w.samples, SR)

    def test_zero_tilt_is_identity(self):
        x = np.random.default_rng(7).standard_normal(1000)
        assert tilt_filter(x, 0.0, SR) is x

    def test_noise_floor_raises_silent_margin_energy(self):
        quiet = generate_utterance(identity_profile(), "kin", np.random.default_rng(8), sr=SR)
        noisy = generate_utterance(
            identity_profile(noise_db=-30.0), "kin", np.random.default_rng(8), sr=SR
        )
        lead_in = int(0.01 * SR)
        assert np.abs(quiet.samples[:lead_in]).max() == 0.0
        assert np.abs(noisy.samples[:lead_in]).max() > 0.0

    def test_unknown_word_rejected(self):
        with pytest.raises(ParameterError):
            generate_utterance(identity_profile(), "xyzzy", np.random.default_rng(0))


class TestCorpusGeneration:
    PROFILES = [
        identity_profile(speaker_id="A", severity="M"),
        identity_profile(speaker_id="B", severity="CTL", rate_factor=1.1),
    ]
    SMALL_VOCAB = {"mas": VOCAB["mas"], "tik": VOCAB["tik"]}

    def test_composition_covers_speakers_blocks_words(self):
        corpus = generate_corpus(self.PROFILES, self.SMALL_VOCAB, n_per_word=2, seed=0)
        assert len(corpus) == 2 * 3 * 2 * 2
        combos = {(m.speaker_id, m.block_id, m.word_id) for _, m in corpus}
        assert combos == {
            (s, b, w) for s in ("A", "B") for b in BLOCKS for w in self.SMALL_VOCAB
        }
        assert all(m.intelligibility in ("M", "CTL") for _, m in corpus)

    def test_same_seed_is_bit_identical(self):
        a = generate_corpus(self.PROFILES, self.SMALL_VOCAB, seed=9)
        b = generate_corpus(self.PROFILES, self.SMALL_VOCAB, seed=9)
        assert len(a) == len(b)
        for (wa, ma), (wb, mb) in zip(a, b):
            assert ma == mb
            assert wa.samples.tobytes() == wb.samples.tobytes()

    def test_different_seed_changes_audio(self):
        a = generate_corpus(self.PROFILES, self.SMALL_VOCAB, seed=9)
        b = generate_corpus(self.PROFILES, self.SMALL_VOCAB, seed=10)
        assert any(
            wa.samples.tobytes() != wb.samples.tobytes()
            for (wa, _), (wb, _) in zip(a, b)
        )

    def test_empty_vocabulary_rejected(self):
        with pytest.raises(ParameterError):
            generate_corpus(self.PROFILES, {}, seed=0)

    def test_single_group_rejected(self):
        profiles = [
            identity_profile(speaker_id="A", severity="M"),
            identity_profile(speaker_id="B", severity="M"),
        ]
        with pytest.raises(ParameterError):
            generate_corpus(profiles, self.SMALL_VOCAB, seed=0)

    def test_write_corpus_round_trips_through_manifest(self, tmp_path):
        corpus = generate_corpus(self.PROFILES, self.SMALL_VOCAB, seed=1)
        manifest = write_corpus(tmp_path / "corpus", corpus)
        assert manifest.name == "manifest.csv"
        entries = read_manifest(manifest)
        assert [e.meta for e in entries] == [m for _, m in corpus]
        w = load_wav(entries[0].path)
        assert w.sample_rate == corpus[0][0].sample_rate
        np.testing.assert_allclose(
            w.samples, corpus[0][0].samples, atol=1.0 / 32768
        )
