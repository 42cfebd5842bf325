import json
import math

import numpy as np
import pytest

from satfusion.dialog import (
    FeedbackCategory,
    TurnFlag,
    session_to_dict,
    tokenize,
)
from satfusion.errors import ConfigError, DataError
from satfusion.synth import (
    CorpusManifest,
    GeneratorConfig,
    annotate_oracle,
    choose_whitelist,
    generate,
    intent_catalog,
    negative_marker_tokens,
)

SMALL = GeneratorConfig(num_sessions=1500, seed=11)


@pytest.fixture(scope="module")
def small_corpus():
    return generate(SMALL)


class TestConfig:
    def test_rates_validated(self):
        with pytest.raises(ConfigError):
            GeneratorConfig(dissatisfaction_rate=1.5)

    def test_num_intents_minimum(self):
        with pytest.raises(ConfigError):
            GeneratorConfig(num_intents=1)

    def test_silence_plus_other_bounded(self):
        with pytest.raises(ConfigError):
            GeneratorConfig(silence_rate=0.7, other_feedback_rate=0.5)


class TestCatalog:
    def test_intent_count(self):
        intents, weights = intent_catalog(SMALL)
        assert len(intents) == SMALL.num_intents
        assert abs(sum(weights.values()) - 1.0) < 1e-12

    def test_whitelist_size_and_spread(self):
        whitelist = choose_whitelist(SMALL)
        assert len(whitelist) == round(SMALL.num_intents * SMALL.whitelist_fraction)
        domains = {intent.split(".")[0] for intent in whitelist}
        all_domains = {intent.split(".")[0] for intent in intent_catalog(SMALL)[0]}
        assert domains == all_domains  # every domain keeps whitelisted traffic


class TestGenerate:
    def test_deterministic_byte_identical(self, small_corpus):
        sessions, manifest = small_corpus
        again, manifest2 = generate(SMALL)
        assert len(sessions) == len(again)
        for a, b in zip(sessions, again):
            assert session_to_dict(a) == session_to_dict(b)
        assert manifest.to_dict() == manifest2.to_dict()

    def test_latent_label_always_present(self, small_corpus):
        sessions, _ = small_corpus
        assert all(s.label in (0, 1) for s in sessions)

    def test_incident_sessions_never_elicited(self, small_corpus):
        sessions, _ = small_corpus
        for s in sessions:
            flags = {f for t in s.turns for f in t.flags}
            if flags & {TurnFlag.BARGE_IN, TurnFlag.TERMINATION, TurnFlag.UNHANDLED}:
                assert s.feedback is FeedbackCategory.NONE_ELICITED

    def test_non_whitelisted_segments_never_elicited(self, small_corpus):
        sessions, manifest = small_corpus
        whitelist = set(manifest.whitelist)
        for s in sessions:
            if s.segment.intent not in whitelist:
                assert s.feedback is FeedbackCategory.NONE_ELICITED

    def test_elicited_sessions_carry_prompt_flag(self, small_corpus):
        sessions, _ = small_corpus
        for s in sessions:
            if s.feedback in (FeedbackCategory.YES, FeedbackCategory.NO, FeedbackCategory.OTHER, FeedbackCategory.SILENCE):
                assert any(TurnFlag.ELICITATION_PROMPT in t.flags for t in s.turns)

    def test_realized_rates_within_two_sigma(self, small_corpus):
        sessions, _ = small_corpus
        n = len(sessions)
        dissat = sum(s.label for s in sessions) / n

        def bound(p):
            return 2.0 * math.sqrt(p * (1 - p) / n)

        assert abs(dissat - SMALL.dissatisfaction_rate) <= bound(SMALL.dissatisfaction_rate) + 0.01
        incident_rate = sum(
            1
            for s in sessions
            if {f for t in s.turns for f in t.flags} & {TurnFlag.BARGE_IN, TurnFlag.TERMINATION, TurnFlag.UNHANDLED}
        ) / n
        expected = SMALL.barge_in_rate + SMALL.termination_rate + SMALL.unhandled_rate
        assert abs(incident_rate - expected) <= bound(expected) + 0.01
        elicited = [s for s in sessions if s.feedback is not FeedbackCategory.NONE_ELICITED]
        other_share = sum(
            s.feedback in (FeedbackCategory.SILENCE, FeedbackCategory.OTHER) for s in elicited
        ) / len(elicited)
        expected_other = SMALL.silence_rate + SMALL.other_feedback_rate
        assert abs(other_share - expected_other) <= 2.0 * math.sqrt(
            expected_other * (1 - expected_other) / len(elicited)
        ) + 0.01

    def test_manifest_counts_match(self, small_corpus):
        sessions, manifest = small_corpus
        assert manifest.num_sessions == len(sessions)
        assert sum(seg["count"] for seg in manifest.per_segment.values()) == len(sessions)
        covered = sum(1 for s in sessions if s.segment.eligible_for_feedback)
        assert manifest.whitelist_coverage == pytest.approx(covered / len(sessions))

    def test_manifest_roundtrip(self, small_corpus):
        _, manifest = small_corpus
        again = CorpusManifest.from_dict(json.loads(json.dumps(manifest.to_dict())))
        assert again.to_dict() == manifest.to_dict()


class TestSeparability:
    def test_keyword_rule_perfect_at_full_separability(self):
        config = GeneratorConfig(
            num_sessions=1200, lexical_separability=1.0, feedback_noise_rate=0.0, seed=19
        )
        sessions, _ = generate(config)
        markers = negative_marker_tokens()

        def rule(session):
            return any(markers & set(tokenize(t.user_text)) for t in session.turns)

        assert all(rule(s) == bool(s.label) for s in sessions)

    def test_feedback_agrees_with_label_at_zero_noise(self):
        config = GeneratorConfig(num_sessions=1200, feedback_noise_rate=0.0, seed=23)
        sessions, _ = generate(config)
        yes_no = [s for s in sessions if s.feedback in (FeedbackCategory.YES, FeedbackCategory.NO)]
        assert yes_no
        assert all((s.feedback is FeedbackCategory.NO) == bool(s.label) for s in yes_no)

    def test_documented_noise_hits_target_agreement_band(self):
        config = GeneratorConfig(num_sessions=20_000, seed=29)
        sessions, _ = generate(config)
        yes_no = [s for s in sessions if s.feedback in (FeedbackCategory.YES, FeedbackCategory.NO)]
        pairs = [
            (
                1 if s.feedback is FeedbackCategory.NO else 0,
                annotate_oracle(s, noise_rate=config.annotation_noise_rate, seed=1),
            )
            for s in yes_no
        ]
        from satfusion.metrics import agreement_and_kappa

        agreement, kappa = agreement_and_kappa(pairs)
        assert 0.964 <= agreement <= 0.984
        assert kappa > 0.6


class TestAnnotateOracle:
    def test_zero_noise_is_identity(self, small_corpus):
        sessions, _ = small_corpus
        for s in sessions[:200]:
            assert annotate_oracle(s) == s.label

    def test_half_noise_agreement_near_chance(self, small_corpus):
        sessions, _ = small_corpus
        flips = [annotate_oracle(s, noise_rate=0.5, seed=2) == s.label for s in sessions]
        assert abs(np.mean(flips) - 0.5) < 0.05

    def test_target_noise_matches_agreement(self):
        config = GeneratorConfig(num_sessions=6000, seed=31)
        sessions, _ = generate(config)
        agree = np.mean([annotate_oracle(s, noise_rate=0.026, seed=3) == s.label for s in sessions])
        assert abs(agree - 0.974) < 0.01

    def test_deterministic_per_session(self, small_corpus):
        sessions, _ = small_corpus
        s = sessions[0]
        values = {annotate_oracle(s, noise_rate=0.4, seed=9) for _ in range(10)}
        assert len(values) == 1

    def test_requires_latent_label(self):
        from conftest import make_session

        with pytest.raises(DataError):
            annotate_oracle(make_session(label=None))
