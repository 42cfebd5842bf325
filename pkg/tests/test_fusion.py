import json

import numpy as np
import pytest

from satfusion.dialog import FeedbackCategory
from satfusion.errors import ConfigError, DataError
from satfusion.fusion import (
    FusionConfig,
    Verdict,
    VerdictSource,
    assess,
    confidence,
    tune_threshold,
    write_verdicts,
)

from conftest import elicited_session, make_session, make_turn


class StubModel:
    """Predictor stub returning a fixed or per-session probability."""

    def __init__(self, p=0.5, table=None):
        self.p = p
        self.table = table or {}

    def predict(self, session):
        from satfusion.model import Prediction

        return Prediction(p=self.table.get(session.session_id, self.p), session_id=session.session_id)

    def predict_batch(self, sessions, batch_size=256):
        return np.array([self.predict(s).p for s in sessions])


class TestAssess:
    def test_explicit_no_takes_precedence(self):
        session = elicited_session(FeedbackCategory.NO)
        verdict = assess(session, StubModel(0.01), StubModel(0.01), FusionConfig(tau=0.8))
        assert verdict == Verdict(dissatisfied=True, score=1.0, source=VerdictSource.EXPLICIT)

    def test_explicit_yes(self):
        session = elicited_session(FeedbackCategory.YES)
        verdict = assess(session, StubModel(0.99), StubModel(0.99), FusionConfig(tau=0.8))
        assert verdict.source is VerdictSource.EXPLICIT
        assert not verdict.dissatisfied and verdict.score == 0.0

    def test_confident_fp_fires(self):
        session = make_session(eligible=True)
        verdict = assess(session, StubModel(0.95), StubModel(0.2), FusionConfig(tau=0.8))
        assert verdict.source is VerdictSource.FP
        assert verdict.dissatisfied and verdict.score == 0.95
        assert verdict.threshold_used == 0.8

    def test_unconfident_fp_falls_through_to_hp(self):
        session = make_session(eligible=True)
        verdict = assess(session, StubModel(0.55), StubModel(0.2), FusionConfig(tau=0.8))
        assert verdict.source is VerdictSource.HP
        assert not verdict.dissatisfied and verdict.score == 0.2

    def test_ineligible_segment_skips_fp(self):
        session = make_session(eligible=False)
        verdict = assess(session, StubModel(0.99), StubModel(0.7), FusionConfig(tau=0.6))
        assert verdict.source is VerdictSource.HP

    @pytest.mark.parametrize("category", [FeedbackCategory.SILENCE, FeedbackCategory.OTHER])
    def test_silence_and_other_fall_through(self, category):
        session = elicited_session(category)
        verdict = assess(session, StubModel(0.95), StubModel(0.1), FusionConfig(tau=0.8))
        assert verdict.source is not VerdictSource.EXPLICIT

    def test_incident_session_skips_fp(self):
        from satfusion.dialog import TurnFlag

        turns = (make_turn(1.0), make_turn(2.0, flags=frozenset({TurnFlag.TERMINATION})))
        session = make_session(turns=turns, target_index=0, eligible=True)
        verdict = assess(session, StubModel(0.99), StubModel(0.3), FusionConfig(tau=0.6))
        assert verdict.source is VerdictSource.HP

    def test_confidence_is_two_sided(self):
        assert confidence(0.95) == 0.95
        assert confidence(0.05) == 0.95
        assert confidence(0.5) == 0.5


class TestFusionConfig:
    def test_tau_bounds(self):
        with pytest.raises(ConfigError):
            FusionConfig(tau=0.4)
        with pytest.raises(ConfigError):
            FusionConfig(tau=1.01)


class TestWaterfallLaws:
    def test_stage1_precedence_invariant_to_models(self, rng):
        for i in range(200):
            feedback = FeedbackCategory.NO if i % 2 else FeedbackCategory.YES
            session = elicited_session(feedback)
            fp = StubModel(float(rng.random()))
            hp = StubModel(float(rng.random()))
            tau = float(rng.uniform(0.5, 1.0))
            verdict = assess(session, fp, hp, FusionConfig(tau=tau))
            assert verdict.source is VerdictSource.EXPLICIT
            assert verdict.dissatisfied is (feedback is FeedbackCategory.NO)

    def test_monotone_deferral_in_tau(self, rng):
        for _ in range(200):
            eligible = bool(rng.random() < 0.7)
            session = make_session(eligible=eligible)
            fp = StubModel(float(rng.random()))
            hp = StubModel(float(rng.random()))
            low, high = sorted(rng.uniform(0.5, 1.0, size=2))
            v_low = assess(session, fp, hp, FusionConfig(tau=float(low)))
            v_high = assess(session, fp, hp, FusionConfig(tau=float(high)))
            if v_low.source is VerdictSource.HP:
                assert v_high.source is VerdictSource.HP
            if v_high.source is VerdictSource.FP:
                assert v_low.source is VerdictSource.FP

    def test_tau_half_always_fires_for_eligible(self, rng):
        for _ in range(100):
            session = make_session(eligible=True)
            fp = StubModel(float(rng.random()))
            verdict = assess(session, fp, StubModel(0.5), FusionConfig(tau=0.5))
            assert verdict.source is VerdictSource.FP

    def test_fp_source_only_on_eligible_segments(self, rng):
        for _ in range(200):
            eligible = bool(rng.random() < 0.5)
            session = make_session(eligible=eligible)
            verdict = assess(
                session,
                StubModel(float(rng.random())),
                StubModel(float(rng.random())),
                FusionConfig(tau=float(rng.uniform(0.5, 1.0))),
            )
            if verdict.source is VerdictSource.FP:
                assert session.segment.eligible_for_feedback


class TestTuneThreshold:
    def test_singleton_grid(self):
        dev = [make_session(label=0), make_session(label=1)]
        assert tune_threshold(dev, StubModel(0.5), StubModel(0.5), [0.5]) == 0.5

    def test_empty_grid_rejected(self):
        with pytest.raises(ConfigError):
            tune_threshold([make_session(label=0)], StubModel(), StubModel(), [])

    def test_empty_dev_rejected(self):
        with pytest.raises(DataError):
            tune_threshold([], StubModel(), StubModel(), [0.5])

    def test_dominant_tau_found_by_exhaustive_check(self, rng):
        # FP is confident but wrong (p=0.9 on satisfied sessions), HP is right.
        # Any tau <= 0.9 lets FP misfire; tau > 0.9 defers to HP.
        sessions = []
        table_fp, table_hp = {}, {}
        for i in range(30):
            s = make_session(turns=(make_turn(100.0 + i),), label=i % 2)
            sessions.append(s)
            table_fp[s.session_id] = 0.9 if i % 2 == 0 else 0.1  # inverted
            table_hp[s.session_id] = 0.9 if i % 2 == 1 else 0.1  # correct
        fp = StubModel(table=table_fp)
        hp = StubModel(table=table_hp)
        grid = [0.5, 0.7, 0.95]
        best = tune_threshold(sessions, fp, hp, grid)
        assert best == 0.95
        # Exhaustive oracle over the grid.
        from satfusion.fusion import confidence as conf
        from satfusion.metrics import ConfusionCounts, prf

        def f1_at(tau):
            preds = []
            for s in sessions:
                p_fp = table_fp[s.session_id]
                if s.segment.eligible_for_feedback and conf(p_fp) >= tau:
                    preds.append(p_fp >= 0.5)
                else:
                    preds.append(table_hp[s.session_id] >= 0.5)
            return prf(ConfusionCounts.from_pairs(preds, [s.label for s in sessions]))[2]

        assert f1_at(best) >= max(f1_at(t) for t in grid)

    def test_ties_break_toward_larger_tau(self):
        dev = [make_session(label=i % 2, eligible=False) for i in range(10)]
        # FP never applies (ineligible), so every tau scores identically.
        best = tune_threshold(dev, StubModel(0.9), StubModel(0.9), [0.5, 0.6, 0.8])
        assert best == 0.8


def test_write_verdicts_jsonl(tmp_path):
    path = tmp_path / "verdicts.jsonl"
    write_verdicts(
        path,
        [
            ("abc", Verdict(dissatisfied=True, score=1.0, source=VerdictSource.EXPLICIT)),
            ("def", Verdict(dissatisfied=False, score=0.25, source=VerdictSource.HP)),
        ],
    )
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert rows[0] == {
        "session_id": "abc",
        "dissatisfied": True,
        "score": 1.0,
        "source": "EXPLICIT",
        "threshold_used": None,
    }
    assert rows[1]["source"] == "HP"
