"""End-to-end evaluation arithmetic on small constructed ground truth."""
import numpy as np
import pytest

from satfusion.dialog import FeedbackCategory
from satfusion.errors import DataError
from satfusion.fusion import FusionConfig
from satfusion.ground_truth import build_pools, compose_ground_truth, mark_given_feedback
from satfusion.metrics import (
    ALL_APPROACHES,
    APPROACH_EFB_FP_HP,
    APPROACH_EFB_HP,
    APPROACH_HP,
    evaluate_approaches,
)

from conftest import elicited_session, make_session, make_turn


class StubModel:
    def __init__(self, table=None, default=0.5):
        self.table = table or {}
        self.default = default

    def predict_batch(self, sessions, batch_size=256):
        return np.array([self.table.get(s.session_id, self.default) for s in sessions])


def build_fixture(rng, n_per_intent=40):
    """Traffic over two intents (one whitelisted), with feedback and labels."""
    sessions = []
    for intent, eligible in (("weather.check", True), ("music.play", False)):
        for i in range(n_per_intent):
            label = int(rng.random() < 0.3)
            if eligible and i % 2 == 0:
                feedback = FeedbackCategory.NO if label else FeedbackCategory.YES
                s = elicited_session(feedback, label=label, intent=intent)
                s = type(s)(
                    turns=tuple(
                        make_turn(1000.0 * i + j * 10.0, intent=intent, flags=t.flags, user_text=t.user_text, agent_text=t.agent_text)
                        for j, t in enumerate(s.turns)
                    ),
                    target_index=s.target_index,
                    feedback=s.feedback,
                    label=label,
                    segment=s.segment,
                    session_categorical=s.session_categorical,
                    session_numerical=s.session_numerical,
                )
            else:
                s = make_session(
                    turns=(make_turn(1000.0 * i + 7.0, intent=intent),),
                    label=label,
                    intent=intent,
                    eligible=eligible,
                )
            sessions.append(s)
    return sessions


@pytest.fixture
def fixture(rng):
    sessions = build_fixture(rng)
    whitelist = frozenset({"weather.check"})
    pools = build_pools(sessions, whitelist, annotate=lambda s: int(s.label), target_fraction=0.9, seed=3)
    gt = compose_ground_truth(pools, whitelist, seed=3)
    sessions_by_id = {s.session_id: s for s in sessions}
    return gt, sessions_by_id


def perfect_models(sessions_by_id):
    table = {sid: float(s.label) * 0.8 + 0.1 for sid, s in sessions_by_id.items()}
    return StubModel(table), StubModel(table)


def test_unmarked_ground_truth_rejected(fixture):
    gt, sessions_by_id = fixture
    fp, hp = perfect_models(sessions_by_id)
    with pytest.raises(DataError, match="mark_given_feedback"):
        evaluate_approaches(gt, sessions_by_id, fp, hp, FusionConfig(tau=0.75))


def test_rate_zero_efb_hp_identical_to_hp(fixture, rng):
    gt, sessions_by_id = fixture
    table = {sid: float(rng.random()) for sid in sessions_by_id}
    fp, hp = StubModel(table), StubModel({sid: float(rng.random()) for sid in sessions_by_id})
    marked = mark_given_feedback(gt, 0.0, seed=1)
    reports = evaluate_approaches(marked, sessions_by_id, fp, hp, FusionConfig(tau=0.75))
    hp_block = reports[APPROACH_HP].micro
    efb_block = reports[APPROACH_EFB_HP].micro
    assert hp_block.to_dict() == efb_block.to_dict()


def test_rate_one_marked_subset_is_perfect(fixture, rng):
    gt, sessions_by_id = fixture
    # Deliberately wrong models: marked instances must still be right.
    wrong = {sid: 1.0 - float(s.label) for sid, s in sessions_by_id.items()}
    fp, hp = StubModel(wrong), StubModel(wrong)
    marked = mark_given_feedback(gt, 1.0, seed=1)
    from satfusion.metrics import waterfall_assessments, approach_rows, ConfusionCounts, prf

    assessments = waterfall_assessments(marked, sessions_by_id, fp, hp, FusionConfig(tau=0.75))
    rows = approach_rows(assessments, APPROACH_EFB_HP, FusionConfig(tau=0.75))
    marked_rows = [r for r, a in zip(rows, assessments) if a.marked]
    assert marked_rows, "rate 1.0 must mark the full feedback budget"
    counts = ConfusionCounts.from_pairs((r[3] for r in marked_rows), (r[2] for r in marked_rows))
    assert counts.fp == 0 and counts.fn == 0
    if counts.tp:
        assert prf(counts)[2] == 1.0


def test_nested_rates_micro_f1_non_decreasing(fixture, rng):
    gt, sessions_by_id = fixture
    noisy = {sid: float(np.clip(s.label + rng.normal(0, 0.6), 0.01, 0.99)) for sid, s in sessions_by_id.items()}
    fp, hp = StubModel(noisy), StubModel(noisy)
    previous = -1.0
    for rate in (0.0, 0.05, 0.2, 0.6, 1.0):
        marked = mark_given_feedback(gt, rate, seed=5)
        reports = evaluate_approaches(marked, sessions_by_id, fp, hp, FusionConfig(tau=0.75))
        f1 = reports[APPROACH_EFB_FP_HP].micro.f1
        assert f1 >= previous - 1e-12
        previous = f1


def test_all_three_approaches_reported(fixture):
    gt, sessions_by_id = fixture
    fp, hp = perfect_models(sessions_by_id)
    marked = mark_given_feedback(gt, 0.1, seed=2)
    reports = evaluate_approaches(marked, sessions_by_id, fp, hp, FusionConfig(tau=0.75))
    assert set(reports) == set(ALL_APPROACHES)
    for report in reports.values():
        assert 0.0 <= report.micro.f1 <= 1.0
        assert report.coverage > 0
