from __future__ import annotations

import numpy as np
import pytest

from satfusion.dialog import FeedbackCategory, Segment, Session, Turn, TurnFlag


def make_turn(
    timestamp: float,
    user_text: str = "can you check the forecast",
    agent_text: str = "sure here is the forecast you asked for",
    intent: str = "weather.check",
    flags: frozenset = frozenset(),
    **meta,
) -> Turn:
    return Turn(
        user_text=user_text,
        agent_text=agent_text,
        timestamp=timestamp,
        intent=intent,
        flags=flags,
        meta_categorical=meta.get("meta_categorical", {"skill": "weather_skill", "device_screen": "no"}),
        meta_numerical=meta.get("meta_numerical", {"response_latency_s": 0.5, "turn_index_in_session": 0.0}),
    )


def make_session(
    turns=None,
    target_index: int = 0,
    feedback: FeedbackCategory = FeedbackCategory.NONE_ELICITED,
    label=None,
    intent: str = "weather.check",
    eligible: bool = True,
) -> Session:
    if turns is None:
        turns = (make_turn(100.0, intent=intent),)
    return Session(
        turns=tuple(turns),
        target_index=target_index,
        feedback=feedback,
        label=label,
        segment=Segment(intent=intent, domain=intent.split(".")[0], eligible_for_feedback=eligible),
        session_categorical={"device_type": "echo"},
        session_numerical={"hour_of_day": 9.0},
    )


def elicited_session(feedback: FeedbackCategory, label=None, intent="weather.check") -> Session:
    """Two-turn dialog: target turn with appended prompt, then answering turn."""
    answer = {"YES": "yes", "NO": "no", "OTHER": "maybe"}.get(feedback.value, "")
    turns = [
        make_turn(
            100.0,
            user_text="can you check the forecast",
            agent_text="sure here is the forecast you asked for did i answer your question?",
            intent=intent,
            flags=frozenset({TurnFlag.ELICITATION_PROMPT}),
        )
    ]
    if feedback in (FeedbackCategory.YES, FeedbackCategory.NO, FeedbackCategory.OTHER):
        turns.append(
            make_turn(
                110.0,
                user_text=answer,
                agent_text="thanks for your feedback",
                intent=intent,
                flags=frozenset({TurnFlag.ANSWERING_TURN}),
            )
        )
    return make_session(turns=turns, target_index=0, feedback=feedback, label=label, intent=intent)


def finite_difference_check(params, forward, tol: float = 1e-4) -> float:
    """Max relative error between analytic gradients and central differences.

    Central differences at step ~1e-6 carry roundoff noise around 1e-10 for
    an O(1) loss, so coordinates whose gradient sits at that noise floor are
    compared absolutely via the denominator floor; every measurable gradient
    must match to the relative tolerance.
    """
    for p in params:
        p.zero_grad()
    loss = forward()
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = p.gradient.reshape(-1).copy()
        flat = p.values.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            h = 1e-6 * max(1.0, abs(orig))
            flat[i] = orig + h
            up = forward().item()
            flat[i] = orig - h
            down = forward().item()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            denom = max(1e-5, abs(analytic[i]) + abs(numeric))
            worst = max(worst, abs(analytic[i] - numeric) / denom)
    assert worst < tol, f"gradient mismatch: worst relative error {worst}"
    return worst


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
