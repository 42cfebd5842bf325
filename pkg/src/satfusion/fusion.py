"""Waterfall fusion of explicit feedback, FP prediction, and HP prediction.

Stage 1 respects interpretable explicit feedback (YES/NO).  Stage 2 applies
the feedback-trained FP model to feedback-eligible segments when its
confidence clears the threshold.  Stage 3 falls back to the annotation-trained
HP model.  SILENCE and OTHER feedback are treated as not interpretable and
fall through to stage 2.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .dialog import INELIGIBILITY_FLAGS, FeedbackCategory, Session
from .errors import ConfigError, DataError
from .fileio import atomic_open
from .metrics import ConfusionCounts, prf


class VerdictSource(str, Enum):
    EXPLICIT = "EXPLICIT"
    FP = "FP"
    HP = "HP"


@dataclass(frozen=True)
class Verdict:
    dissatisfied: bool
    score: float
    source: VerdictSource
    threshold_used: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise DataError(f"verdict score out of range: {self.score}")
        if self.source is VerdictSource.EXPLICIT and self.score not in (0.0, 1.0):
            raise DataError("explicit verdicts carry a 0/1 score")


@dataclass(frozen=True)
class FusionConfig:
    tau: float = 0.75
    decision_cutoff: float = 0.5
    fp_whitelist: frozenset[str] | None = None

    def __post_init__(self) -> None:
        if not 0.5 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0.5, 1], got {self.tau}")
        if not 0.0 < self.decision_cutoff < 1.0:
            raise ConfigError(f"decision cutoff must lie in (0, 1), got {self.decision_cutoff}")


def confidence(p: float) -> float:
    """Two-sided confidence of a probability: distance from total uncertainty."""
    return max(p, 1.0 - p)


def _fp_eligible(session: Session, config: FusionConfig) -> bool:
    # Barge-in, termination, and unhandled experiences are outside the
    # feedback-eligible traffic the FP model was trained on.
    if not session.segment.eligible_for_feedback:
        return False
    if any(flag in INELIGIBILITY_FLAGS for turn in session.turns for flag in turn.flags):
        return False
    if config.fp_whitelist is not None:
        return session.segment.intent in config.fp_whitelist
    return True


def assess(session: Session, fp_model, hp_model, config: FusionConfig) -> Verdict:
    """Run the three-stage waterfall for one session."""
    if session.feedback in (FeedbackCategory.YES, FeedbackCategory.NO):
        dissatisfied = session.feedback is FeedbackCategory.NO
        return Verdict(
            dissatisfied=dissatisfied,
            score=1.0 if dissatisfied else 0.0,
            source=VerdictSource.EXPLICIT,
        )
    if _fp_eligible(session, config):
        p_fp = fp_model.predict(session).p
        if confidence(p_fp) >= config.tau:
            return Verdict(
                dissatisfied=p_fp >= config.decision_cutoff,
                score=p_fp,
                source=VerdictSource.FP,
                threshold_used=config.tau,
            )
    p_hp = hp_model.predict(session).p
    return Verdict(
        dissatisfied=p_hp >= config.decision_cutoff,
        score=p_hp,
        source=VerdictSource.HP,
    )


def tune_threshold(
    dev_sessions: Sequence[Session],
    fp_model,
    hp_model,
    candidate_taus: Sequence[float],
    config: FusionConfig = FusionConfig(),
) -> float:
    """Pick the grid threshold maximizing waterfall F1 on a labeled dev set.

    Ties break toward the larger threshold (prefer deferring to HP).
    """
    taus = sorted(candidate_taus)
    if not taus:
        raise ConfigError("candidate threshold grid is empty")
    if not dev_sessions:
        raise DataError("threshold tuning needs a non-empty development set")
    if any(s.label is None for s in dev_sessions):
        raise DataError("threshold tuning needs labeled sessions")

    labels = [s.label for s in dev_sessions]
    explicit = [s.feedback in (FeedbackCategory.YES, FeedbackCategory.NO) for s in dev_sessions]
    explicit_dissat = [s.feedback is FeedbackCategory.NO for s in dev_sessions]
    eligible = [_fp_eligible(s, config) for s in dev_sessions]
    p_fp = fp_model.predict_batch(dev_sessions)
    p_hp = hp_model.predict_batch(dev_sessions)

    best_tau, best_f1 = taus[0], -1.0
    for tau in taus:
        predicted = []
        for i in range(len(dev_sessions)):
            if explicit[i]:
                predicted.append(explicit_dissat[i])
            elif eligible[i] and confidence(float(p_fp[i])) >= tau:
                predicted.append(p_fp[i] >= config.decision_cutoff)
            else:
                predicted.append(p_hp[i] >= config.decision_cutoff)
        _, _, f1 = prf(ConfusionCounts.from_pairs(predicted, labels))
        if f1 >= best_f1:
            best_tau, best_f1 = tau, f1
    return best_tau


def write_verdicts(path: str | Path, items: Iterable[tuple[str, Verdict]]) -> None:
    """Emit verdicts as JSON Lines keyed by session id."""
    with atomic_open(path, "w") as handle:
        for session_id, verdict in items:
            handle.write(
                json.dumps(
                    {
                        "session_id": session_id,
                        "dissatisfied": verdict.dissatisfied,
                        "score": verdict.score,
                        "source": verdict.source.value,
                        "threshold_used": verdict.threshold_used,
                    }
                )
                + "\n"
            )
