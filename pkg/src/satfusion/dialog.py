"""Dialog data model: turns, sessions, feedback categories, traffic segments.

A turn is one user utterance paired with the agent response plus meta
features.  A session is a maximal run of turns whose adjacent time gaps stay
within a configurable window, with one designated target turn whose
satisfaction is being assessed.  When feedback was elicited for the target
turn, the elicitation prompt is modeled as text appended to the target turn's
agent response (carrying the ELICITATION_PROMPT flag) and the user's reply as
a separate turn flagged ANSWERING_TURN.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DataError
from .fileio import atomic_open

DEFAULT_SESSION_GAP_MINUTES = 30.0

# Prompt phrasings recognized by strip_elicitation when the prompt is
# appended to the target turn's agent response.  Matching is case-insensitive
# on the text suffix.
ELICITATION_PROMPTS = (
    "did i answer your question?",
    "did that answer your question?",
    "was that what you wanted?",
    "was that helpful?",
)

_YES_WORDS = frozenset({"yes", "yeah", "yep", "sure", "correct"})
_NO_WORDS = frozenset({"no", "nope", "nah"})

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation boundaries."""
    return _TOKEN_RE.findall(text.lower())


class TurnFlag(str, Enum):
    BARGE_IN = "BARGE_IN"
    TERMINATION = "TERMINATION"
    UNHANDLED = "UNHANDLED"
    ELICITATION_PROMPT = "ELICITATION_PROMPT"
    ANSWERING_TURN = "ANSWERING_TURN"


class FeedbackCategory(str, Enum):
    YES = "YES"
    NO = "NO"
    SILENCE = "SILENCE"
    OTHER = "OTHER"
    NONE_ELICITED = "NONE_ELICITED"


ELICITED_CATEGORIES = frozenset(
    {FeedbackCategory.YES, FeedbackCategory.NO, FeedbackCategory.SILENCE, FeedbackCategory.OTHER}
)

INELIGIBILITY_FLAGS = frozenset({TurnFlag.BARGE_IN, TurnFlag.TERMINATION, TurnFlag.UNHANDLED})


@dataclass(frozen=True)
class Turn:
    """One user utterance + agent response with per-turn meta features."""

    user_text: str
    agent_text: str
    timestamp: float
    intent: str
    flags: frozenset[TurnFlag] = frozenset()
    meta_categorical: Mapping[str, str] = field(default_factory=dict)
    meta_numerical: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not math.isfinite(self.timestamp) or self.timestamp < 0:
            raise DataError(f"turn timestamp must be finite and non-negative, got {self.timestamp!r}")
        if TurnFlag.ELICITATION_PROMPT in self.flags and TurnFlag.ANSWERING_TURN in self.flags:
            raise DataError("ELICITATION_PROMPT and ANSWERING_TURN are mutually exclusive on one turn")
        object.__setattr__(self, "flags", frozenset(TurnFlag(f) for f in self.flags))


@dataclass(frozen=True)
class Segment:
    """Traffic slice keyed by target intent, with feedback eligibility."""

    intent: str
    domain: str
    eligible_for_feedback: bool


@dataclass(frozen=True)
class Session:
    """Maximal gap-bounded turn list with a designated target turn.

    ``label`` is the binary satisfaction outcome when known (1 = dissatisfied,
    0 = satisfied).  Session-level features are shared across all turns of the
    session.
    """

    turns: tuple[Turn, ...]
    target_index: int
    feedback: FeedbackCategory
    segment: Segment
    label: int | None = None
    session_categorical: Mapping[str, str] = field(default_factory=dict)
    session_numerical: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))
        if not self.turns:
            raise DataError("session must contain at least one turn")
        if not 0 <= self.target_index < len(self.turns):
            raise DataError(
                f"target_index {self.target_index} out of range for {len(self.turns)} turns"
            )
        if self.label is not None and self.label not in (0, 1):
            raise DataError(f"label must be 0, 1, or None, got {self.label!r}")
        for prev, cur in zip(self.turns, self.turns[1:]):
            if cur.timestamp < prev.timestamp:
                raise DataError("session turns must be ordered by timestamp")
        object.__setattr__(self, "feedback", FeedbackCategory(self.feedback))

    @property
    def target_turn(self) -> Turn:
        return self.turns[self.target_index]

    @cached_property
    def session_id(self) -> str:
        """Stable content-derived identifier used by downstream artifacts."""
        canonical = json.dumps(session_to_dict(self), sort_keys=True)
        return hashlib.sha1(canonical.encode()).hexdigest()[:16]


def domain_of(intent: str) -> str:
    """Default domain rule: the dotted prefix of the intent name."""
    return intent.split(".", 1)[0]


def segment_of(session: Session, whitelist: frozenset[str] | set[str]) -> Segment:
    """Build the segment of a session's target turn against an intent whitelist."""
    intent = session.target_turn.intent
    if not intent:
        raise DataError("target turn has no intent; corpus is malformed")
    return Segment(intent=intent, domain=domain_of(intent), eligible_for_feedback=intent in whitelist)


def feedback_ineligible(session: Session, whitelist: frozenset[str] | set[str]) -> bool:
    """True when feedback elicitation was impossible for this session.

    Covers barge-in, termination requests, unhandled requests, and target
    intents outside the whitelist.
    """
    if session.target_turn.intent not in whitelist:
        return True
    return any(flag in INELIGIBILITY_FLAGS for turn in session.turns for flag in turn.flags)


def interpret_feedback(text: str) -> FeedbackCategory:
    """Map an answering-turn utterance to YES / NO / OTHER."""
    tokens = tokenize(text)
    if tokens and tokens[0] in _YES_WORDS:
        return FeedbackCategory.YES
    if tokens and tokens[0] in _NO_WORDS:
        return FeedbackCategory.NO
    return FeedbackCategory.OTHER


def _derive_feedback(turns: Sequence[Turn], target_index: int) -> FeedbackCategory:
    prompt_positions = [i for i, t in enumerate(turns) if TurnFlag.ELICITATION_PROMPT in t.flags]
    if not prompt_positions:
        return FeedbackCategory.NONE_ELICITED
    first_prompt = prompt_positions[0]
    for turn in turns[first_prompt + 1 :]:
        if TurnFlag.ANSWERING_TURN in turn.flags:
            return interpret_feedback(turn.user_text)
    return FeedbackCategory.SILENCE


def _lift_session_features(turns: Sequence[Turn]) -> tuple[dict[str, str], dict[str, float]]:
    # Categorical meta features constant across the whole session are lifted
    # to session level; a couple of structural numericals are always added.
    categorical: dict[str, str] = {}
    first = turns[0].meta_categorical
    for name, value in first.items():
        if all(turn.meta_categorical.get(name) == value for turn in turns):
            categorical[name] = value
    elapsed = (turns[-1].timestamp - turns[0].timestamp) / 60.0
    numerical = {"num_turns": float(len(turns)), "elapsed_minutes": elapsed}
    return categorical, numerical


def sessionize(
    turns: Sequence[Turn],
    delta_minutes: float = DEFAULT_SESSION_GAP_MINUTES,
    whitelist: frozenset[str] | set[str] = frozenset(),
) -> list[Session]:
    """Group a time-ordered turn stream into maximal sessions.

    Adjacent turns whose gap exceeds ``delta_minutes`` start a new session.
    The target turn defaults to the first elicitation-prompt turn when one
    exists, otherwise the last turn; feedback is derived from the answering
    turn when present.
    """
    if delta_minutes <= 0:
        raise DataError(f"delta_minutes must be positive, got {delta_minutes}")
    for i in range(1, len(turns)):
        if turns[i].timestamp < turns[i - 1].timestamp:
            raise DataError(f"turns not sorted by timestamp: violation at position {i}")

    sessions: list[Session] = []
    start = 0
    for i in range(1, len(turns) + 1):
        at_end = i == len(turns)
        gap_exceeded = (
            not at_end and (turns[i].timestamp - turns[i - 1].timestamp) / 60.0 > delta_minutes
        )
        if at_end or gap_exceeded:
            group = tuple(turns[start:i])
            prompt_positions = [
                j for j, t in enumerate(group) if TurnFlag.ELICITATION_PROMPT in t.flags
            ]
            target = prompt_positions[0] if prompt_positions else len(group) - 1
            categorical, numerical = _lift_session_features(group)
            sessions.append(
                Session(
                    turns=group,
                    target_index=target,
                    feedback=_derive_feedback(group, target),
                    segment=Segment(
                        intent=group[target].intent,
                        domain=domain_of(group[target].intent),
                        eligible_for_feedback=group[target].intent in whitelist,
                    ),
                    session_categorical=categorical,
                    session_numerical=numerical,
                )
            )
            start = i
    return sessions


def _strip_prompt_suffix(agent_text: str, prompts: Sequence[str]) -> str:
    lowered = agent_text.lower()
    for prompt in prompts:
        if lowered.endswith(prompt):
            return agent_text[: len(agent_text) - len(prompt)].rstrip()
    return agent_text


def strip_elicitation(session: Session, prompts: Sequence[str] = ELICITATION_PROMPTS) -> Session:
    """Remove the feedback prompt and answering turn from a session.

    Turns flagged ELICITATION_PROMPT or ANSWERING_TURN are dropped, except
    that the target turn is never removed: when the prompt shares the target
    turn, only the appended prompt text is cut from its agent response.  The
    feedback field is preserved and the target index remapped.  Idempotent.
    """
    if not any(
        TurnFlag.ELICITATION_PROMPT in t.flags or TurnFlag.ANSWERING_TURN in t.flags
        for t in session.turns
    ):
        return session

    kept: list[Turn] = []
    removed_before_target = 0
    for i, turn in enumerate(session.turns):
        flagged = TurnFlag.ELICITATION_PROMPT in turn.flags or TurnFlag.ANSWERING_TURN in turn.flags
        if flagged and i != session.target_index:
            if i < session.target_index:
                removed_before_target += 1
            continue
        if flagged:
            # Prompt attached to the target turn: cut the prompt suffix only.
            new_flags = turn.flags - {TurnFlag.ELICITATION_PROMPT, TurnFlag.ANSWERING_TURN}
            turn = replace(
                turn,
                agent_text=_strip_prompt_suffix(turn.agent_text, prompts),
                flags=new_flags,
            )
        kept.append(turn)
    return replace(
        session,
        turns=tuple(kept),
        target_index=session.target_index - removed_before_target,
    )


# ---------------------------------------------------------------------------
# JSON Lines interchange
# ---------------------------------------------------------------------------

_TURN_FIELDS = {
    "user_text",
    "agent_text",
    "timestamp",
    "intent",
    "flags",
    "meta_categorical",
    "meta_numerical",
}
_SESSION_FIELDS = {
    "turns",
    "target_index",
    "feedback",
    "label",
    "segment",
    "session_categorical",
    "session_numerical",
}
_SEGMENT_FIELDS = {"intent", "domain", "eligible_for_feedback"}


def turn_to_dict(turn: Turn) -> dict:
    return {
        "user_text": turn.user_text,
        "agent_text": turn.agent_text,
        "timestamp": turn.timestamp,
        "intent": turn.intent,
        "flags": sorted(f.value for f in turn.flags),
        "meta_categorical": dict(turn.meta_categorical),
        "meta_numerical": dict(turn.meta_numerical),
    }


def session_to_dict(session: Session) -> dict:
    return {
        "turns": [turn_to_dict(t) for t in session.turns],
        "target_index": session.target_index,
        "feedback": session.feedback.value,
        "label": session.label,
        "segment": {
            "intent": session.segment.intent,
            "domain": session.segment.domain,
            "eligible_for_feedback": session.segment.eligible_for_feedback,
        },
        "session_categorical": dict(session.session_categorical),
        "session_numerical": dict(session.session_numerical),
    }


def _check_unknown(data: Mapping, allowed: set, where: str, strict: bool) -> None:
    unknown = set(data) - allowed
    if unknown and strict:
        raise DataError(f"unknown field(s) {sorted(unknown)} in {where}")


def turn_from_dict(data: Mapping, strict: bool = True) -> Turn:
    _check_unknown(data, _TURN_FIELDS, "turn record", strict)
    try:
        return Turn(
            user_text=data["user_text"],
            agent_text=data["agent_text"],
            timestamp=float(data["timestamp"]),
            intent=data["intent"],
            flags=frozenset(TurnFlag(f) for f in data.get("flags", [])),
            meta_categorical=dict(data.get("meta_categorical", {})),
            meta_numerical={k: float(v) for k, v in data.get("meta_numerical", {}).items()},
        )
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed turn record: {exc}") from exc


def session_from_dict(data: Mapping, strict: bool = True) -> Session:
    _check_unknown(data, _SESSION_FIELDS, "session record", strict)
    try:
        seg = data["segment"]
        _check_unknown(seg, _SEGMENT_FIELDS, "segment record", strict)
        session = Session(
            turns=tuple(turn_from_dict(t, strict) for t in data["turns"]),
            target_index=int(data["target_index"]),
            feedback=FeedbackCategory(data["feedback"]),
            label=data.get("label"),
            segment=Segment(
                intent=seg["intent"],
                domain=seg["domain"],
                eligible_for_feedback=bool(seg["eligible_for_feedback"]),
            ),
            session_categorical=dict(data.get("session_categorical", {})),
            session_numerical={k: float(v) for k, v in data.get("session_numerical", {}).items()},
        )
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed session record: {exc}") from exc
    if strict and session.feedback in ELICITED_CATEGORIES:
        if not any(
            TurnFlag.ELICITATION_PROMPT in t.flags
            for t in session.turns[session.target_index :]
        ):
            raise DataError(
                f"session with feedback {session.feedback.value} has no elicitation prompt turn"
            )
    return session


def write_sessions(path: str | Path, sessions: Iterable[Session]) -> None:
    """Write sessions as JSON Lines, one session per line."""
    with atomic_open(path, "w") as handle:
        for session in sessions:
            handle.write(json.dumps(session_to_dict(session)) + "\n")


def read_sessions(path: str | Path, strict: bool = True) -> list[Session]:
    """Read a JSON Lines session file.

    In strict mode unknown fields are rejected; in lenient mode they are
    ignored.
    """
    sessions = []
    with open(path) as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                sessions.append(session_from_dict(data, strict))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return sessions
