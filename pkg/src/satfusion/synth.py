"""Seeded synthetic dialog traffic generator.

Sessions are built from templates: each gets a latent satisfaction label,
dissatisfied sessions exhibit rephrase/repeat patterns and negative lexical
markers (a mix of global phrases and domain-specific complaints) with a
configurable strength, and barge-in / termination / unhandled incidents are
sampled with a bias toward dissatisfied sessions and suppress feedback
elicitation.  Elicited sessions answer YES/NO consistently with the latent
label up to a configurable noise rate, or stay silent / answer something
else.  Everything is deterministic given the seed.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass
import numpy as np

from .dialog import (
    ELICITATION_PROMPTS,
    FeedbackCategory,
    Segment,
    Session,
    Turn,
    TurnFlag,
    tokenize,
)
from .errors import ConfigError, DataError

_ACTIONS = ("check", "find", "start")

# Per-domain topic nouns and complaint templates.  Complaint content words are
# kept mostly unique per domain so recognizing dissatisfaction takes
# domain-specific evidence, not just a handful of global cues.
_DOMAIN_TABLE: dict[str, dict] = {
    "weather": {
        "topics": ("forecast", "temperature", "rain", "wind", "humidity", "sunrise"),
        "complaints": (
            "that {topic} is totally inaccurate",
            "this {topic} report feels outdated",
            "the {topic} you read is backwards",
            "your {topic} numbers look stale",
        ),
    },
    "music": {
        "topics": ("song", "playlist", "album", "artist", "station", "volume"),
        "complaints": (
            "skip this awful {topic}",
            "that {topic} sounds offbeat and messy",
            "this {topic} is grating on my ears",
            "the {topic} you picked is unlistenable",
        ),
    },
    "shopping": {
        "topics": ("order", "cart", "delivery", "listing", "coupon", "refund"),
        "complaints": (
            "that {topic} looks overpriced",
            "this {topic} seems counterfeit to me",
            "the {topic} status is stuck somewhere",
            "my {topic} came out duplicated",
        ),
    },
    "timer": {
        "topics": ("timer", "alarm", "reminder", "countdown", "stopwatch", "snooze"),
        "complaints": (
            "the {topic} is mistimed again",
            "that {topic} keeps lagging behind",
            "the {topic} rang way too early",
            "that {topic} never buzzed at all",
        ),
    },
    "knowledge": {
        "topics": ("capital", "population", "distance", "definition", "history", "formula"),
        "complaints": (
            "that answer about the {topic} is misleading",
            "your {topic} explanation came out garbled",
            "that {topic} figure contradicts itself",
            "the {topic} answer is halfbaked",
        ),
    },
    "smarthome": {
        "topics": ("lights", "thermostat", "lock", "camera", "plug", "vacuum"),
        "complaints": (
            "the {topic} stayed unresponsive",
            "that {topic} keeps flickering randomly",
            "the {topic} ignored the command twice",
            "that {topic} keeps disconnecting itself",
        ),
    },
    "sports": {
        "topics": ("score", "schedule", "standings", "roster", "highlights", "odds"),
        "complaints": (
            "those {topic} numbers look fabricated",
            "that {topic} update is ancient news",
            "the {topic} is missing yesterdays game",
            "that {topic} mixes up the teams",
        ),
    },
    "news": {
        "topics": ("headlines", "briefing", "politics", "economy", "tech", "local"),
        "complaints": (
            "that {topic} story feels recycled",
            "this {topic} rundown is sensational fluff",
            "that {topic} skipped the main story",
            "this {topic} is riddled with clickbait",
        ),
    },
    "calendar": {
        "topics": ("meeting", "appointment", "event", "birthday", "deadline", "agenda"),
        "complaints": (
            "my {topic} got doublebooked",
            "the {topic} entry vanished somehow",
            "the {topic} shifted to another day",
            "that {topic} dropped my invite",
        ),
    },
    "travel": {
        "topics": ("flight", "hotel", "route", "traffic", "train", "itinerary"),
        "complaints": (
            "that {topic} got rerouted badly",
            "this {topic} looks overbooked",
            "the {topic} fare jumped suddenly",
            "that {topic} skips my stopover",
        ),
    },
    "food": {
        "topics": ("recipe", "restaurant", "reservation", "menu", "takeout", "groceries"),
        "complaints": (
            "that {topic} suggestion sounds inedible",
            "this {topic} idea reads scrambled",
            "that {topic} swaps half the ingredients",
            "the {topic} portions look microscopic",
        ),
    },
    "finance": {
        "topics": ("balance", "stock", "budget", "invoice", "exchange", "savings"),
        "complaints": (
            "those {topic} figures are miscalculated",
            "that {topic} quote looks bogus",
            "the {topic} is off by a decimal",
            "that {topic} ignores the conversion",
        ),
    },
    "movies": {
        "topics": ("showtimes", "trailer", "review", "ticket", "sequel", "cast"),
        "complaints": (
            "that {topic} summary spoiled everything",
            "this {topic} pick is miscast",
            "the {topic} shows a cancelled screening",
            "that {topic} review rambles pointlessly",
        ),
    },
    "books": {
        "topics": ("novel", "chapter", "audiobook", "author", "summary", "quote"),
        "complaints": (
            "that {topic} passage was misquoted",
            "this {topic} version feels abridged",
            "the {topic} skips entire chapters",
            "that {topic} recap mangles the plot",
        ),
    },
    "health": {
        "topics": ("steps", "sleep", "workout", "heartrate", "hydration", "stretch"),
        "complaints": (
            "that {topic} advice sounds alarmist",
            "the {topic} guidance seems misdosed",
            "the {topic} count looks inflated",
            "that {topic} tip contradicts my doctor",
        ),
    },
    "games": {
        "topics": ("trivia", "puzzle", "quiz", "riddle", "match", "leaderboard"),
        "complaints": (
            "the {topic} round glitched out",
            "this {topic} level is unwinnable",
            "the {topic} scoring cheats blatantly",
            "that {topic} hints are useless",
        ),
    },
}

# Long-tail entity slot filled into queries and echoes.  Rare tokens appear in
# satisfied and dissatisfied sessions alike, so rarity itself carries no
# satisfaction signal.
_ENTITY_PREFIXES = (
    "ash", "bell", "crest", "dorn", "elm", "fair", "glen", "hart",
    "iron", "kent", "lake", "mill", "north", "oak", "pine", "ridge",
)
_ENTITY_SUFFIXES = (
    "berg", "borough", "bridge", "burn", "dale", "field", "ford", "gate",
    "ham", "hill", "mont", "port", "stead", "ton", "view",
)
ENTITIES = tuple(p + s for p in _ENTITY_PREFIXES for s in _ENTITY_SUFFIXES)

QUERY_TEMPLATES = (
    "can you {action} the {topic}",
    "please {action} the {topic} for me",
    "{action} the {topic} now",
    "i want to {action} the {topic}",
    "hey could you {action} the {topic}",
)
GOOD_ANSWERS = (
    "sure here is the {topic} you asked for",
    "okay the {topic} is ready now",
    "done i found the {topic} for you",
    "alright pulling up the {topic}",
    "here you go the {topic} looks good today",
)
BAD_ANSWERS = (
    "sorry i had trouble with the {topic}",
    "hmm something went sideways with that request",
    "i could not complete that right now",
    "sorry the {topic} service timed out",
)
UNHANDLED_ANSWERS = (
    "sorry i do not know that one",
    "sorry i did not understand the request",
)
GLOBAL_COMPLAINTS = (
    "no that is wrong",
    "that is definitely not what i asked for",
    "you got that completely wrong",
    "no redo that please",
)
REPEAT_TEMPLATE = "i said {query}"
# Every session gets one follow-up turn, and the agent acknowledges every
# follow-up from the same pool, so dialog structure carries no label signal;
# only the follow-up wording does.
POSITIVE_FOLLOWUPS = ("thanks", "great thanks", "perfect", "that works great", "nice thank you")
NEUTRAL_CONTINUATIONS = (
    "okay what about {entity}",
    "alright try {entity} instead",
    "now {action} the {topic} for {entity}",
    "hmm switch it to {entity}",
)
FOLLOWUP_ACKS = ("okay", "alright", "sure thing", "got it", "noted")
CHIT_PAIRS = (
    ("hello there", "hello how can i help"),
    ("what time is it", "it is seven o clock"),
    ("good morning", "good morning to you"),
)
OTHER_ANSWERS = ("maybe", "i guess so", "kind of", "hard to say", "ask me later")
YES_ANSWERS = ("yes", "yeah", "yep")
NO_ANSWERS = ("no", "nope", "nah")
FEEDBACK_ACK = "thanks for your feedback"
DEVICE_TYPES = ("echo", "echo_dot", "echo_show", "tablet")

_BASE_TIMESTAMP = 1_700_000_000.0


def negative_marker_tokens() -> frozenset[str]:
    """Tokens that only ever appear in dissatisfaction markers."""
    phrases: list[str] = list(GLOBAL_COMPLAINTS) + ["i said"]
    for entry in _DOMAIN_TABLE.values():
        phrases.extend(t.replace("{topic}", "") for t in entry["complaints"])
    neutral: set[str] = set()
    for pool in (
        QUERY_TEMPLATES,
        GOOD_ANSWERS,
        BAD_ANSWERS,
        UNHANDLED_ANSWERS,
        POSITIVE_FOLLOWUPS,
        NEUTRAL_CONTINUATIONS,
        FOLLOWUP_ACKS,
        OTHER_ANSWERS,
        YES_ANSWERS,
        NO_ANSWERS,
        ELICITATION_PROMPTS,
        (FEEDBACK_ACK, "stop please", "wait stop", "{topic}", "{action}", "{query}", "{entity}"),
    ):
        for text in pool:
            neutral.update(tokenize(text))
    for pair in CHIT_PAIRS:
        for text in pair:
            neutral.update(tokenize(text))
    for entry in _DOMAIN_TABLE.values():
        neutral.update(entry["topics"])
    neutral.update(_ACTIONS)
    neutral.update(ENTITIES)
    neutral.update(("for", "in", "near"))
    markers: set[str] = set()
    for phrase in phrases:
        markers.update(tokenize(phrase))
    return frozenset(markers - neutral)


@dataclass(frozen=True)
class GeneratorConfig:
    num_sessions: int = 50_000
    num_intents: int = 48
    whitelist_fraction: float = 0.5
    dissatisfaction_rate: float = 0.2
    barge_in_rate: float = 0.04
    termination_rate: float = 0.04
    unhandled_rate: float = 0.05
    elicitation_rate: float = 0.35
    silence_rate: float = 0.22
    other_feedback_rate: float = 0.13
    lexical_separability: float = 0.9
    feedback_noise_rate: float = 0.013
    annotation_noise_rate: float = 0.013
    incident_dissatisfaction_factor: float = 4.0
    seed: int = 11

    def __post_init__(self) -> None:
        rates = (
            self.whitelist_fraction,
            self.dissatisfaction_rate,
            self.barge_in_rate,
            self.termination_rate,
            self.unhandled_rate,
            self.elicitation_rate,
            self.silence_rate,
            self.other_feedback_rate,
            self.lexical_separability,
            self.feedback_noise_rate,
            self.annotation_noise_rate,
        )
        if any(not 0.0 <= r <= 1.0 for r in rates):
            raise ConfigError("all generator rates must lie in [0, 1]")
        if self.num_intents < 2:
            raise ConfigError("num_intents must be at least 2")
        max_intents = len(_DOMAIN_TABLE) * len(_ACTIONS)
        if self.num_intents > max_intents:
            raise ConfigError(f"num_intents cannot exceed {max_intents}")
        if self.silence_rate + self.other_feedback_rate > 1.0:
            raise ConfigError("silence_rate + other_feedback_rate must not exceed 1")
        if self.num_sessions <= 0:
            raise ConfigError("num_sessions must be positive")
        if self.incident_dissatisfaction_factor < 1.0:
            raise ConfigError("incident_dissatisfaction_factor must be >= 1")
        d, k = self.dissatisfaction_rate, self.incident_dissatisfaction_factor
        incident_total = self.barge_in_rate + self.termination_rate + self.unhandled_rate
        if incident_total * k / (1.0 - d + k * d) > 1.0:
            raise ConfigError("incident rates too high for the dissatisfaction factor")


@dataclass
class CorpusManifest:
    config: GeneratorConfig
    intents: tuple[str, ...]
    whitelist: tuple[str, ...]
    num_sessions: int
    whitelist_coverage: float
    vocab_size: int
    per_segment: dict[str, dict]

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "intents": list(self.intents),
            "whitelist": list(self.whitelist),
            "num_sessions": self.num_sessions,
            "whitelist_coverage": self.whitelist_coverage,
            "vocab_size": self.vocab_size,
            "per_segment": self.per_segment,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusManifest":
        config = dict(data["config"])
        return cls(
            config=GeneratorConfig(**config),
            intents=tuple(data["intents"]),
            whitelist=tuple(data["whitelist"]),
            num_sessions=int(data["num_sessions"]),
            whitelist_coverage=float(data["whitelist_coverage"]),
            vocab_size=int(data["vocab_size"]),
            per_segment=dict(data["per_segment"]),
        )


def _hash64(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def _hash_unit(text: str) -> float:
    return _hash64(text) / 2.0**64


def intent_catalog(config: GeneratorConfig) -> tuple[tuple[str, ...], dict[str, float]]:
    """Intent names (domain-major) and their popularity weights."""
    domains = list(_DOMAIN_TABLE)
    needed_domains = math.ceil(config.num_intents / len(_ACTIONS))
    intents: list[str] = []
    for domain in domains[:needed_domains]:
        for action in _ACTIONS:
            if len(intents) < config.num_intents:
                intents.append(f"{domain}.{action}")
    rng = np.random.default_rng([config.seed, 0])
    ranks = rng.permutation(len(intents))
    weights = np.array([1.0 / (ranks[i] + 3.0) for i in range(len(intents))])
    weights /= weights.sum()
    return tuple(intents), dict(zip(intents, weights))


def choose_whitelist(config: GeneratorConfig) -> frozenset[str]:
    """Whitelist spread round-robin across domains, most popular intents first."""
    intents, weights = intent_catalog(config)
    target = round(config.num_intents * config.whitelist_fraction)
    by_domain: dict[str, list[str]] = {}
    for intent in intents:
        by_domain.setdefault(intent.split(".")[0], []).append(intent)
    for domain in by_domain:
        by_domain[domain].sort(key=lambda i: -weights[i])
    chosen: list[str] = []
    cursor = {domain: 0 for domain in by_domain}
    domain_cycle = list(by_domain)
    while len(chosen) < target:
        progressed = False
        for domain in domain_cycle:
            if len(chosen) >= target:
                break
            if cursor[domain] < len(by_domain[domain]):
                chosen.append(by_domain[domain][cursor[domain]])
                cursor[domain] += 1
                progressed = True
        if not progressed:
            break
    return frozenset(chosen)


def _incident_probs(config: GeneratorConfig, latent: int) -> tuple[float, float, float]:
    # Conditional incident rates keep the configured marginals while biasing
    # incidents toward dissatisfied sessions by the configured factor.
    d, k = config.dissatisfaction_rate, config.incident_dissatisfaction_factor
    denom = 1.0 - d + k * d
    factor = k / denom if latent else 1.0 / denom
    return (
        config.barge_in_rate * factor,
        config.termination_rate * factor,
        config.unhandled_rate * factor,
    )


def _build_session(
    rng: np.random.Generator,
    config: GeneratorConfig,
    intent: str,
    whitelisted: bool,
) -> Session:
    domain, action = intent.split(".")
    entry = _DOMAIN_TABLE[domain]
    topic = str(rng.choice(entry["topics"]))
    latent = int(rng.random() < config.dissatisfaction_rate)

    p_barge, p_term, p_unhandled = _incident_probs(config, latent)
    u = rng.random()
    if u < p_barge:
        incident = "barge_in"
    elif u < p_barge + p_term:
        incident = "termination"
    elif u < p_barge + p_term + p_unhandled:
        incident = "unhandled"
    else:
        incident = None

    elicited = incident is None and whitelisted and rng.random() < config.elicitation_rate
    feedback = FeedbackCategory.NONE_ELICITED
    if elicited:
        u = rng.random()
        if u < config.silence_rate:
            feedback = FeedbackCategory.SILENCE
        elif u < config.silence_rate + config.other_feedback_rate:
            feedback = FeedbackCategory.OTHER
        else:
            flipped = rng.random() < config.feedback_noise_rate
            dissatisfied_answer = latent != flipped
            feedback = FeedbackCategory.NO if dissatisfied_answer else FeedbackCategory.YES

    marked = latent == 1 and rng.random() < config.lexical_separability
    query = str(rng.choice(QUERY_TEMPLATES)).format(action=action, topic=topic)
    entity = str(rng.choice(ENTITIES))
    if rng.random() < 0.7:
        query = f"{query} {str(rng.choice(('for', 'in', 'near')))} {entity}"
    if incident == "unhandled":
        answer = str(rng.choice(UNHANDLED_ANSWERS))
    elif marked and rng.random() < 0.25:
        answer = str(rng.choice(BAD_ANSWERS)).format(topic=topic)
    else:
        answer = str(rng.choice(GOOD_ANSWERS)).format(topic=topic)
        if rng.random() < 0.3:
            answer = f"{answer} for {entity}"

    skill = f"{domain}_skill"
    screen = "yes" if rng.random() < 0.4 else "no"
    start = _BASE_TIMESTAMP + float(rng.uniform(0.0, 365 * 24 * 3600))
    timestamp = start

    def make_turn(user_text: str, agent_text: str, flags: frozenset = frozenset()) -> Turn:
        nonlocal timestamp
        this_ts = timestamp
        timestamp += float(rng.uniform(4.0, 40.0))
        latency = float(rng.gamma(2.0, 0.3)) + (0.25 if latent else 0.0)
        return Turn(
            user_text=user_text,
            agent_text=agent_text,
            timestamp=this_ts,
            intent=intent,
            flags=flags,
            meta_categorical={"skill": skill, "device_screen": screen},
            meta_numerical={"response_latency_s": latency, "turn_index_in_session": 0.0},
        )

    turns: list[Turn] = []
    n_pre = int(rng.choice([0, 1, 2], p=[0.5, 0.3, 0.2]))
    for _ in range(n_pre):
        chit_user, chit_agent = CHIT_PAIRS[int(rng.integers(len(CHIT_PAIRS)))]
        turns.append(make_turn(chit_user, chit_agent))

    target_index = len(turns)
    turns.append(make_turn(query, answer, frozenset({TurnFlag.UNHANDLED}) if incident == "unhandled" else frozenset()))

    if marked:
        u = rng.random()
        if u < 0.8:
            followup = str(rng.choice(entry["complaints"])).format(topic=topic)
        elif u < 0.92:
            followup = str(rng.choice(GLOBAL_COMPLAINTS))
        else:
            followup = REPEAT_TEMPLATE.format(query=query)
    elif rng.random() < 0.5:
        followup = str(rng.choice(POSITIVE_FOLLOWUPS))
    else:
        followup = str(rng.choice(NEUTRAL_CONTINUATIONS)).format(
            entity=str(rng.choice(ENTITIES)), action=action, topic=topic
        )
    turns.append(make_turn(followup, str(rng.choice(FOLLOWUP_ACKS))))

    if incident == "termination":
        turns.append(make_turn("stop please", "", frozenset({TurnFlag.TERMINATION})))
    elif incident == "barge_in":
        turns.append(make_turn("wait stop", "", frozenset({TurnFlag.BARGE_IN})))

    if elicited:
        prompt = str(rng.choice(ELICITATION_PROMPTS))
        target = turns[target_index]
        turns[target_index] = Turn(
            user_text=target.user_text,
            agent_text=(target.agent_text + " " + prompt).strip(),
            timestamp=target.timestamp,
            intent=target.intent,
            flags=target.flags | {TurnFlag.ELICITATION_PROMPT},
            meta_categorical=target.meta_categorical,
            meta_numerical=target.meta_numerical,
        )
        if feedback in (FeedbackCategory.YES, FeedbackCategory.NO, FeedbackCategory.OTHER):
            if feedback is FeedbackCategory.YES:
                reply = str(rng.choice(YES_ANSWERS))
            elif feedback is FeedbackCategory.NO:
                reply = str(rng.choice(NO_ANSWERS))
            else:
                reply = str(rng.choice(OTHER_ANSWERS))
            turns.append(make_turn(reply, FEEDBACK_ACK, frozenset({TurnFlag.ANSWERING_TURN})))

    turns = [
        Turn(
            user_text=t.user_text,
            agent_text=t.agent_text,
            timestamp=t.timestamp,
            intent=t.intent,
            flags=t.flags,
            meta_categorical=t.meta_categorical,
            meta_numerical={**t.meta_numerical, "turn_index_in_session": float(i)},
        )
        for i, t in enumerate(turns)
    ]

    return Session(
        turns=tuple(turns),
        target_index=target_index,
        feedback=feedback,
        label=latent,
        segment=Segment(intent=intent, domain=domain, eligible_for_feedback=whitelisted),
        session_categorical={"device_type": str(rng.choice(DEVICE_TYPES))},
        session_numerical={"hour_of_day": float(rng.integers(0, 24))},
    )


def generate(config: GeneratorConfig) -> tuple[list[Session], CorpusManifest]:
    """Generate the corpus and its manifest; deterministic given the seed."""
    intents, weights = intent_catalog(config)
    whitelist = choose_whitelist(config)
    master = np.random.default_rng([config.seed, 1])
    counts = master.multinomial(config.num_sessions, [weights[i] for i in intents])
    counts_by_intent = dict(zip(intents, counts))

    sessions: list[Session] = []
    per_segment: dict[str, dict] = {}
    vocab: set[str] = set()
    for intent in sorted(intents):
        rng = np.random.default_rng([config.seed, 2, _hash64(intent)])
        whitelisted = intent in whitelist
        group: list[Session] = []
        for _ in range(int(counts_by_intent[intent])):
            group.append(_build_session(rng, config, intent, whitelisted))
        sessions.extend(group)
        n = len(group)
        elicited = [s for s in group if s.feedback is not FeedbackCategory.NONE_ELICITED]
        yes_no = [
            s
            for s in elicited
            if s.feedback in (FeedbackCategory.YES, FeedbackCategory.NO)
        ]
        incidents = sum(
            1
            for s in group
            if any(f in {TurnFlag.BARGE_IN, TurnFlag.TERMINATION, TurnFlag.UNHANDLED} for t in s.turns for f in t.flags)
        )
        agreement = (
            sum((s.feedback is FeedbackCategory.NO) == bool(s.label) for s in yes_no) / len(yes_no)
            if yes_no
            else None
        )
        per_segment[intent] = {
            "count": n,
            "whitelisted": whitelisted,
            "dissatisfaction_rate": sum(s.label for s in group) / n if n else 0.0,
            "incident_rate": incidents / n if n else 0.0,
            "elicitation_rate": len(elicited) / n if n else 0.0,
            "other_share": (
                sum(s.feedback in (FeedbackCategory.SILENCE, FeedbackCategory.OTHER) for s in elicited)
                / len(elicited)
                if elicited
                else None
            ),
            "feedback_agreement": agreement,
        }
        for session in group:
            for turn in session.turns:
                vocab.update(tokenize(turn.user_text))
                vocab.update(tokenize(turn.agent_text))

    covered = sum(1 for s in sessions if s.segment.eligible_for_feedback)
    manifest = CorpusManifest(
        config=config,
        intents=intents,
        whitelist=tuple(sorted(whitelist)),
        num_sessions=len(sessions),
        whitelist_coverage=covered / len(sessions),
        vocab_size=len(vocab),
        per_segment=per_segment,
    )
    return sessions, manifest


def annotate_oracle(session: Session, noise_rate: float = 0.0, seed: int = 0) -> int:
    """Stand-in for a human annotator: the latent label with optional noise.

    The flip decision is a deterministic hash of (session id, seed), so the
    same session always receives the same annotation.
    """
    if session.label is None:
        raise DataError("annotate_oracle requires the generator's latent label")
    if not 0.0 <= noise_rate <= 1.0:
        raise ConfigError(f"annotation noise rate must lie in [0, 1], got {noise_rate}")
    if _hash_unit(f"annotate:{session.session_id}:{seed}") < noise_rate:
        return 1 - session.label
    return int(session.label)
