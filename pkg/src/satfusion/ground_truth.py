"""Composite ground-truth construction and feedback-rate marking.

For each traffic segment the composer weaves feedback-labeled examples with
annotation-labeled ones in proportions estimated from live traffic: segments
outside the feedback whitelist are served entirely from the annotation pool;
whitelisted segments receive annotation examples covering the
feedback-ineligible share and the non-yes/no share, with feedback examples
filling the remainder.  Evaluation then marks a configurable fraction of
feedback examples as "given by user".
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .dialog import FeedbackCategory, Session, feedback_ineligible
from .errors import DataError
from .fileio import atomic_open

logger = logging.getLogger(__name__)


class Provenance:
    ANNOTATION_INELIGIBLE = "H_ineligible"
    ANNOTATION_OTHER = "H_other"
    FEEDBACK = "F"

    ALL = (ANNOTATION_INELIGIBLE, ANNOTATION_OTHER, FEEDBACK)


@dataclass(frozen=True)
class PoolExample:
    session_id: str
    label: int
    domain: str


@dataclass(frozen=True)
class SegmentRates:
    ineligible: float
    other: float


@dataclass
class SegmentPool:
    """Per-segment sampling pools and rates."""

    segment: str
    domain: str
    target_count: int
    annot_eligible: tuple[PoolExample, ...]
    annot_ineligible: tuple[PoolExample, ...]
    feedback: tuple[PoolExample, ...]
    rate_ineligible: float
    rate_other: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.rate_ineligible <= 1.0 or not 0.0 <= self.rate_other <= 1.0:
            raise DataError(f"segment {self.segment}: rates must lie in [0, 1]")
        if self.target_count < 0:
            raise DataError(f"segment {self.segment}: negative target count")
        ids = [e.session_id for pool in (self.annot_eligible, self.annot_ineligible, self.feedback) for e in pool]
        if len(ids) != len(set(ids)):
            raise DataError(f"segment {self.segment}: pools must be disjoint")


@dataclass
class SegmentPools:
    pools: dict[str, SegmentPool]


@dataclass(frozen=True)
class GroundTruthExample:
    session_id: str
    label: int
    segment: str
    domain: str
    provenance: str
    given_by_user: bool = False


@dataclass
class GroundTruthSet:
    examples: dict[str, tuple[GroundTruthExample, ...]]
    seed: int
    whitelist: frozenset[str]
    rates: dict[str, SegmentRates] = field(default_factory=dict)
    given_rate: float | None = None
    warnings: tuple[str, ...] = ()

    def iter_examples(self) -> Iterator[GroundTruthExample]:
        for segment in sorted(self.examples):
            yield from self.examples[segment]

    @property
    def total(self) -> int:
        return sum(len(v) for v in self.examples.values())


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def _stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def _segment_rng(seed: int, segment: str) -> np.random.Generator:
    return np.random.default_rng([seed, _stable_hash(segment)])


def _sample(
    rng: np.random.Generator,
    pool: Sequence[PoolExample],
    count: int,
    segment: str,
    source: str,
    strict: bool,
    warnings: list[str],
) -> list[PoolExample]:
    if count > len(pool):
        message = (
            f"segment {segment}: requested {count} examples from {source}, "
            f"pool holds {len(pool)} (shortfall {count - len(pool)})"
        )
        if strict:
            raise DataError(message)
        warnings.append(message)
        count = len(pool)
    chosen = rng.choice(len(pool), size=count, replace=False) if count else []
    return [pool[i] for i in chosen]


def allocation_counts(target: int, rate_ineligible: float, rate_other: float) -> tuple[int, int, int]:
    """Integer allocation for a whitelisted segment.

    Products are rounded half-up; the feedback share absorbs the residual so
    the three counts always sum to the target.
    """
    n_ineligible = round_half_up(rate_ineligible * target)
    n_other = round_half_up(rate_other * (target - n_ineligible))
    n_feedback = target - n_ineligible - n_other
    return n_ineligible, n_other, n_feedback


def compose_ground_truth(
    pools: SegmentPools,
    whitelist: frozenset[str] | set[str],
    seed: int,
    strict: bool = True,
) -> GroundTruthSet:
    """Sample the composite ground-truth set, seeded per segment.

    Non-whitelisted segments draw their full target from the annotation pool.
    Whitelisted segments draw the ineligible share from ineligible-annotation,
    the other-feedback share from eligible-annotation, and the rest from the
    feedback pool.  All sampling is uniform without replacement.
    """
    whitelist = frozenset(whitelist)
    examples: dict[str, tuple[GroundTruthExample, ...]] = {}
    rates: dict[str, SegmentRates] = {}
    warnings: list[str] = []
    for segment in sorted(pools.pools):
        pool = pools.pools[segment]
        rng = _segment_rng(seed, segment)
        rates[segment] = SegmentRates(pool.rate_ineligible, pool.rate_other)
        rows: list[GroundTruthExample] = []
        if segment not in whitelist:
            combined = pool.annot_ineligible + pool.annot_eligible
            drawn = _sample(rng, combined, pool.target_count, segment, "annotation", strict, warnings)
            rows.extend(
                GroundTruthExample(e.session_id, e.label, segment, e.domain, Provenance.ANNOTATION_INELIGIBLE)
                for e in drawn
            )
        else:
            n_ineligible, n_other, n_feedback = allocation_counts(
                pool.target_count, pool.rate_ineligible, pool.rate_other
            )
            for count, source_pool, source_name, provenance in (
                (n_ineligible, pool.annot_ineligible, "ineligible annotation", Provenance.ANNOTATION_INELIGIBLE),
                (n_other, pool.annot_eligible, "eligible annotation", Provenance.ANNOTATION_OTHER),
                (n_feedback, pool.feedback, "feedback", Provenance.FEEDBACK),
            ):
                drawn = _sample(rng, source_pool, count, segment, source_name, strict, warnings)
                rows.extend(
                    GroundTruthExample(e.session_id, e.label, segment, e.domain, provenance)
                    for e in drawn
                )
        examples[segment] = tuple(rows)
    return GroundTruthSet(
        examples=examples,
        seed=seed,
        whitelist=whitelist,
        rates=rates,
        warnings=tuple(warnings),
    )


def mark_given_feedback(gt: GroundTruthSet, rate: float, seed: int) -> GroundTruthSet:
    """Mark floor(rate * total) feedback-provenance examples as given by user.

    Marks are the prefix of one seeded permutation of the feedback examples,
    so for a fixed seed the marked sets of increasing rates are nested.  Only
    feedback-provenance examples are ever marked; the count is capped by their
    availability.
    """
    if not 0.0 <= rate <= 1.0:
        raise DataError(f"feedback collection rate must lie in [0, 1], got {rate}")
    ordered = list(gt.iter_examples())
    candidates = [i for i, ex in enumerate(ordered) if ex.provenance == Provenance.FEEDBACK]
    budget = min(math.floor(rate * len(ordered)), len(candidates))
    rng = np.random.default_rng([seed, _stable_hash("mark_given_feedback")])
    permutation = rng.permutation(len(candidates))
    marked_indices = {candidates[permutation[i]] for i in range(budget)}

    new_examples: dict[str, tuple[GroundTruthExample, ...]] = {}
    position = 0
    for segment in sorted(gt.examples):
        rows = []
        for example in gt.examples[segment]:
            rows.append(replace(example, given_by_user=position in marked_indices))
            position += 1
        new_examples[segment] = tuple(rows)
    return GroundTruthSet(
        examples=new_examples,
        seed=gt.seed,
        whitelist=gt.whitelist,
        rates=dict(gt.rates),
        given_rate=rate,
        warnings=gt.warnings,
    )


def estimate_rates(
    sessions: Sequence[Session],
    whitelist: frozenset[str] | set[str],
) -> dict[str, SegmentRates]:
    """Per-segment ineligibility and non-yes/no feedback rates from traffic.

    The ineligible rate counts sessions where elicitation was impossible; the
    other rate counts elicited sessions whose feedback was not YES or NO.
    Segments with no elicited sessions report an other-rate of 0 with a
    warning.
    """
    whitelist = frozenset(whitelist)
    by_segment: dict[str, list[Session]] = {}
    for session in sessions:
        by_segment.setdefault(session.segment.intent, []).append(session)
    rates: dict[str, SegmentRates] = {}
    for segment in sorted(by_segment):
        group = by_segment[segment]
        if not group:
            logger.warning("segment %s has no sessions; skipping", segment)
            continue
        n_ineligible = sum(feedback_ineligible(s, whitelist) for s in group)
        elicited = [s for s in group if s.feedback is not FeedbackCategory.NONE_ELICITED]
        if elicited:
            n_other = sum(
                s.feedback in (FeedbackCategory.SILENCE, FeedbackCategory.OTHER) for s in elicited
            )
            other_rate = n_other / len(elicited)
        else:
            other_rate = 0.0
            if segment in whitelist:
                logger.warning("segment %s has no elicited sessions; other-rate set to 0", segment)
        rates[segment] = SegmentRates(n_ineligible / len(group), other_rate)
    return rates


def _max_feasible_target(
    want: int,
    rate_ineligible: float,
    rate_other: float,
    n_annot_ineligible: int,
    n_annot_eligible: int,
    n_feedback: int,
) -> int:
    for target in range(want, -1, -1):
        n_i, n_o, n_f = allocation_counts(target, rate_ineligible, rate_other)
        if n_i <= n_annot_ineligible and n_o <= n_annot_eligible and n_f <= n_feedback:
            return target
    return 0


def build_pools(
    sessions: Sequence[Session],
    whitelist: frozenset[str] | set[str],
    annotate: Callable[[Session], int],
    target_fraction: float,
    seed: int,
) -> SegmentPools:
    """Partition held-out traffic into per-segment sampling pools.

    Sessions carrying a YES/NO feedback label form the feedback pool (labeled
    by the feedback); everything else is annotated via ``annotate`` and split
    into eligible and ineligible annotation pools.  Target counts are
    ``target_fraction`` of the segment's traffic, capped so strict composition
    is always feasible.
    """
    if not 0.0 < target_fraction <= 1.0:
        raise DataError(f"target_fraction must lie in (0, 1], got {target_fraction}")
    whitelist = frozenset(whitelist)
    rates = estimate_rates(sessions, whitelist)
    by_segment: dict[str, list[Session]] = {}
    for session in sessions:
        by_segment.setdefault(session.segment.intent, []).append(session)

    pools: dict[str, SegmentPool] = {}
    for segment in sorted(by_segment):
        group = by_segment[segment]
        feedback_pool: list[PoolExample] = []
        annot_eligible: list[PoolExample] = []
        annot_ineligible: list[PoolExample] = []
        for session in group:
            domain = session.segment.domain
            if session.feedback in (FeedbackCategory.YES, FeedbackCategory.NO):
                label = 1 if session.feedback is FeedbackCategory.NO else 0
                feedback_pool.append(PoolExample(session.session_id, label, domain))
            else:
                example = PoolExample(session.session_id, annotate(session), domain)
                if feedback_ineligible(session, whitelist):
                    annot_ineligible.append(example)
                else:
                    annot_eligible.append(example)
        rate = rates[segment]
        want = math.floor(target_fraction * len(group))
        if segment in whitelist:
            target = _max_feasible_target(
                want,
                rate.ineligible,
                rate.other,
                len(annot_ineligible),
                len(annot_eligible),
                len(feedback_pool),
            )
        else:
            target = min(want, len(annot_ineligible) + len(annot_eligible))
        pools[segment] = SegmentPool(
            segment=segment,
            domain=group[0].segment.domain,
            target_count=target,
            annot_eligible=tuple(annot_eligible),
            annot_ineligible=tuple(annot_ineligible),
            feedback=tuple(feedback_pool),
            rate_ineligible=rate.ineligible,
            rate_other=rate.other,
        )
    return SegmentPools(pools=pools)


# ---------------------------------------------------------------------------
# JSON Lines persistence: one header line, then one line per example.
# ---------------------------------------------------------------------------


def write_ground_truth(path: str | Path, gt: GroundTruthSet) -> None:
    whitelist_hash = hashlib.sha256(json.dumps(sorted(gt.whitelist)).encode()).hexdigest()
    header = {
        "seed": gt.seed,
        "rates": {s: [r.ineligible, r.other] for s, r in sorted(gt.rates.items())},
        "whitelist": sorted(gt.whitelist),
        "whitelist_hash": whitelist_hash,
        "given_rate": gt.given_rate,
        "warnings": list(gt.warnings),
    }
    with atomic_open(path, "w") as handle:
        handle.write(json.dumps(header) + "\n")
        for example in gt.iter_examples():
            handle.write(
                json.dumps(
                    {
                        "segment": example.segment,
                        "session_id": example.session_id,
                        "label": example.label,
                        "provenance": example.provenance,
                        "given_by_user": example.given_by_user,
                        "domain": example.domain,
                    }
                )
                + "\n"
            )


def read_ground_truth(path: str | Path) -> GroundTruthSet:
    with open(path) as handle:
        lines = [line for line in (l.strip() for l in handle) if line]
    if not lines:
        raise DataError(f"{path}: empty ground-truth file")
    header = json.loads(lines[0])
    examples: dict[str, list[GroundTruthExample]] = {}
    for line in lines[1:]:
        data = json.loads(line)
        examples.setdefault(data["segment"], []).append(
            GroundTruthExample(
                session_id=data["session_id"],
                label=int(data["label"]),
                segment=data["segment"],
                domain=data["domain"],
                provenance=data["provenance"],
                given_by_user=bool(data["given_by_user"]),
            )
        )
    return GroundTruthSet(
        examples={s: tuple(rows) for s, rows in examples.items()},
        seed=int(header["seed"]),
        whitelist=frozenset(header["whitelist"]),
        rates={s: SegmentRates(*r) for s, r in header["rates"].items()},
        given_rate=header.get("given_rate"),
        warnings=tuple(header.get("warnings", [])),
    )
