"""Evaluation arithmetic: precision/recall/F1, PR-AUC, micro and two-stage
macro aggregation, agreement rate, and Cohen's kappa.

Dissatisfaction is the positive class throughout.  Degenerate 0/0 ratios
default to 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )

    @classmethod
    def from_pairs(cls, predicted: Iterable[bool], labels: Iterable[int]) -> "ConfusionCounts":
        counts = cls()
        for pred, label in zip(predicted, labels):
            if pred and label == 1:
                counts.tp += 1
            elif pred and label == 0:
                counts.fp += 1
            elif not pred and label == 1:
                counts.fn += 1
            else:
                counts.tn += 1
        return counts


def prf(counts: ConfusionCounts) -> tuple[float, float, float]:
    """Precision, recall, F1 with 0/0 ratios defined as 0."""
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def pr_auc(scored: Sequence[tuple[float, int]]) -> float:
    """Area under the precision-recall curve by the average-precision rule.

    The curve is traced over all distinct score thresholds in descending
    order; equal scores form one threshold group.  AP = sum over groups of
    (recall step) * precision-at-group.
    """
    if not scored:
        raise DataError("pr_auc requires at least one scored example")
    scores = np.array([s for s, _ in scored], dtype=np.float64)
    labels = np.array([l for _, l in scored], dtype=np.int64)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise DataError("pr_auc is undefined without positive labels")
    order = np.argsort(-scores, kind="stable")
    scores = scores[order]
    labels = labels[order]
    tp_cum = np.cumsum(labels)
    # Last index of each tie group.
    boundary = np.nonzero(np.diff(scores))[0]
    group_ends = np.concatenate([boundary, [len(scores) - 1]])
    area = 0.0
    prev_recall = 0.0
    for end in group_ends:
        tp = tp_cum[end]
        predicted_pos = end + 1
        precision = tp / predicted_pos
        recall = tp / n_pos
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return float(area)


def agreement_and_kappa(pairs: Sequence[tuple[int, int]]) -> tuple[float, float | None]:
    """Observed agreement and Cohen's kappa for two binary raters.

    kappa = (p_o - p_e) / (1 - p_e) with marginal-product chance agreement;
    reported as None when p_e = 1 (kappa undefined).
    """
    if not pairs:
        raise DataError("agreement requires at least one label pair")
    n = len(pairs)
    agree = sum(1 for a, b in pairs if a == b)
    p_o = agree / n
    a_pos = sum(a for a, _ in pairs) / n
    b_pos = sum(b for _, b in pairs) / n
    p_e = a_pos * b_pos + (1 - a_pos) * (1 - b_pos)
    if abs(1.0 - p_e) < 1e-15:
        return p_o, None
    return p_o, (p_o - p_e) / (1.0 - p_e)


@dataclass
class MetricBlock:
    precision: float
    recall: float
    f1: float
    pr_auc: float | None

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "pr_auc": self.pr_auc,
        }


@dataclass
class MetricsReport:
    micro: MetricBlock
    macro: MetricBlock | None
    macro_std: MetricBlock | None
    domains_used: tuple[str, ...]
    coverage: float

    def to_dict(self) -> dict:
        return {
            "micro": self.micro.to_dict(),
            "macro": self.macro.to_dict() if self.macro else None,
            "macro_std": self.macro_std.to_dict() if self.macro_std else None,
            "domains_used": list(self.domains_used),
            "coverage": self.coverage,
        }


# One evaluated example: (domain, score, label, predicted_dissatisfied).
Row = tuple[str, float, int, bool]


def micro_metrics(rows: Sequence[Row]) -> MetricBlock:
    counts = ConfusionCounts.from_pairs((r[3] for r in rows), (r[2] for r in rows))
    precision, recall, f1 = prf(counts)
    has_pos = any(r[2] == 1 for r in rows)
    auc = pr_auc([(r[1], r[2]) for r in rows]) if has_pos else None
    return MetricBlock(precision, recall, f1, auc)


def _select_domains(rows: Sequence[Row], top_k: int, coverage_target: float) -> list[str]:
    counts: dict[str, int] = {}
    for domain, *_ in rows:
        counts[domain] = counts.get(domain, 0) + 1
    ranked = sorted(counts, key=lambda d: (-counts[d], d))
    total = len(rows)
    selected: list[str] = []
    covered = 0
    for domain in ranked:
        if len(selected) >= top_k or covered / total >= coverage_target:
            break
        selected.append(domain)
        covered += counts[domain]
    return selected


def macro_report(
    rows: Sequence[Row],
    top_k: int = 20,
    coverage_target: float = 0.98,
) -> MetricsReport:
    """Micro metrics over all rows plus two-stage macro over top domains.

    Domains are taken in descending example-count order until either top_k
    domains are selected or the coverage target is reached.  Macro values are
    unweighted means of per-domain micro metrics; spread is the population
    standard deviation across the selected domains.
    """
    if not rows:
        raise DataError("cannot build a metrics report from zero examples")
    micro = micro_metrics(rows)
    selected = _select_domains(rows, top_k, coverage_target)
    per_domain: dict[str, list[Row]] = {d: [] for d in selected}
    covered = 0
    for row in rows:
        if row[0] in per_domain:
            per_domain[row[0]].append(row)
            covered += 1
    blocks = [micro_metrics(per_domain[d]) for d in selected]

    def aggregate(values: list[float | None]) -> tuple[float | None, float | None]:
        present = [v for v in values if v is not None]
        if not present:
            return None, None
        mean = float(np.mean(present))
        std = float(np.std(present)) if len(present) >= 2 else None
        return mean, std

    if blocks:
        p_mean, p_std = aggregate([b.precision for b in blocks])
        r_mean, r_std = aggregate([b.recall for b in blocks])
        f_mean, f_std = aggregate([b.f1 for b in blocks])
        a_mean, a_std = aggregate([b.pr_auc for b in blocks])
        macro = MetricBlock(p_mean, r_mean, f_mean, a_mean)
        if len(blocks) >= 2:
            macro_std = MetricBlock(p_std, r_std, f_std, a_std)
        else:
            macro_std = None
    else:
        macro = macro_std = None
    return MetricsReport(
        micro=micro,
        macro=macro,
        macro_std=macro_std,
        domains_used=tuple(selected),
        coverage=covered / len(rows),
    )


APPROACH_HP = "HP"
APPROACH_EFB_HP = "EFB+HP"
APPROACH_EFB_FP_HP = "EFB+FP+HP"
ALL_APPROACHES = (APPROACH_HP, APPROACH_EFB_HP, APPROACH_EFB_FP_HP)


@dataclass(frozen=True)
class AssessmentRow:
    """Per-example assessment inputs shared by all evaluation approaches."""

    session_id: str
    domain: str
    segment: str
    label: int
    marked: bool
    eligible: bool
    p_fp: float | None
    p_hp: float


def waterfall_assessments(ground_truth, sessions_by_id, fp_model, hp_model, fusion_config):
    """Precompute model scores for every ground-truth example.

    Sessions shown to the models have elicitation turns stripped first, so
    neither predictor can read the answering turn that produced a feedback
    label.  FP scores are computed only for feedback-eligible examples
    (whitelisted segment, no barge-in/termination/unhandled incident).
    """
    from .dialog import feedback_ineligible, strip_elicitation
    from .errors import ArtifactError

    examples = list(ground_truth.iter_examples())
    stripped = []
    eligible_flags = []
    for example in examples:
        session = sessions_by_id.get(example.session_id)
        if session is None:
            raise ArtifactError(f"ground-truth session {example.session_id} missing from corpus")
        stripped.append(strip_elicitation(session))
        eligible_flags.append(not feedback_ineligible(session, ground_truth.whitelist))
    p_hp = hp_model.predict_batch(stripped)
    eligible_idx = [i for i, ok in enumerate(eligible_flags) if ok]
    p_fp = np.full(len(examples), np.nan)
    if eligible_idx:
        p_fp[eligible_idx] = fp_model.predict_batch([stripped[i] for i in eligible_idx])
    rows = []
    for i, example in enumerate(examples):
        eligible = eligible_flags[i]
        rows.append(
            AssessmentRow(
                session_id=example.session_id,
                domain=example.domain,
                segment=example.segment,
                label=example.label,
                marked=example.given_by_user,
                eligible=eligible,
                p_fp=float(p_fp[i]) if eligible else None,
                p_hp=float(p_hp[i]),
            )
        )
    return rows


def approach_rows(assessments: Sequence[AssessmentRow], approach: str, fusion_config) -> list[Row]:
    """Turn shared assessments into (domain, score, label, verdict) rows."""
    rows: list[Row] = []
    for a in assessments:
        if approach == APPROACH_HP:
            score = a.p_hp
        elif approach == APPROACH_EFB_HP:
            score = float(a.label) if a.marked else a.p_hp
        elif approach == APPROACH_EFB_FP_HP:
            if a.marked:
                score = float(a.label)
            elif (
                a.eligible
                and a.p_fp is not None
                and max(a.p_fp, 1.0 - a.p_fp) >= fusion_config.tau
            ):
                score = a.p_fp
            else:
                score = a.p_hp
        else:
            raise DataError(f"unknown approach {approach!r}")
        rows.append((a.domain, score, a.label, score >= fusion_config.decision_cutoff))
    return rows


def evaluate_approaches(
    ground_truth,
    sessions_by_id,
    fp_model,
    hp_model,
    fusion_config,
    approaches: Sequence[str] = ALL_APPROACHES,
    top_k: int = 20,
    coverage_target: float = 0.98,
) -> dict[str, MetricsReport]:
    """Evaluate HP-only, explicit-feedback + HP, and the full waterfall.

    The ground truth must already carry given-by-user marks (call
    mark_given_feedback first, a rate of 0 is fine).  Marked instances take
    the stored feedback label as the approach's prediction, which is correct
    by construction for feedback-provenance examples.
    """
    if ground_truth.given_rate is None:
        raise DataError(
            "ground truth has no given-by-user marks; run mark_given_feedback first"
        )
    assessments = waterfall_assessments(
        ground_truth, sessions_by_id, fp_model, hp_model, fusion_config
    )
    reports = {}
    for approach in approaches:
        rows = approach_rows(assessments, approach, fusion_config)
        reports[approach] = macro_report(rows, top_k=top_k, coverage_target=coverage_target)
    return reports


def format_reports_table(reports_by_rate: dict[float, dict[str, MetricsReport]], header: str = "") -> str:
    """Aligned plain-text table: one block per feedback rate, micro and macro
    sections per approach with the cross-domain standard deviation."""

    def fmt(value: float | None) -> str:
        return "   n/a" if value is None else f"{value:6.4f}"

    lines: list[str] = []
    if header:
        lines.append(header)
    for rate in sorted(reports_by_rate):
        lines.append("")
        lines.append(f"=== feedback collection rate {rate:g} ({rate * 100:g}%) ===")
        lines.append(f"{'approach':<12} {'precision':>9} {'recall':>9} {'f1':>9} {'pr_auc':>9}")
        lines.append("-- micro --")
        for approach, report in reports_by_rate[rate].items():
            m = report.micro
            lines.append(
                f"{approach:<12} {fmt(m.precision):>9} {fmt(m.recall):>9} "
                f"{fmt(m.f1):>9} {fmt(m.pr_auc):>9}"
            )
        lines.append("-- macro (mean over top domains, std in parentheses) --")
        for approach, report in reports_by_rate[rate].items():
            m, s = report.macro, report.macro_std
            if m is None:
                lines.append(f"{approach:<12} n/a")
                continue

            def cell(mean: float | None, std: float | None) -> str:
                if mean is None:
                    return "n/a"
                if std is None:
                    return f"{mean:.4f}"
                return f"{mean:.4f}({std:.4f})"

            lines.append(
                f"{approach:<12} {cell(m.precision, s.precision if s else None):>16} "
                f"{cell(m.recall, s.recall if s else None):>16} "
                f"{cell(m.f1, s.f1 if s else None):>16} "
                f"{cell(m.pr_auc, s.pr_auc if s else None):>16}"
            )
        first = next(iter(reports_by_rate[rate].values()))
        lines.append(
            f"domains: {len(first.domains_used)}, coverage: {first.coverage:.4f}"
        )
    return "\n".join(lines) + "\n"
