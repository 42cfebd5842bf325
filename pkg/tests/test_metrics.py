import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satfusion.errors import DataError
from satfusion.metrics import (
    APPROACH_EFB_FP_HP,
    APPROACH_EFB_HP,
    APPROACH_HP,
    ConfusionCounts,
    agreement_and_kappa,
    approach_rows,
    AssessmentRow,
    macro_report,
    micro_metrics,
    pr_auc,
    prf,
)


def brute_force_pr_auc(scored):
    """Exhaustive threshold sweep: evaluate P and R at every distinct score."""
    thresholds = sorted({s for s, _ in scored}, reverse=True)
    n_pos = sum(l for _, l in scored)
    area = 0.0
    prev_recall = 0.0
    for threshold in thresholds:
        tp = sum(1 for s, l in scored if s >= threshold and l == 1)
        predicted = sum(1 for s, _ in scored if s >= threshold)
        precision = tp / predicted
        recall = tp / n_pos
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return area


class TestPrf:
    def test_perfect(self):
        assert prf(ConfusionCounts(tp=5, fp=0, fn=0, tn=3)) == (1.0, 1.0, 1.0)

    def test_degenerate_zeroes(self):
        assert prf(ConfusionCounts(tp=0, fp=0, fn=0, tn=9)) == (0.0, 0.0, 0.0)

    def test_hand_arithmetic(self):
        precision, recall, f1 = prf(ConfusionCounts(tp=3, fp=1, fn=2, tn=0))
        assert precision == 0.75
        assert recall == 0.6
        assert f1 == pytest.approx(2 / 3)

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            ConfusionCounts(tp=-1, fp=0, fn=0, tn=0)

    def test_counts_addition(self):
        total = ConfusionCounts(1, 2, 3, 4) + ConfusionCounts(4, 3, 2, 1)
        assert (total.tp, total.fp, total.fn, total.tn) == (5, 5, 5, 5)


class TestPrAuc:
    def test_perfect_ranking(self):
        scored = [(0.9, 1), (0.8, 1), (0.3, 0), (0.1, 0)]
        assert pr_auc(scored) == 1.0

    def test_single_positive_ranked_last(self):
        scored = [(0.9, 0), (0.8, 0), (0.7, 0), (0.1, 1)]
        assert pr_auc(scored) == pytest.approx(0.25)

    def test_matches_brute_force_on_random_draws(self, rng):
        for _ in range(500):
            n = int(rng.integers(1, 13))
            scores = rng.choice([0.1, 0.25, 0.5, 0.7, 0.9], size=n)
            labels = rng.integers(0, 2, size=n)
            if labels.sum() == 0:
                labels[int(rng.integers(n))] = 1
            scored = list(zip(scores.tolist(), labels.tolist()))
            assert pr_auc(scored) == pytest.approx(brute_force_pr_auc(scored), abs=1e-9)

    def test_no_positives_rejected(self):
        with pytest.raises(DataError):
            pr_auc([(0.5, 0)])

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            pr_auc([])

    @given(
        st.lists(
            st.tuples(st.integers(0, 100), st.integers(0, 1)),
            min_size=2,
            max_size=30,
        )
    )
    @settings(max_examples=80, deadline=None)
    def test_invariant_under_strictly_monotone_transform(self, raw):
        # Scores on a coarse grid so the transforms stay strictly monotone in
        # float arithmetic (no ties created or destroyed).
        scored = [(s / 100.0, l) for s, l in raw]
        if not any(l == 1 for _, l in scored):
            scored = scored + [(0.5, 1)]
        for transform in (lambda s: 3.0 * s + 1.0, lambda s: math.exp(s)):
            transformed = [(transform(s), l) for s, l in scored]
            assert pr_auc(transformed) == pytest.approx(pr_auc(scored), abs=1e-9)


class TestKappa:
    def test_identical_vectors_give_one(self):
        pairs = [(0, 0), (1, 1), (0, 0), (1, 1)]
        agreement, kappa = agreement_and_kappa(pairs)
        assert agreement == 1.0
        assert kappa == pytest.approx(1.0)

    def test_independent_labels_near_zero(self, rng):
        a = rng.integers(0, 2, size=20000)
        b = rng.integers(0, 2, size=20000)
        _, kappa = agreement_and_kappa(list(zip(a.tolist(), b.tolist())))
        assert abs(kappa) < 0.05

    def test_hand_formula_2x2_table(self):
        # a=90 both-positive, b=5, c=5, d=0.
        pairs = [(1, 1)] * 90 + [(1, 0)] * 5 + [(0, 1)] * 5
        agreement, kappa = agreement_and_kappa(pairs)
        p_o = 0.9
        p_yes_a = 0.95
        p_yes_b = 0.95
        p_e = p_yes_a * p_yes_b + (1 - p_yes_a) * (1 - p_yes_b)
        expected = (p_o - p_e) / (1 - p_e)
        assert agreement == pytest.approx(p_o, abs=1e-12)
        assert kappa == pytest.approx(expected, abs=1e-12)

    def test_constant_identical_raters_undefined(self):
        agreement, kappa = agreement_and_kappa([(1, 1)] * 10)
        assert agreement == 1.0
        assert kappa is None

    def test_agreement_one_implies_kappa_one_with_both_classes(self, rng):
        labels = rng.integers(0, 2, size=50)
        if len(set(labels.tolist())) == 1:
            labels[0] = 1 - labels[0]
        pairs = [(int(l), int(l)) for l in labels]
        agreement, kappa = agreement_and_kappa(pairs)
        assert agreement == 1.0 and kappa == pytest.approx(1.0)

    def test_random_tables_match_formula(self, rng):
        for _ in range(100):
            a, b, c, d = (int(x) for x in rng.integers(0, 50, size=4))
            if a + b + c + d == 0:
                a = 1
            pairs = [(1, 1)] * a + [(1, 0)] * b + [(0, 1)] * c + [(0, 0)] * d
            n = len(pairs)
            p_o = (a + d) / n
            p_e = ((a + b) / n) * ((a + c) / n) + ((c + d) / n) * ((b + d) / n)
            agreement, kappa = agreement_and_kappa(pairs)
            assert agreement == pytest.approx(p_o, abs=1e-12)
            if abs(1 - p_e) < 1e-15:
                assert kappa is None
            else:
                assert kappa == pytest.approx((p_o - p_e) / (1 - p_e), abs=1e-12)


class TestMacroReport:
    def rows_for(self, domain, tp, fp, fn, tn, score_pos=0.9, score_neg=0.1):
        rows = []
        rows += [(domain, score_pos, 1, True)] * tp
        rows += [(domain, score_pos, 0, True)] * fp
        rows += [(domain, score_neg, 1, False)] * fn
        rows += [(domain, score_neg, 0, False)] * tn
        return rows

    def test_identical_domains_zero_std(self):
        rows = self.rows_for("a", 3, 1, 1, 5) + self.rows_for("b", 3, 1, 1, 5)
        report = macro_report(rows, top_k=20, coverage_target=0.98)
        assert report.macro.f1 == pytest.approx(report.micro.f1)
        assert report.macro_std.f1 == pytest.approx(0.0)

    def test_two_point_arithmetic(self):
        # Domain F1 values 0.4 and 0.8 -> macro 0.6, population std 0.2.
        rows = self.rows_for("a", 2, 4, 2, 2)  # precision 1/3, recall 1/2, f1 0.4
        rows += self.rows_for("b", 4, 1, 1, 4)  # precision 0.8, recall 0.8, f1 0.8
        report = macro_report(rows, top_k=20, coverage_target=0.999)
        assert report.macro.f1 == pytest.approx(0.6)
        assert report.macro_std.f1 == pytest.approx(0.2)

    def test_macro_equals_independent_recomputation(self, rng):
        domains = [f"d{i}" for i in range(20)]
        rows = []
        for d in domains:
            rows += self.rows_for(
                d,
                int(rng.integers(1, 10)),
                int(rng.integers(0, 10)),
                int(rng.integers(0, 10)),
                int(rng.integers(1, 10)),
            )
        report = macro_report(rows, top_k=20, coverage_target=1.0)
        f1s = []
        for d in domains:
            sub = [r for r in rows if r[0] == d]
            counts = ConfusionCounts.from_pairs((r[3] for r in sub), (r[2] for r in sub))
            f1s.append(prf(counts)[2])
        assert report.macro.f1 == pytest.approx(float(np.mean(f1s)))
        assert report.macro_std.f1 == pytest.approx(float(np.std(f1s)))

    def test_micro_from_summed_counts_equals_concatenated(self, rng):
        domains = ["a", "b", "c"]
        rows = []
        per_domain_counts = []
        for d in domains:
            sub = self.rows_for(
                d,
                int(rng.integers(1, 8)),
                int(rng.integers(0, 8)),
                int(rng.integers(0, 8)),
                int(rng.integers(1, 8)),
            )
            rows += sub
            per_domain_counts.append(
                ConfusionCounts.from_pairs((r[3] for r in sub), (r[2] for r in sub))
            )
        summed = per_domain_counts[0] + per_domain_counts[1] + per_domain_counts[2]
        from_concat = micro_metrics(rows)
        assert prf(summed)[0] == pytest.approx(from_concat.precision)
        assert prf(summed)[1] == pytest.approx(from_concat.recall)
        assert prf(summed)[2] == pytest.approx(from_concat.f1)

    def test_single_domain_reports_no_std(self):
        report = macro_report(self.rows_for("only", 2, 1, 1, 2))
        assert report.macro_std is None

    def test_top_k_selection_by_count(self):
        rows = self.rows_for("big", 10, 5, 5, 30) + self.rows_for("small", 1, 1, 1, 1)
        report = macro_report(rows, top_k=1, coverage_target=1.0)
        assert report.domains_used == ("big",)
        assert report.coverage == pytest.approx(50 / 54)

    def test_coverage_target_stops_selection(self):
        rows = self.rows_for("big", 30, 5, 5, 59) + self.rows_for("small", 1, 0, 0, 0)
        report = macro_report(rows, top_k=20, coverage_target=0.9)
        assert report.domains_used == ("big",)


class TestApproachRows:
    def assessments(self):
        return [
            AssessmentRow("s1", "weather", "weather.check", 1, False, True, 0.9, 0.4),
            AssessmentRow("s2", "weather", "weather.check", 0, True, True, 0.8, 0.7),
            AssessmentRow("s3", "music", "music.play", 1, False, False, None, 0.6),
        ]

    def test_hp_rows_use_hp_scores(self):
        from satfusion.fusion import FusionConfig

        rows = approach_rows(self.assessments(), APPROACH_HP, FusionConfig(tau=0.75))
        assert [r[1] for r in rows] == [0.4, 0.7, 0.6]

    def test_efb_hp_overrides_marked(self):
        from satfusion.fusion import FusionConfig

        rows = approach_rows(self.assessments(), APPROACH_EFB_HP, FusionConfig(tau=0.75))
        assert rows[1][1] == 0.0 and rows[1][3] is False
        assert rows[0][1] == 0.4

    def test_full_waterfall_uses_fp_when_confident(self):
        from satfusion.fusion import FusionConfig

        rows = approach_rows(self.assessments(), APPROACH_EFB_FP_HP, FusionConfig(tau=0.75))
        assert rows[0][1] == 0.9  # eligible, confident FP
        assert rows[1][1] == 0.0  # marked
        assert rows[2][1] == 0.6  # ineligible -> HP
