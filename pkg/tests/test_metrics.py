import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latkd.metrics import (
    PrCurve,
    RunReport,
    auprc,
    auroc,
    average_precision,
    pr_curve,
    recall_at_k,
    relative_diff,
)


def oracle_pr(scores, labels):
    """O(n^2) threshold enumeration, written independently of the library."""
    thresholds = sorted(set(float(s) for s in scores), reverse=True)
    n_pos = sum(int(y) for y in labels)
    points = []
    for thr in thresholds:
        tp = sum(1 for s, y in zip(scores, labels) if s >= thr and y == 1)
        pp = sum(1 for s in scores if s >= thr)
        points.append((tp / n_pos, tp / pp))
    ap = 0.0
    prev_r = 0.0
    for r, p in points:
        ap += (r - prev_r) * p
        prev_r = r
    return points, ap


class TestPrCurve:
    def test_perfect_separation_is_one(self):
        scores = [0.9, 0.8, 0.2, 0.1]
        labels = [1, 1, 0, 0]
        assert average_precision(scores, labels) == 1.0

    def test_four_point_example_matches_oracle(self):
        scores = [0.9, 0.8, 0.7, 0.6]
        labels = [1, 0, 1, 0]
        _, expected = oracle_pr(scores, labels)
        got = average_precision(scores, labels)
        assert got == pytest.approx(expected, abs=1e-15)
        # frozen from the oracle: 0.5*1 + 0.5*(2/3)
        assert got == pytest.approx(5.0 / 6.0, abs=1e-12)

    def test_all_ties_single_point_at_prevalence(self):
        scores = np.full(10, 0.3)
        labels = np.array([1, 0] * 5)
        curve = pr_curve(scores, labels)
        assert len(curve.points) == 1
        assert curve.points[0] == (1.0, 0.5)
        assert auprc(curve) == 0.5

    def test_recall_monotone_and_ends_at_one(self, rng):
        scores = rng.random(300)
        labels = (rng.random(300) < 0.2).astype(int)
        labels[0] = 1
        curve = pr_curve(scores, labels)
        assert np.all(np.diff(curve.recall) >= 0)
        assert curve.recall[-1] == 1.0
        assert np.all((curve.precision >= 0) & (curve.precision <= 1))

    def test_no_positives_raises(self):
        with pytest.raises(ValueError, match="no positive"):
            pr_curve([0.1, 0.2], [0, 0])

    def test_nonfinite_scores_raise(self):
        with pytest.raises(ValueError, match="finite"):
            pr_curve([np.inf, 0.2], [1, 0])

    def test_matches_oracle_on_random_fixtures(self):
        r = np.random.default_rng(7)
        for trial in range(50):
            n = int(r.integers(2, 201))
            # coarse grid forces plenty of ties
            scores = r.integers(0, 10, size=n) / 10.0
            labels = (r.random(n) < 0.3).astype(int)
            if labels.sum() == 0:
                labels[int(r.integers(0, n))] = 1
            points, ap = oracle_pr(scores, labels)
            curve = pr_curve(scores, labels)
            assert len(points) == len(curve.points)
            for (r_o, p_o), (r_i, p_i) in zip(points, curve.points):
                assert abs(r_o - r_i) < 1e-12
                assert abs(p_o - p_i) < 1e-12
            assert abs(ap - auprc(curve)) < 1e-12

    def test_matches_sklearn(self):
        sklearn = pytest.importorskip("sklearn.metrics")
        r = np.random.default_rng(3)
        for _ in range(10):
            scores = r.integers(0, 50, size=120) / 50.0
            labels = (r.random(120) < 0.25).astype(int)
            labels[0] = 1
            assert average_precision(scores, labels) == pytest.approx(
                sklearn.average_precision_score(labels, scores), abs=1e-12
            )

    def test_random_scorer_converges_to_prevalence(self):
        r = np.random.default_rng(99)
        n = 100_000
        prevalence = 0.1
        labels = (r.random(n) < prevalence).astype(int)
        scores = r.random(n)
        ap = average_precision(scores, labels)
        assert abs(ap - labels.mean()) <= 0.01

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_invariant_under_monotone_transform(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(5, 80))
        scores = r.normal(size=n)
        labels = (r.random(n) < 0.4).astype(int)
        if labels.sum() == 0:
            labels[0] = 1
        base = average_precision(scores, labels)
        assert average_precision(3.0 * scores + 7.0, labels) == pytest.approx(base, abs=1e-12)
        assert average_precision(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)

    def test_bounded_and_floor_at_prevalence_for_all_ties(self, rng):
        labels = (rng.random(500) < 0.15).astype(int)
        labels[0] = 1
        ap = average_precision(np.zeros(500), labels)
        assert ap == pytest.approx(labels.mean(), abs=1e-12)
        scores = rng.random(500)
        assert 0.0 <= average_precision(scores, labels) <= 1.0


class TestAuroc:
    def test_perfect_and_inverted(self):
        labels = [1, 1, 0, 0]
        assert auroc([0.9, 0.8, 0.2, 0.1], labels) == 1.0
        assert auroc([0.1, 0.2, 0.8, 0.9], labels) == 0.0

    def test_random_scores_near_half(self):
        r = np.random.default_rng(1)
        labels = (r.random(50_000) < 0.2).astype(int)
        assert abs(auroc(r.random(50_000), labels) - 0.5) < 0.01

    def test_matches_sklearn_with_ties(self):
        sklearn = pytest.importorskip("sklearn.metrics")
        r = np.random.default_rng(8)
        scores = r.integers(0, 6, size=200) / 6.0
        labels = (r.random(200) < 0.3).astype(int)
        labels[0] = 1
        labels[1] = 0
        assert auroc(scores, labels) == pytest.approx(
            sklearn.roc_auc_score(labels, scores), abs=1e-12
        )

    def test_needs_both_classes(self):
        with pytest.raises(ValueError, match="both classes"):
            auroc([0.5, 0.6], [1, 1])


class TestRecallAtK:
    def test_defaults_to_positive_count(self):
        scores = np.array([0.9, 0.8, 0.1, 0.7])
        labels = np.array([1, 0, 1, 0])
        # top-2 = rows 0, 1 -> catches 1 of 2 positives
        assert recall_at_k(scores, labels) == 0.5

    def test_subset_restriction(self):
        scores = np.array([0.9, 0.8, 0.7, 0.1])
        labels = np.array([1, 1, 0, 1])
        subset = np.array([False, True, False, True])
        # k=3 -> top rows {0,1,2}; subset positives are rows 1 and 3
        assert recall_at_k(scores, labels, subset=subset) == 0.5

    def test_empty_subset_raises(self):
        with pytest.raises(ValueError, match="subset"):
            recall_at_k([0.5, 0.4], [1, 0], subset=[False, False])


class TestRunReport:
    def test_mean_reproduces_arithmetic_mean(self):
        runs = [0.51, 0.52, 0.507, 0.499, 0.53, 0.51, 0.52, 0.505, 0.511, 0.508]
        report = RunReport(runs)
        assert abs(report.mean - sum(runs) / len(runs)) < 1e-12
        assert report.std > 0

    def test_single_run_has_zero_std(self):
        assert RunReport([0.5]).std == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            RunReport([])


class TestRelativeDiff:
    def test_positive_improvement(self):
        assert relative_diff(RunReport([0.518]), RunReport([0.5])) == pytest.approx(3.6)

    def test_identical_reports_are_zero(self):
        r = RunReport([0.42, 0.44])
        assert relative_diff(r, r) == 0.0

    def test_sign_convention_for_regressions(self):
        assert relative_diff(RunReport([0.4965]), RunReport([0.5])) == pytest.approx(-0.70)

    def test_zero_baseline_rejected(self):
        with pytest.raises(ValueError, match="zero baseline"):
            relative_diff(RunReport([0.5]), RunReport([0.0]))
