import numpy as np
import pytest
from scipy import stats
from sklearn.metrics import roc_auc_score

from patsim.cohort import Cohort
from patsim.evaluation import (
    EvaluationError,
    FoldTrace,
    Hyperparameters,
    LeakageError,
    audit_fold,
    auroc,
    contingency,
    delong_ci,
    delong_ztest,
    length_stratified,
    make_folds,
    nested_select,
    top_differences,
)
from tests.conftest import toy_patients


def structural_components(scores, labels):
    """Pairwise-kernel DeLong components, written out over every (positive, negative) pair"""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos, neg = scores[labels == 1], scores[labels == 0]
    kernel = (pos[:, None] > neg[None, :]).astype(float) + 0.5 * (pos[:, None] == neg[None, :])
    return kernel.mean(), kernel.mean(axis=1), kernel.mean(axis=0)


def reference_delong(scores_a, scores_b, labels):
    auc_a, v10_a, v01_a = structural_components(scores_a, labels)
    auc_b, v10_b, v01_b = structural_components(scores_b, labels)
    m, n = len(v10_a), len(v01_a)
    s10 = np.cov(np.vstack([v10_a, v10_b]))
    s01 = np.cov(np.vstack([v01_a, v01_b]))
    cov = s10 / m + s01 / n
    return auc_a, auc_b, cov


def binormal(n_pos, n_neg, shift, rng):
    scores = np.concatenate([rng.normal(shift, 1.0, n_pos), rng.normal(0.0, 1.0, n_neg)])
    labels = np.concatenate([np.ones(n_pos, dtype=int), np.zeros(n_neg, dtype=int)])
    return scores, labels


class TestMakeFolds:
    def test_one_fold_per_labeled_patient(self, toy_cohort):
        plan = make_folds(toy_cohort)
        assert len(plan) == 12
        assert [f.test_patient for f in plan] == sorted(p.patient_id for p in toy_cohort.patients)

    def test_folds_partition_labeled_instances(self, toy_cohort):
        labeled = {i.instance_id for i in toy_cohort.labeled_instances()}
        seen = []
        for fold in make_folds(toy_cohort):
            assert set(fold.test_ids).isdisjoint(fold.train_ids)
            assert set(fold.test_ids) | set(fold.train_ids) == labeled
            assert all(i.startswith(fold.test_patient + ":") for i in fold.test_ids)
            assert not any(i.startswith(fold.test_patient + ":") for i in fold.train_ids)
            seen.extend(fold.test_ids)
        assert sorted(seen) == sorted(labeled)

    def test_censored_instances_are_excluded(self, toy_cohort):
        for fold in make_folds(toy_cohort):
            assert not any(i.endswith(":6") for i in fold.test_ids + fold.train_ids)

    def test_needs_two_patients(self):
        cohort = Cohort.from_patients(toy_patients(n_patients=1))
        with pytest.raises(EvaluationError, match="at least 2 patients"):
            make_folds(cohort)


class TestAuroc:
    @pytest.mark.parametrize("scores, labels, expected", [
        ([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0], 1.0),
        ([0.9, 0.4, 0.6, 0.1], [1, 1, 0, 0], 0.75),
        ([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0], 0.5),
        ([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0], 0.0),
    ])
    def test_examples(self, scores, labels, expected):
        assert auroc(scores, labels) == expected

    def test_matches_trapezoid_rule(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            labels = rng.integers(0, 2, size=40)
            labels[:2] = [0, 1]
            scores = np.round(rng.normal(size=40), 1)
            assert auroc(scores, labels) == pytest.approx(roc_auc_score(labels, scores), abs=1e-12)

    def test_single_class(self):
        with pytest.raises(EvaluationError, match="both classes"):
            auroc([0.1, 0.2], [1, 1])


class TestDeLong:
    def test_matches_pairwise_reference(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n_pos, n_neg = rng.integers(5, 60, size=2)
            a, labels = binormal(n_pos, n_neg, rng.uniform(0.0, 2.0), rng)
            b = np.round(a + rng.normal(0.0, 1.0, size=a.shape), 1)
            order = rng.permutation(len(labels))
            a, b, labels = a[order], b[order], labels[order]

            z, p = delong_ztest(a, b, labels)
            auc_a, auc_b, cov = reference_delong(a, b, labels)
            expected = (auc_a - auc_b) / np.sqrt(cov[0, 0] + cov[1, 1] - 2 * cov[0, 1])
            assert z == pytest.approx(expected, abs=1e-10)
            assert p == pytest.approx(2 * stats.norm.sf(abs(expected)), abs=1e-10)

            ci = delong_ci(b, labels)
            half_width = stats.norm.ppf(0.975) * np.sqrt(cov[1, 1])
            assert ci.variance == pytest.approx(cov[1, 1], abs=1e-10)
            assert ci.lower == pytest.approx(max(0.0, auc_b - half_width), abs=1e-10)
            assert ci.upper == pytest.approx(min(1.0, auc_b + half_width), abs=1e-10)

    def test_interval_contains_point_estimate(self):
        scores, labels = binormal(20, 20, 0.8, np.random.default_rng(2))
        ci = delong_ci(scores, labels)
        assert 0.0 <= ci.lower <= auroc(scores, labels) <= ci.upper <= 1.0

    def test_interval_coverage(self):
        rng = np.random.default_rng(3)
        shift = 1.0
        truth = stats.norm.cdf(shift / np.sqrt(2.0))
        hits = 0
        for _ in range(500):
            scores, labels = binormal(80, 80, shift, rng)
            ci = delong_ci(scores, labels)
            hits += ci.lower <= truth <= ci.upper
        assert 0.90 <= hits / 500 <= 0.99

    def test_interval_width_at_cohort_scale(self):
        # 539 progressing and 725 stable instances, scores separated to an AUROC near 0.84
        scores, labels = binormal(539, 725, np.sqrt(2.0) * stats.norm.ppf(0.84), np.random.default_rng(6))
        ci = delong_ci(scores, labels)
        assert auroc(scores, labels) == pytest.approx(0.84, abs=0.03)
        assert 0.015 <= (ci.upper - ci.lower) / 2 <= 0.04

    def test_perfect_separation_has_zero_width(self):
        ci = delong_ci([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert ci.lower == ci.upper == 1.0

    def test_ztest_is_antisymmetric(self):
        rng = np.random.default_rng(4)
        a, labels = binormal(25, 25, 1.0, rng)
        b = rng.normal(size=a.shape)
        z_ab, p_ab = delong_ztest(a, b, labels)
        z_ba, p_ba = delong_ztest(b, a, labels)
        assert z_ab == pytest.approx(-z_ba)
        assert p_ab == pytest.approx(p_ba)
        assert 0.0 <= p_ab <= 1.0

    def test_identical_scores(self):
        scores, labels = binormal(10, 10, 0.5, np.random.default_rng(5))
        assert delong_ztest(scores, scores, labels) == (0.0, 1.0)

    def test_needs_two_per_class(self):
        with pytest.raises(EvaluationError, match="at least 2 positives"):
            delong_ci([0.9, 0.1, 0.2], [1, 0, 0])


class TestContingency:
    def test_counts_and_mcnemar(self):
        table = contingency([0.9, 0.2, 0.6, 0.4], [0.1, 0.2, 0.7, 0.6], [1, 0, 1, 0],
                            patient_ids=["A", "B", "C", "D"])
        assert (table.both_correct, table.a_only, table.b_only, table.both_wrong) == (2, 2, 0, 0)
        assert table.total == 4
        assert table.positives_a_only == 1
        assert table.positive_patients_a_only == 1
        assert table.mcnemar_exact_p == pytest.approx(0.5)
        assert table.mcnemar_chi2_p == pytest.approx(stats.chi2.sf(0.5, df=1))

    def test_cutoff_is_inclusive(self):
        table = contingency([0.5], [0.49], [1])
        assert table.a_only == 1 and table.b_only == 0

    def test_no_discordant_pairs(self):
        table = contingency([0.9, 0.1], [0.8, 0.2], [1, 0])
        assert table.mcnemar_exact_p == 1.0 and table.mcnemar_chi2_p == 1.0

    def test_patients_counted_once(self):
        table = contingency([0.9, 0.8, 0.7], [0.1, 0.1, 0.1], [1, 1, 1], patient_ids=["A", "A", "B"])
        assert table.positives_a_only == 3
        assert table.positive_patients_a_only == 2

    def test_length_mismatch(self):
        with pytest.raises(EvaluationError, match="equal length"):
            contingency([0.1], [0.2, 0.3], [1])


class TestTopDifferences:
    def test_sorted_by_absolute_difference(self, toy_cohort):
        instances = toy_cohort.instances[:5]
        probs_a = [0.5, 0.875, 0.125, 0.625, 0.5]
        probs_b = [0.5, 0.25, 0.75, 0.5, 0.5]
        top = top_differences(probs_a, probs_b, instances, k=3)
        assert [t.instance_id for t in top] == [instances[1].instance_id, instances[2].instance_id,
                                               instances[3].instance_id]
        assert top[0].difference == 0.625
        assert top[1].difference == -0.625

    def test_ties_break_by_instance_id(self, toy_cohort):
        instances = toy_cohort.instances[:4]
        top = top_differences([0.5] * 4, [0.5] * 4, list(reversed(instances)), k=4)
        assert [t.instance_id for t in top] == sorted(i.instance_id for i in instances)

    def test_carries_trajectories(self, toy_cohort):
        instance = toy_cohort.instance("T02:4")
        top = top_differences([0.9], [0.1], [instance])[0]
        assert top.months == (0, 12, 24, 36)
        assert len(top.trajectories["MRI"]) == 4
        assert "PET" not in top.trajectories


def test_length_stratified():
    strata = length_stratified([0.9, 0.8, 0.2, 0.5], [0.5, 0.9, 0.4, 0.5], [1, 1, 0, 0], [5, 3, 6, 3])
    assert strata.n_total == 4
    assert strata.n_a_better == 2
    assert strata.long_fraction_a_better == 1.0
    assert strata.long_fraction_overall == 0.5


class TestNestedSelect:
    def data(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(24, 1))
        y = np.array([0, 1] * 12)
        X[:, 0] += y
        groups = [f"P{k // 2}" for k in range(24)]
        return X, y, groups

    def test_single_grid_point_skips_inner_loop(self):
        X, y, groups = self.data()

        def fail(*args):
            raise AssertionError("inner loop should not run")

        assert nested_select(X, y, groups, [3.0], 5, fail).C == 3.0

    def test_ties_go_to_smallest_c(self):
        X, y, groups = self.data()
        selection = nested_select(X, y, groups, [10.0, 0.1, 1.0], 3, lambda Xt, yt, Xv, c: Xv[:, 0])
        assert selection.C == 0.1
        assert len(selection.inner_folds) == 3

    def test_picks_best_scoring_c(self):
        X, y, groups = self.data()

        def score(Xt, yt, Xv, c):
            return Xv[:, 0] if c == 10.0 else -Xv[:, 0]

        assert nested_select(X, y, groups, [0.1, 1.0, 10.0], 4, score).C == 10.0

    def test_joint_grid_prepares_each_setting_once_per_fold(self):
        X, y, groups = self.data()
        calls = []

        def prepare(Xt, Xv, params):
            calls.append((len(Xt), len(Xv), params.rank, params.lam))
            sign = 1.0 if params.rank == 5 else -1.0
            return sign * Xt, sign * Xv

        grid = [Hyperparameters(C, rank, 0.1) for C in (0.1, 1.0) for rank in (2, 5)]
        selection = nested_select(X, y, groups, grid, 3, lambda Xt, yt, Xv, c: Xv[:, 0], prepare=prepare)
        assert selection.params == Hyperparameters(0.1, 5, 0.1)
        assert selection.C == 0.1
        assert len(calls) == 3 * 2
        assert all(n_train + n_val == 24 for n_train, n_val, _, _ in calls)
        assert set(selection.mean_auroc) == set(grid)

    def test_ties_prefer_small_rank_then_small_lambda(self):
        X, y, groups = self.data()
        grid = [Hyperparameters(1.0, rank, lam) for rank in (5, 2) for lam in (1.0, 0.01)]
        selection = nested_select(X, y, groups, grid, 3, lambda Xt, yt, Xv, c: Xv[:, 0],
                                  prepare=lambda Xt, Xv, params: (Xt, Xv))
        assert selection.params == Hyperparameters(1.0, 2, 0.01)

    def test_inner_folds_keep_patients_whole(self):
        X, y, groups = self.data()
        selection = nested_select(X, y, groups, [0.1, 1.0], 4, lambda Xt, yt, Xv, c: Xv[:, 0])
        groups = np.asarray(groups)
        for train_idx, val_idx in selection.inner_folds:
            assert set(groups[list(train_idx)]).isdisjoint(groups[list(val_idx)])

    def test_all_single_class_inner_folds(self):
        X = np.zeros((4, 1))
        y = np.array([0, 0, 1, 1])
        groups = ["A", "A", "B", "B"]
        with pytest.raises(EvaluationError, match="single class"):
            nested_select(X, y, groups, [0.1, 1.0], 2, lambda *args: np.zeros(2))


class TestAuditFold:
    def clean(self, **changes):
        fields = dict(
            test_patient="P1",
            test_ids=("P1:3", "P1:4"),
            train_ids=("P2:3", "P10:3"),
            feature_columns=("P2:3", "P10:3"),
            imputation_rows=("P2:3", "P10:3"),
            inner_fold_ids=("P2:3",),
        )
        fields.update(changes)
        return FoldTrace(**fields)

    def test_clean_fold_passes(self):
        audit_fold(self.clean())

    @pytest.mark.parametrize("field", ["train_ids", "feature_columns", "imputation_rows", "inner_fold_ids"])
    def test_held_out_instance_detected(self, field):
        with pytest.raises(LeakageError, match="P1:"):
            audit_fold(self.clean(**{field: ("P2:3", "P1:4")}))

    def test_other_instance_of_held_out_patient_detected(self):
        with pytest.raises(LeakageError):
            audit_fold(self.clean(feature_columns=("P1:6",)))
