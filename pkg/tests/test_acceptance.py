"""
End-to-end runs on generated cohorts; minutes each, deselect with -m "not slow"
"""

from dataclasses import replace

import pytest

from patsim.config import RunConfig
from patsim.datagen import GeneratorConfig, planted_signal_cohort
from patsim.pipeline import run_evaluation

pytestmark = pytest.mark.slow

METHODS = ("snapshot", "global", "subsequence")


def acceptance_config(**changes):
    return RunConfig(methods=METHODS, grid_rank=(5,), grid_lambda=(0.1,), jobs=-1, **changes)


def test_subsequence_matching_beats_baselines_on_planted_decline():
    cohort = planted_signal_cohort(GeneratorConfig(n_patients=300, seed=0))
    report = run_evaluation(cohort, acceptance_config())
    scores = {method: result.auroc for method, result in report.results.items()}

    assert scores["subsequence"] - scores["snapshot"] >= 0.02, scores
    assert scores["subsequence"] - scores["global"] >= 0.02, scores
    test = next(t for t in report.tests if {t.method_a, t.method_b} == {"snapshot", "subsequence"})
    assert test.p < 0.05


def test_no_signal_no_separation():
    clean_runs = 0
    for seed in range(20):
        config = GeneratorConfig(n_patients=300, seed=seed, slope_separation=0.0)
        report = run_evaluation(planted_signal_cohort(config), acceptance_config(seed=seed))
        near_chance = all(abs(result.auroc - 0.5) <= 0.05 for result in report.results.values())
        significant = any(test.p < 0.05 for test in report.tests)
        clean_runs += near_chance and not significant
    assert clean_runs >= 18


def test_rerun_gives_identical_predictions():
    cohort = planted_signal_cohort(replace(GeneratorConfig(), n_patients=80, seed=2))
    config = acceptance_config()
    first = run_evaluation(cohort, config)
    second = run_evaluation(cohort, config.with_overrides(jobs=1))
    for method in METHODS:
        assert first.results[method].probabilities.tolist() == second.results[method].probabilities.tolist()
