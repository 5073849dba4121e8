import numpy as np
import pytest

from patsim.cohort import labels_monotone, summarize_cohort
from patsim.datagen import MONTH_GRID, GeneratorConfig, GeneratorError, generate, planted_signal_cohort


class TestGenerate:
    def test_same_seed_same_cohort(self):
        config = GeneratorConfig(n_patients=40, seed=7)
        assert generate(config).patients == generate(config).patients

    def test_seed_changes_cohort(self):
        assert generate(GeneratorConfig(n_patients=40, seed=1)).patients != \
            generate(GeneratorConfig(n_patients=40, seed=2)).patients

    def test_patient_ids_and_visits(self):
        cohort = generate(GeneratorConfig(n_patients=60, seed=3))
        assert [p.patient_id for p in cohort.patients][:3] == ["P0000", "P0001", "P0002"]
        for patient in cohort.patients:
            months = [v.month for v in patient.visits]
            assert months[0] == 0
            assert all(m in MONTH_GRID for m in months[1:])
            assert 2 <= len(months) <= 9
            assert labels_monotone(cohort.instances_of(patient.patient_id))

    @pytest.mark.parametrize("build", [generate, planted_signal_cohort])
    def test_instances_and_labels_over_large_cohort(self, build):
        cohort = build(GeneratorConfig(n_patients=1000, seed=5))
        assert len(cohort.instances) == sum(max(len(p.visits) - 2, 0) for p in cohort.patients)
        assert all(labels_monotone(cohort.instances_of(p.patient_id)) for p in cohort.patients)

    def test_visit_statistics(self):
        summary = summarize_cohort(generate(GeneratorConfig(n_patients=2000, seed=0)))
        assert summary["median_visits"] == 3
        assert summary["share_4plus_visits"] == pytest.approx(0.32, abs=0.04)
        assert summary["pet_availability"] == pytest.approx(0.35, abs=0.05)
        assert 0.0 < summary["prevalence"] < 1.0

    def test_per_visit_pet_varies_within_patients(self):
        cohort = generate(GeneratorConfig(n_patients=200, seed=4, pet_pattern="per_visit", pet_probability=0.5))
        mixed = [p for p in cohort.patients if len({v.has("PET") for v in p.visits}) == 2]
        assert mixed

    def test_per_patient_pet_is_all_or_nothing(self):
        cohort = generate(GeneratorConfig(n_patients=200, seed=4))
        for patient in cohort.patients:
            assert len({v.has("PET") for v in patient.visits}) == 1

    def test_dimensions(self):
        cohort = generate(GeneratorConfig(n_patients=10, mri_dim=4, pet_dim=1, pet_probability=1.0))
        assert cohort.modality_dims() == {"MRI": 4, "PET": 1}

    def test_no_progressors_no_positive_labels(self):
        cohort = generate(GeneratorConfig(n_patients=100, progressor_fraction=0.0, enrollment_stage_max=0.5))
        assert all(i.label != 1 for i in cohort.instances)


def test_planted_signal_is_flat_before_the_knee():
    config = GeneratorConfig(n_patients=30, noise=0.0, offset_sd=0.0, progressor_fraction=0.0,
                             stable_rate_max=0.0, enrollment_stage_max=0.3)
    cohort = planted_signal_cohort(config)
    for patient in cohort.patients:
        for visit in patient.visits:
            np.testing.assert_array_equal(visit.vector("MRI"), np.zeros(3))


def test_planted_signal_declines_after_the_knee():
    config = GeneratorConfig(n_patients=200, noise=0.0, offset_sd=0.0, progressor_fraction=1.0, seed=5)
    cohort = planted_signal_cohort(config)
    declining = [p for p in cohort.patients if p.visits[-1].vector("MRI")[0] < 0]
    assert declining
    for patient in declining:
        first_dim = [visit.vector("MRI")[0] for visit in patient.visits]
        assert all(b <= a for a, b in zip(first_dim, first_dim[1:]))


@pytest.mark.parametrize("changes, message", [
    (dict(visit_probs=(0.5, 0.4)), "sum to 1"),
    (dict(pet_pattern="sometimes"), "pet_pattern"),
    (dict(feature_model="quadratic"), "feature_model"),
    (dict(pet_probability=1.5), "pet_probability"),
    (dict(progression_years=(5.0, 2.0)), "progression_years"),
    (dict(month_grid=(6, 12)), "too few"),
])
def test_invalid_config(changes, message):
    with pytest.raises(GeneratorError, match=message):
        GeneratorConfig(**changes)
