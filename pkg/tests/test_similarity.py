import math

import numpy as np
import pytest

from patsim.alignment import align
from patsim.cohort import expand_instances
from patsim.similarity import (
    DistanceMatrix,
    SimilarityError,
    feature_matrix,
    feature_rows,
    pairwise_distances,
    read_matrix,
    write_matrix,
)
from tests.conftest import make_patient


def instance_from_series(patient_id, values, pet=None):
    visits = []
    for k, value in enumerate(values):
        pet_value = None if pet is None else [pet[k]]
        visits.append((6 * k, "MCI", [float(value)], pet_value))
    return expand_instances(make_patient(patient_id, visits))[-1]


class TestPairwiseDistances:
    def test_containment_example(self):
        instances = [
            instance_from_series("A", [0, 1, 2]),
            instance_from_series("B", [5, 0, 1, 2, 7]),
            instance_from_series("C", [0, 1, 2]),
        ]
        matrix = pairwise_distances(instances, "MRI", "subsequence")
        np.testing.assert_array_equal(matrix.values, np.zeros((3, 3)))
        assert matrix.row_ids == ("A:3", "B:5", "C:3")

    def test_missing_pet_is_masked(self):
        instances = [
            instance_from_series("A", [0, 1, 2], pet=[1, 1, 1]),
            instance_from_series("B", [0, 1, 2]),
        ]
        matrix = pairwise_distances(instances, "PET", "global")
        assert matrix.mask.tolist() == [[True, False], [False, False]]
        assert matrix.values[0, 0] == 0

    def test_partial_pet_counts_as_missing(self):
        patient = make_patient("P", [(0, "MCI", [0.0], [1.0]), (6, "MCI", [0.0]), (12, "MCI", [0.0], [1.0])])
        instance = expand_instances(patient)[0]
        other = instance_from_series("Q", [0, 0, 0], pet=[1, 1, 1])
        matrix = pairwise_distances([instance, other], "PET", "subsequence")
        assert math.isnan(matrix.values[0, 1])

    def test_unknown_modality(self, toy_cohort):
        with pytest.raises(SimilarityError, match="Unknown modality"):
            pairwise_distances(toy_cohort.instances[:3], "EEG", "global")

    def test_unknown_variant(self, toy_cohort):
        with pytest.raises(SimilarityError, match="Unknown variant"):
            pairwise_distances(toy_cohort.instances[:3], "MRI", "euclid")

    @pytest.mark.parametrize("variant", ["global", "subsequence", "prefix", "suffix"])
    def test_entries_match_alignment(self, toy_cohort, variant):
        instances = toy_cohort.instances[:8]
        matrix = pairwise_distances(instances, "MRI", variant)
        for i, a in enumerate(instances):
            for j, b in enumerate(instances):
                expected = 0.0 if i == j else align(a.series("MRI"), b.series("MRI"), variant).distance
                assert matrix.values[i, j] == pytest.approx(expected, abs=1e-12)

    def test_symmetric_mask_and_zero_diagonal(self, toy_cohort):
        matrix = pairwise_distances(toy_cohort.instances, "PET", "subsequence")
        values = np.nan_to_num(matrix.values, nan=-1.0)
        np.testing.assert_array_equal(values, values.T)
        np.testing.assert_array_equal(matrix.mask, matrix.mask.T)
        observed = np.diag(matrix.mask)
        assert np.all(np.diag(matrix.values)[observed] == 0)

    def test_snapshot_uses_final_visit(self):
        a = instance_from_series("A", [9, 9, 1])
        b = instance_from_series("B", [0, 0, 4])
        matrix = pairwise_distances([a, b], "MRI", "snapshot")
        assert matrix.values[0, 1] == 9.0

    def test_parallel_matches_serial(self, toy_cohort):
        serial = pairwise_distances(toy_cohort.instances, "MRI", "subsequence", n_jobs=1)
        parallel = pairwise_distances(toy_cohort.instances, "MRI", "subsequence", n_jobs=4)
        np.testing.assert_array_equal(serial.values, parallel.values)


class TestFeatureRows:
    def matrices(self):
        ids = ("a", "b", "c", "d", "t")
        mri = DistanceMatrix("MRI", "global", ids, ids, np.arange(25, dtype=float).reshape(5, 5))
        pet_values = np.arange(25, dtype=float).reshape(5, 5) + 100
        pet_values[4, :] = np.nan
        pet = DistanceMatrix("PET", "global", ids, ids, pet_values)
        return mri, pet

    def test_concatenates_modality_blocks(self):
        mri, pet = self.matrices()
        row = feature_rows("t", [mri, pet], ["a", "b", "c", "d"])
        assert row.shape == (8,)
        np.testing.assert_array_equal(row[:4], [20, 21, 22, 23])
        assert np.isnan(row[4:]).all()

    def test_observed_rows_verbatim(self):
        mri, pet = self.matrices()
        row = feature_rows("a", [mri, pet], ["b", "c"])
        np.testing.assert_array_equal(row, [1, 2, 101, 102])

    def test_empty_training_set(self):
        mri, _ = self.matrices()
        with pytest.raises(SimilarityError, match="empty"):
            feature_rows("t", [mri], [])

    def test_feature_matrix_columns(self):
        mri, pet = self.matrices()
        features = feature_matrix(["t", "a"], [mri, pet], {"MRI": ["a", "b"], "PET": ["c"]})
        assert features.column_names == ["MRI:a", "MRI:b", "PET:c"]
        assert features.values.shape == (2, 3)
        assert features.mask.tolist() == [[True, True, False], [True, True, True]]


def test_matrix_file_round_trip(tmp_path, toy_cohort):
    matrix = pairwise_distances(toy_cohort.instances[:10], "PET", "prefix")
    path = tmp_path / "pet.tsv"
    write_matrix(matrix, path)
    loaded = read_matrix(path)
    assert (loaded.modality, loaded.variant) == ("PET", "prefix")
    assert loaded.row_ids == matrix.row_ids
    np.testing.assert_array_equal(np.nan_to_num(loaded.values, nan=-1), np.nan_to_num(matrix.values, nan=-1))
    assert "NA" in path.read_text()


def test_read_matrix_rejects_garbage(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("# modality=MRI variant=global\nid\ta\na\tnope\n")
    with pytest.raises(SimilarityError, match="non-numeric"):
        read_matrix(path)
