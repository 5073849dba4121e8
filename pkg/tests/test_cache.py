import numpy as np

from patsim.cache import DistanceCache
from patsim.similarity import DistanceMatrix


def small_matrix(variant="subsequence", modality="MRI"):
    ids = ("A:3", "B:3")
    return DistanceMatrix(modality, variant, ids, ids, np.array([[0.0, 1.5], [1.5, 0.0]]))


class TestDistanceCache:
    def test_miss_returns_none(self, tmp_path):
        assert DistanceCache(str(tmp_path)).get("abc", "global", "MRI") is None

    def test_put_then_get(self, tmp_path):
        cache = DistanceCache(str(tmp_path))
        cache.put("abc", small_matrix())
        loaded = cache.get("abc", "subsequence", "MRI")
        np.testing.assert_array_equal(loaded.values, small_matrix().values)

    def test_index_survives_reopen(self, tmp_path):
        DistanceCache(str(tmp_path)).put("abc", small_matrix())
        reopened = DistanceCache(str(tmp_path))
        assert reopened.get("abc", "subsequence", "MRI") is not None
        assert reopened.get("other-cohort", "subsequence", "MRI") is None

    def test_keys_separate_variant_and_modality(self):
        keys = {
            DistanceCache.make_key("abc", "global", "MRI"),
            DistanceCache.make_key("abc", "global", "PET"),
            DistanceCache.make_key("abc", "prefix", "MRI"),
            DistanceCache.make_key("abd", "global", "MRI"),
        }
        assert len(keys) == 4

    def test_get_or_compute_calls_once(self, tmp_path):
        cache = DistanceCache(str(tmp_path))
        calls = []

        def compute():
            calls.append(1)
            return small_matrix()

        cache.get_or_compute("abc", "subsequence", "MRI", compute)
        cache.get_or_compute("abc", "subsequence", "MRI", compute)
        assert len(calls) == 1

    def test_corrupt_entry_is_dropped(self, tmp_path):
        cache = DistanceCache(str(tmp_path))
        cache.put("abc", small_matrix())
        key = DistanceCache.make_key("abc", "subsequence", "MRI")
        (tmp_path / f"{key}.tsv").write_text("garbage\n")
        assert cache.get("abc", "subsequence", "MRI") is None
        assert key not in cache.data["matrices"]

    def test_corrupt_index_starts_empty(self, tmp_path):
        (tmp_path / DistanceCache.INDEX_FILE).write_text("{not json")
        cache = DistanceCache(str(tmp_path))
        assert cache.data == {"matrices": {}}
