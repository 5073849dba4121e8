"""
Simple file-based cache for distance matrices, keyed by cohort content, variant and modality
"""

import hashlib
import json
import logging
import os
from threading import Lock
from typing import Callable, Dict, Optional

from .similarity import DistanceMatrix, SimilarityError, read_matrix, write_matrix

logger = logging.getLogger(__name__)


class DistanceCache:
    """JSON-indexed directory of distance matrices in the line-delimited text format"""

    INDEX_FILE = "index.json"

    def __init__(self, cache_dir: str = ".patsim_cache"):
        self.cache_dir = cache_dir
        self.index_file = os.path.join(cache_dir, self.INDEX_FILE)
        self.lock = Lock()
        self.data = self._load_data()

    def _load_data(self) -> Dict:
        """Load the index from disk"""
        try:
            if os.path.exists(self.index_file):
                with open(self.index_file, 'r') as f:
                    return json.load(f)
            return self._get_default_data()
        except Exception as e:
            logger.warning(f"Error loading cache index {self.index_file}: {e}")
            return self._get_default_data()

    def _get_default_data(self) -> Dict:
        """Get default index structure"""
        return {
            "matrices": {}  # key -> {file, cohort, variant, modality}
        }

    def _save_data(self):
        """Save the index to disk"""
        try:
            os.makedirs(self.cache_dir, exist_ok=True)
            with open(self.index_file, 'w') as f:
                json.dump(self.data, f, indent=2, sort_keys=True)
        except Exception as e:
            logger.error(f"Error saving cache index: {e}")

    @staticmethod
    def make_key(cohort_hash: str, variant: str, modality: str) -> str:
        """Content address of one matrix"""
        return hashlib.sha256(f"{cohort_hash}:{variant}:{modality}".encode()).hexdigest()[:24]

    def get(self, cohort_hash: str, variant: str, modality: str) -> Optional[DistanceMatrix]:
        """Cached matrix or None; unreadable entries are dropped"""
        key = self.make_key(cohort_hash, variant, modality)
        entry = self.data["matrices"].get(key)
        if not entry:
            return None

        path = os.path.join(self.cache_dir, entry["file"])
        try:
            matrix = read_matrix(path)
        except (OSError, SimilarityError) as e:
            logger.warning(f"Discarding unreadable cache entry {path}: {e}")
            with self.lock:
                self.data["matrices"].pop(key, None)
                self._save_data()
            return None

        if matrix.variant != variant or matrix.modality != modality:
            logger.warning(f"Cache entry {path} does not match {variant}/{modality}, ignoring")
            return None
        logger.info(f"Using cached {variant}/{modality} matrix ({len(matrix.row_ids)} instances)")
        return matrix

    def put(self, cohort_hash: str, matrix: DistanceMatrix):
        """Store a matrix and record it in the index"""
        key = self.make_key(cohort_hash, matrix.variant, matrix.modality)
        file_name = f"{key}.tsv"
        with self.lock:
            os.makedirs(self.cache_dir, exist_ok=True)
            write_matrix(matrix, os.path.join(self.cache_dir, file_name))
            self.data["matrices"][key] = {
                "file": file_name,
                "cohort": cohort_hash,
                "variant": matrix.variant,
                "modality": matrix.modality,
            }
            self._save_data()

    def get_or_compute(self, cohort_hash: str, variant: str, modality: str,
                       compute: Callable[[], DistanceMatrix]) -> DistanceMatrix:
        """Return the cached matrix, computing and storing it on a miss"""
        matrix = self.get(cohort_hash, variant, modality)
        if matrix is None:
            matrix = compute()
            self.put(cohort_hash, matrix)
        return matrix
