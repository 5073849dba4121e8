"""
Pairwise distance matrices between instances, per modality, with block-wise missingness
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from .alignment import VARIANTS, align, cost_matrix
from .cohort import Instance

logger = logging.getLogger(__name__)

DISTANCE_VARIANTS = VARIANTS + ("snapshot",)
MISSING = "NA"


class SimilarityError(ValueError):
    """Raised for unknown modalities/variants, empty training sets or malformed matrix files"""


@dataclass(frozen=True)
class DistanceMatrix:
    """
    Distances between row and column instances for one modality

    values holds NaN wherever mask is False (entry missing because either instance lacks the
    modality). Square matrices built by pairwise_distances share one id ordering for rows and
    columns.
    """

    modality: str
    variant: str
    row_ids: Tuple[str, ...]
    col_ids: Tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_ids", tuple(self.row_ids))
        object.__setattr__(self, "col_ids", tuple(self.col_ids))
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.row_ids), len(self.col_ids)):
            raise SimilarityError(
                f"Matrix shape {values.shape} does not match {len(self.row_ids)} rows x {len(self.col_ids)} columns"
            )
        object.__setattr__(self, "values", values)

    @property
    def mask(self) -> np.ndarray:
        """True where the entry is observed"""
        return ~np.isnan(self.values)

    @property
    def is_square(self) -> bool:
        return self.row_ids == self.col_ids

    @property
    def observed_fraction(self) -> float:
        return float(self.mask.mean()) if self.values.size else 1.0

    def _positions(self, ids: Sequence[str], axis_ids: Tuple[str, ...]) -> List[int]:
        index = {instance_id: k for k, instance_id in enumerate(axis_ids)}
        try:
            return [index[instance_id] for instance_id in ids]
        except KeyError as e:
            raise SimilarityError(f"Instance {e.args[0]} is not part of the {self.modality} matrix") from None

    def subset(self, row_ids: Sequence[str], col_ids: Sequence[str]) -> "DistanceMatrix":
        """Slice rows and columns by instance id"""
        rows = self._positions(row_ids, self.row_ids)
        cols = self._positions(col_ids, self.col_ids)
        return DistanceMatrix(
            modality=self.modality,
            variant=self.variant,
            row_ids=tuple(row_ids),
            col_ids=tuple(col_ids),
            values=self.values[np.ix_(rows, cols)],
        )

    def row(self, instance_id: str) -> np.ndarray:
        return self.values[self._positions([instance_id], self.row_ids)[0]].copy()


def _check_variant(variant: str):
    if variant not in DISTANCE_VARIANTS:
        raise SimilarityError(f"Unknown variant {variant!r}; expected one of {', '.join(DISTANCE_VARIANTS)}")


def usable_series(instance: Instance, modality: str, variant: str) -> Optional[np.ndarray]:
    """Series used for a variant: the final visit for snapshot, the full prefix otherwise"""
    if variant == "snapshot":
        vector = instance.visits[-1].vector(modality)
        return None if vector is None else vector.reshape(1, -1)
    return instance.series(modality)


def _distance(a: np.ndarray, b: np.ndarray, variant: str) -> float:
    if variant == "snapshot":
        return float(cost_matrix(a, b)[0, 0])
    return align(a, b, variant).distance


def pairwise_distances(instances: Sequence[Instance], modality: str, variant: str,
                       n_jobs: int = 1) -> DistanceMatrix:
    """
    Symmetric distance matrix over all instance pairs for one modality

    Args:
        instances: Instances drawn from one cohort (matrix order follows this sequence)
        modality: Modality to align (e.g. "MRI", "PET")
        variant: global | subsequence | prefix | suffix | snapshot
        n_jobs: Number of worker threads for the row fan-out

    Returns:
        DistanceMatrix with NaN where either instance lacks usable data for the modality
    """
    _check_variant(variant)
    if instances and not any(visit.has(modality) for instance in instances for visit in instance.visits):
        raise SimilarityError(f"Unknown modality {modality!r}: no instance carries it")

    series = [usable_series(instance, modality, variant) for instance in instances]
    n = len(series)

    def compute_row(i: int) -> List[float]:
        row = []
        for j in range(i + 1, n):
            if series[i] is None or series[j] is None:
                row.append(math.nan)
            else:
                row.append(_distance(series[i], series[j], variant))
        return row

    rows = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(compute_row)(i) for i in range(n))

    values = np.full((n, n), np.nan)
    for i, row in enumerate(rows):
        if series[i] is not None:
            values[i, i] = 0.0
        for offset, distance in enumerate(row):
            j = i + 1 + offset
            values[i, j] = distance
            values[j, i] = distance

    matrix = DistanceMatrix(
        modality=modality,
        variant=variant,
        row_ids=tuple(instance.instance_id for instance in instances),
        col_ids=tuple(instance.instance_id for instance in instances),
        values=values,
    )
    logger.debug(f"{variant}/{modality}: {n}x{n} matrix, {matrix.observed_fraction:.1%} observed")
    return matrix


def feature_rows(instance_id: str, matrices: Sequence[DistanceMatrix], training_ids: Sequence[str]) -> np.ndarray:
    """
    Feature vector of one instance: its distance rows against the training instances,
    concatenated per modality in the given matrix order; NaN marks entries to impute
    """
    if not training_ids:
        raise SimilarityError("Training set is empty")
    blocks = [matrix.subset([instance_id], training_ids).values[0] for matrix in matrices]
    return np.concatenate(blocks)


@dataclass(frozen=True)
class FeatureMatrix:
    """Rows of instances against (modality, training instance) columns; NaN = missing"""

    row_ids: Tuple[str, ...]
    columns: Tuple[Tuple[str, str], ...]
    values: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        return ~np.isnan(self.values)

    @property
    def column_names(self) -> List[str]:
        return [f"{modality}:{instance_id}" for modality, instance_id in self.columns]


def feature_matrix(row_ids: Sequence[str], matrices: Sequence[DistanceMatrix],
                   columns_by_modality: Mapping[str, Sequence[str]]) -> FeatureMatrix:
    """Stack feature rows for many instances, keeping only the listed columns per modality"""
    blocks = []
    columns: List[Tuple[str, str]] = []
    for matrix in matrices:
        col_ids = list(columns_by_modality.get(matrix.modality, ()))
        if not col_ids:
            continue
        blocks.append(matrix.subset(row_ids, col_ids).values)
        columns.extend((matrix.modality, col_id) for col_id in col_ids)
    if not blocks:
        raise SimilarityError("Training set is empty")
    return FeatureMatrix(row_ids=tuple(row_ids), columns=tuple(columns), values=np.hstack(blocks))


# Text format: "# modality=<m> variant=<v>", an id header, one row per instance, NA for masked

def _format_entry(value: float) -> str:
    return MISSING if math.isnan(value) else repr(float(value))


def matrix_lines(matrix: DistanceMatrix) -> List[str]:
    lines = [f"# modality={matrix.modality} variant={matrix.variant}", "\t".join(("id",) + matrix.col_ids)]
    for row_id, row in zip(matrix.row_ids, matrix.values):
        lines.append("\t".join([row_id] + [_format_entry(x) for x in row]))
    return lines


def write_matrix(matrix: DistanceMatrix, path: Union[str, Path]):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in matrix_lines(matrix):
            f.write(line + "\n")


def read_matrix(path: Union[str, Path]) -> DistanceMatrix:
    """Parse a matrix written by write_matrix"""
    with open(path, "r", encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f if line.strip()]
    if len(lines) < 2 or not lines[0].startswith("#"):
        raise SimilarityError(f"{path}: missing matrix header")

    meta: Dict[str, str] = {}
    for token in lines[0].lstrip("#").split():
        key, _, value = token.partition("=")
        meta[key] = value
    if "modality" not in meta or "variant" not in meta:
        raise SimilarityError(f"{path}: header must name modality and variant")

    col_ids = tuple(lines[1].split("\t")[1:])
    row_ids = []
    values = []
    for line_number, line in enumerate(lines[2:], start=3):
        fields = line.split("\t")
        if len(fields) != len(col_ids) + 1:
            raise SimilarityError(f"{path}:{line_number}: expected {len(col_ids)} entries")
        row_ids.append(fields[0])
        try:
            values.append([math.nan if x == MISSING else float(x) for x in fields[1:]])
        except ValueError:
            raise SimilarityError(f"{path}:{line_number}: non-numeric entry") from None

    return DistanceMatrix(
        modality=meta["modality"],
        variant=meta["variant"],
        row_ids=tuple(row_ids),
        col_ids=col_ids,
        values=np.array(values, dtype=float).reshape(len(row_ids), len(col_ids)),
    )
