"""
Dynamic time warping alignment: global, subsequence, prefix and suffix variants
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np
from numba import njit

logger = logging.getLogger(__name__)

VARIANTS = ("global", "subsequence", "prefix", "suffix")

SeriesLike = Union[np.ndarray, Sequence[float], Sequence[Sequence[float]]]


class AlignmentError(ValueError):
    """Raised for empty series or mismatched feature dimensions"""


@dataclass(frozen=True)
class AccumulatedCostMatrix:
    """(V_a + 1) x (V_b + 1) dynamic-programming table; row/column 0 are padding"""

    entries: np.ndarray
    variant: str


@dataclass(frozen=True)
class AlignmentResult:
    """
    Optimal alignment of two series

    path holds 0-based (index in series_a, index in series_b) pairs; matched_span is the
    inclusive 0-based window of the series named by `spanned` ("a" or "b") that the path covers.
    """

    distance: float
    path: Tuple[Tuple[int, int], ...]
    matched_span: Tuple[int, int]
    variant: str
    spanned: str = "b"

    def path_cost(self, series_a: SeriesLike, series_b: SeriesLike) -> float:
        """Sum of local costs along the path"""
        cost = cost_matrix(series_a, series_b)
        return float(sum(cost[i, j] for i, j in self.path))


def as_series(series: SeriesLike) -> np.ndarray:
    """Coerce input to a (V, d) float array; 1-D input is one feature per time point"""
    array = np.asarray(series, dtype=float)
    if array.ndim == 1:
        array = array.reshape(-1, 1)
    if array.ndim != 2:
        raise AlignmentError(f"Series must be 1-D or 2-D, got shape {array.shape}")
    if array.shape[0] == 0:
        raise AlignmentError("Series must contain at least one time point")
    return array


def cost_matrix(series_a: SeriesLike, series_b: SeriesLike) -> np.ndarray:
    """C(v, w) = squared Euclidean distance between x_v of series_a and x_w of series_b"""
    a = as_series(series_a)
    b = as_series(series_b)
    if a.shape[1] != b.shape[1]:
        raise AlignmentError(f"Feature dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


@njit(cache=True, nogil=True)
def _accumulate(cost, open_begin):
    n, m = cost.shape
    D = np.empty((n + 1, m + 1))
    D[0, 0] = 0.0
    for j in range(1, m + 1):
        D[0, j] = 0.0 if open_begin else np.inf
    for i in range(1, n + 1):
        D[i, 0] = np.inf
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            best = D[i - 1, j - 1]
            if D[i - 1, j] < best:
                best = D[i - 1, j]
            if D[i, j - 1] < best:
                best = D[i, j - 1]
            D[i, j] = cost[i - 1, j - 1] + best
    return D


def accumulated_cost_matrix(series_a: SeriesLike, series_b: SeriesLike, variant: str = "global") -> AccumulatedCostMatrix:
    """
    Fill the accumulated cost matrix for the given orientation (no transposition)

    Subsequence matching starts from a zero first row, so D[0, 0] = 0 and the match may begin
    at any column; global and prefix anchor the start at the corner. Suffix works on the
    cost matrix rotated by 180 degrees.
    """
    _check_variant(variant)
    cost = cost_matrix(series_a, series_b)
    if variant == "suffix":
        cost = cost[::-1, ::-1]
    entries = _accumulate(np.ascontiguousarray(cost), variant == "subsequence")
    return AccumulatedCostMatrix(entries=entries, variant=variant)


def _backtrack(D: np.ndarray, end_col: int) -> List[Tuple[int, int]]:
    i, j = D.shape[0] - 1, end_col
    path = []
    while True:
        path.append((i - 1, j - 1))
        # Ties prefer the diagonal, then vertical, then horizontal step
        pi, pj = min(((i - 1, j - 1), (i - 1, j), (i, j - 1)), key=lambda cell: D[cell])
        if pi == 0 or pj == 0:
            break
        i, j = pi, pj
    path.reverse()
    return path


def _align_rows(rows: np.ndarray, cols: np.ndarray, variant: str) -> Tuple[float, List[Tuple[int, int]]]:
    """Align with `rows` fully matched; returns distance and (row, col) path"""
    D = accumulated_cost_matrix(rows, cols, variant).entries
    if variant == "global":
        end_col = D.shape[1] - 1
    else:
        # argmin returns the first minimum, i.e. the smallest end column
        end_col = int(np.argmin(D[-1, 1:])) + 1
    return float(D[-1, end_col]), _backtrack(D, end_col)


def _oriented(a: np.ndarray, b: np.ndarray, variant: str) -> AlignmentResult:
    """Shorter series as rows; equal lengths take the cheaper orientation (ties keep a as rows)"""
    if a.shape[1] != b.shape[1]:
        raise AlignmentError(f"Feature dimension mismatch: {a.shape[1]} vs {b.shape[1]}")

    candidates = []
    if len(a) <= len(b):
        distance, path = _align_rows(a, b, variant)
        candidates.append((distance, path, "b"))
    if len(b) <= len(a):
        distance, path = _align_rows(b, a, variant)
        candidates.append((distance, [(i, j) for j, i in path], "a"))

    distance, path, spanned = min(candidates, key=lambda c: c[0])
    axis = 1 if spanned == "b" else 0
    span = (path[0][axis], path[-1][axis])
    return AlignmentResult(distance=distance, path=tuple(path), matched_span=span, variant=variant, spanned=spanned)


def global_dtw_distance(series_a: SeriesLike, series_b: SeriesLike) -> AlignmentResult:
    """Standard DTW: both series matched from beginning to end"""
    a = as_series(series_a)
    b = as_series(series_b)
    if a.shape[1] != b.shape[1]:
        raise AlignmentError(f"Feature dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    distance, path = _align_rows(a, b, "global")
    return AlignmentResult(distance=distance, path=tuple(path), matched_span=(0, len(b) - 1),
                           variant="global", spanned="b")


def subsequence_distance(series_a: SeriesLike, series_b: SeriesLike) -> AlignmentResult:
    """Shorter series fully matched against the best contiguous window of the longer one"""
    return _oriented(as_series(series_a), as_series(series_b), "subsequence")


def prefix_distance(series_a: SeriesLike, series_b: SeriesLike) -> AlignmentResult:
    """Start anchored at the first elements; the longer series may drop a suffix"""
    return _oriented(as_series(series_a), as_series(series_b), "prefix")


def suffix_distance(series_a: SeriesLike, series_b: SeriesLike) -> AlignmentResult:
    """End anchored at the last elements: prefix matching of both series reversed"""
    a = as_series(series_a)
    b = as_series(series_b)
    reversed_result = prefix_distance(a[::-1], b[::-1])

    n, m = len(a), len(b)
    path = tuple((n - 1 - i, m - 1 - j) for i, j in reversed(reversed_result.path))
    last = (n if reversed_result.spanned == "a" else m) - 1
    start, end = reversed_result.matched_span
    return AlignmentResult(
        distance=reversed_result.distance,
        path=path,
        matched_span=(last - end, last - start),
        variant="suffix",
        spanned=reversed_result.spanned,
    )


_DISPATCH: Dict[str, Callable[[SeriesLike, SeriesLike], AlignmentResult]] = {
    "global": global_dtw_distance,
    "subsequence": subsequence_distance,
    "prefix": prefix_distance,
    "suffix": suffix_distance,
}


def _check_variant(variant: str):
    if variant not in _DISPATCH:
        raise AlignmentError(f"Unknown alignment variant {variant!r}; expected one of {', '.join(VARIANTS)}")


def align(series_a: SeriesLike, series_b: SeriesLike, variant: str) -> AlignmentResult:
    """Align two series with the named variant"""
    _check_variant(variant)
    return _DISPATCH[variant](series_a, series_b)
