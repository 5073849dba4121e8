"""
Leave-one-patient-out folds, nested hyperparameter selection and comparison statistics
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats
from sklearn.model_selection import StratifiedGroupKFold

from .cohort import Cohort, Instance, order_modalities
from .model import CUTOFF

logger = logging.getLogger(__name__)

DEFAULT_INNER_K = 5
LONG_SERIES_VISITS = 5


class EvaluationError(ValueError):
    """Raised for degenerate cohorts, folds or score vectors"""


class LeakageError(EvaluationError):
    """Raised when a held-out patient's instances reach any part of fold training"""


@dataclass(frozen=True)
class Fold:
    test_patient: str
    train_ids: Tuple[str, ...]
    test_ids: Tuple[str, ...]


@dataclass(frozen=True)
class FoldPlan:
    """One fold per patient with at least one labeled instance, ordered by patient id"""

    folds: Tuple[Fold, ...]

    def __iter__(self) -> Iterator[Fold]:
        return iter(self.folds)

    def __len__(self) -> int:
        return len(self.folds)


def make_folds(cohort: Cohort) -> FoldPlan:
    """Leave-one-patient-out plan over the labeled instances of a cohort"""
    labeled = cohort.labeled_instances()
    by_patient: Dict[str, List[str]] = {}
    for instance in labeled:
        by_patient.setdefault(instance.patient_id, []).append(instance.instance_id)

    if len(by_patient) < 2:
        raise EvaluationError(f"Need at least 2 patients with labeled instances, found {len(by_patient)}")

    folds = []
    for patient_id in sorted(by_patient):
        test_ids = tuple(by_patient[patient_id])
        train_ids = tuple(i.instance_id for i in labeled if i.patient_id != patient_id)
        folds.append(Fold(test_patient=patient_id, train_ids=train_ids, test_ids=test_ids))
    return FoldPlan(folds=tuple(folds))


# Nested selection

class Hyperparameters(NamedTuple):
    """One grid point: the model's C plus the factorization settings (None when nothing is imputed)"""

    C: float
    rank: Optional[int] = None
    lam: Optional[float] = None


@dataclass(frozen=True)
class Selection:
    """Outcome of nested cross-validation on one training fold"""

    params: Hyperparameters
    mean_auroc: Dict[Hyperparameters, float]
    inner_folds: Tuple[Tuple[Tuple[int, ...], Tuple[int, ...]], ...]
    skipped: int = 0

    @property
    def C(self) -> float:
        return self.params.C


FitAndScore = Callable[[np.ndarray, np.ndarray, np.ndarray, float], np.ndarray]
Prepare = Callable[[np.ndarray, np.ndarray, Hyperparameters], Tuple[np.ndarray, np.ndarray]]


def _as_grid(grid: Sequence[Union[float, Hyperparameters]]) -> List[Hyperparameters]:
    points = {p if isinstance(p, Hyperparameters) else Hyperparameters(C=float(p)) for p in grid}
    return sorted(points)


def nested_select(train_features: np.ndarray, labels: Sequence[int], groups: Sequence[str],
                  grid: Sequence[Union[float, Hyperparameters]], inner_k: int, fit_and_score: FitAndScore,
                  prepare: Optional[Prepare] = None) -> Selection:
    """
    Pick the grid point maximizing mean inner-fold AUROC, with inner folds grouped by patient

    Args:
        train_features: (n, d) outer-training feature matrix, NaN allowed when prepare completes it
        labels: n binary labels
        groups: n patient ids; no patient is split across inner folds
        grid: Candidate C values or Hyperparameters points
        inner_k: Number of inner folds (capped at the number of patients)
        fit_and_score: (X_train, y_train, X_validation, C) -> validation scores
        prepare: (X_train, X_validation, point) -> completed blocks; runs once per inner fold and
            (rank, lam) setting, fitted on the inner training rows only

    Returns:
        Selection; ties go to the smallest C, then the smallest rank and lam. Inner folds whose
        training or validation part holds a single class are skipped.
    """
    grid = _as_grid(grid)
    if not grid:
        raise EvaluationError("Hyperparameter grid is empty")

    X = np.asarray(train_features, dtype=float)
    y = np.asarray(labels)
    groups = np.asarray(groups)
    n_groups = len(np.unique(groups))

    if len(grid) == 1:
        return Selection(params=grid[0], mean_auroc={}, inner_folds=())
    if n_groups < 2:
        raise EvaluationError("Nested selection needs at least 2 patients in the training fold")

    splitter = StratifiedGroupKFold(n_splits=min(inner_k, n_groups))
    usable = []
    skipped = 0
    for train_idx, val_idx in splitter.split(X, y, groups):
        if len(np.unique(y[train_idx])) < 2 or len(np.unique(y[val_idx])) < 2:
            skipped += 1
            continue
        usable.append((train_idx, val_idx))
    if not usable:
        raise EvaluationError("Every inner fold holds a single class")
    if skipped:
        logger.warning(f"Skipped {skipped} single-class inner fold(s)")

    scores: Dict[Hyperparameters, List[float]] = {point: [] for point in grid}
    for train_idx, val_idx in usable:
        blocks: Dict[Tuple, Tuple[np.ndarray, np.ndarray]] = {}
        for point in grid:
            setting = (point.rank, point.lam)
            if setting not in blocks:
                Xt, Xv = X[train_idx], X[val_idx]
                blocks[setting] = prepare(Xt, Xv, point) if prepare is not None else (Xt, Xv)
            Xt, Xv = blocks[setting]
            predicted = fit_and_score(Xt, y[train_idx], Xv, point.C)
            scores[point].append(auroc(predicted, y[val_idx]))

    mean_auroc = {point: float(np.mean(values)) for point, values in scores.items()}
    best = max(range(len(grid)), key=lambda k: (mean_auroc[grid[k]], -k))
    return Selection(
        params=grid[best],
        mean_auroc=mean_auroc,
        inner_folds=tuple((tuple(int(i) for i in t), tuple(int(i) for i in v)) for t, v in usable),
        skipped=skipped,
    )


# ROC statistics

def _split_scores(scores: Sequence[float], labels: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise EvaluationError(f"{len(s)} scores but {len(y)} labels")
    return s[y == 1], s[y == 0]


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUROC: share of (positive, negative) pairs ranked correctly, ties count 1/2"""
    positives, negatives = _split_scores(scores, labels)
    if len(positives) == 0 or len(negatives) == 0:
        raise EvaluationError("AUROC needs both classes")
    ranks = stats.rankdata(np.concatenate([positives, negatives]))
    m, n = len(positives), len(negatives)
    return float((ranks[:m].sum() - m * (m + 1) / 2.0) / (m * n))


def _placements(score_sets: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    AUROCs and DeLong structural components for k score vectors on the same instances

    Returns:
        (aucs of shape (k,), V10 of shape (k, m), V01 of shape (k, n))
    """
    positives = score_sets[:, labels == 1]
    negatives = score_sets[:, labels == 0]
    m, n = positives.shape[1], negatives.shape[1]
    if m < 2 or n < 2:
        raise EvaluationError(f"DeLong variance needs at least 2 positives and 2 negatives (got {m}, {n})")

    combined = np.hstack([positives, negatives])
    tz = stats.rankdata(combined, axis=1)
    tx = stats.rankdata(positives, axis=1)
    ty = stats.rankdata(negatives, axis=1)

    aucs = (tz[:, :m].sum(axis=1) - m * (m + 1) / 2.0) / (m * n)
    v10 = (tz[:, :m] - tx) / n
    v01 = 1.0 - (tz[:, m:] - ty) / m
    return aucs, v10, v01


def _delong_covariance(score_sets: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    aucs, v10, v01 = _placements(score_sets, labels)
    m, n = v10.shape[1], v01.shape[1]
    covariance = np.atleast_2d(np.cov(v10)) / m + np.atleast_2d(np.cov(v01)) / n
    return aucs, covariance


class ConfidenceInterval(NamedTuple):
    lower: float
    upper: float
    variance: float


def delong_ci(scores: Sequence[float], labels: Sequence[int], level: float = 0.95) -> ConfidenceInterval:
    """AUROC +/- z * sqrt(DeLong variance), clipped to [0, 1]"""
    s = np.asarray(scores, dtype=float)[None, :]
    aucs, covariance = _delong_covariance(s, np.asarray(labels))
    variance = max(float(covariance[0, 0]), 0.0)
    half_width = stats.norm.ppf(0.5 + level / 2.0) * np.sqrt(variance)
    point = float(aucs[0])
    return ConfidenceInterval(
        lower=float(max(0.0, point - half_width)),
        upper=float(min(1.0, point + half_width)),
        variance=variance,
    )


def delong_ztest(scores_a: Sequence[float], scores_b: Sequence[float], labels: Sequence[int]) -> Tuple[float, float]:
    """
    Two-sided z-test for the difference of two correlated AUROCs

    Returns:
        (z, p); zero variance of the difference gives z = 0, p = 1 when the AUROCs agree
    """
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if a.shape != b.shape:
        raise EvaluationError("Paired score vectors must cover the same instances")
    aucs, covariance = _delong_covariance(np.vstack([a, b]), np.asarray(labels))

    difference = float(aucs[0] - aucs[1])
    variance = float(covariance[0, 0] + covariance[1, 1] - 2.0 * covariance[0, 1])
    if variance <= 1e-300:
        if difference == 0.0:
            return 0.0, 1.0
        return float(np.copysign(np.inf, difference)), 0.0

    z = difference / np.sqrt(variance)
    return float(z), float(2.0 * stats.norm.sf(abs(z)))


# Paired prediction comparisons

@dataclass(frozen=True)
class ContingencyTable:
    """Agreement of two models' thresholded predictions, plus McNemar tests"""

    both_correct: int
    a_only: int
    b_only: int
    both_wrong: int
    positives_a_only: int
    positive_patients_a_only: Optional[int]
    mcnemar_exact_p: float
    mcnemar_chi2_p: float

    @property
    def total(self) -> int:
        return self.both_correct + self.a_only + self.b_only + self.both_wrong


def contingency(scores_a: Sequence[float], scores_b: Sequence[float], labels: Sequence[int],
                cutoff: float = CUTOFF, patient_ids: Optional[Sequence[str]] = None) -> ContingencyTable:
    """
    2x2 correctness table of two models at a probability cutoff (predict 1 when score >= cutoff)

    positives_a_only counts positive instances model a gets right and model b gets wrong;
    with patient_ids, positive_patients_a_only counts the distinct patients behind them.
    """
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    y = np.asarray(labels)
    if not (a.shape == b.shape == y.shape):
        raise EvaluationError("Contingency inputs must have equal length")

    correct_a = (a >= cutoff).astype(int) == y
    correct_b = (b >= cutoff).astype(int) == y
    a_only_mask = correct_a & ~correct_b
    a_only = int(a_only_mask.sum())
    b_only = int((correct_b & ~correct_a).sum())

    positive_a_only = a_only_mask & (y == 1)
    patients = None
    if patient_ids is not None:
        patients = len(set(np.asarray(patient_ids)[positive_a_only].tolist()))

    discordant = a_only + b_only
    if discordant == 0:
        exact_p = chi2_p = 1.0
    else:
        exact_p = float(stats.binomtest(a_only, discordant, 0.5).pvalue)
        statistic = max(abs(a_only - b_only) - 1.0, 0.0) ** 2 / discordant
        chi2_p = float(stats.chi2.sf(statistic, df=1))

    return ContingencyTable(
        both_correct=int((correct_a & correct_b).sum()),
        a_only=a_only,
        b_only=b_only,
        both_wrong=int((~correct_a & ~correct_b).sum()),
        positives_a_only=int(positive_a_only.sum()),
        positive_patients_a_only=patients,
        mcnemar_exact_p=exact_p,
        mcnemar_chi2_p=chi2_p,
    )


@dataclass(frozen=True)
class TopDifference:
    """One instance with a large disagreement between two models, with its trajectories"""

    instance_id: str
    patient_id: str
    label: Optional[int]
    prob_a: float
    prob_b: float
    months: Tuple[int, ...]
    trajectories: Dict[str, List[Optional[List[float]]]] = field(default_factory=dict)

    @property
    def difference(self) -> float:
        return self.prob_a - self.prob_b


def _trajectories(instance: Instance) -> Dict[str, List[Optional[List[float]]]]:
    modalities = order_modalities(m for visit in instance.visits for m in visit.features_by_modality)
    return {
        modality: [
            list(visit.features_by_modality[modality]) if visit.has(modality) else None
            for visit in instance.visits
        ]
        for modality in modalities
    }


def top_differences(probs_a: Sequence[float], probs_b: Sequence[float], instances: Sequence[Instance],
                    k: int = 10) -> List[TopDifference]:
    """Instances ranked by |p_a - p_b| (descending, ties by instance id) with per-visit biomarkers"""
    if not (len(probs_a) == len(probs_b) == len(instances)):
        raise EvaluationError("Probability vectors and instances must have equal length")
    order = sorted(range(len(instances)),
                   key=lambda i: (-abs(float(probs_a[i]) - float(probs_b[i])), instances[i].instance_id))
    return [
        TopDifference(
            instance_id=instances[i].instance_id,
            patient_id=instances[i].patient_id,
            label=instances[i].label,
            prob_a=float(probs_a[i]),
            prob_b=float(probs_b[i]),
            months=tuple(instances[i].months),
            trajectories=_trajectories(instances[i]),
        )
        for i in order[:k]
    ]


@dataclass(frozen=True)
class LengthStrata:
    n_total: int
    n_a_better: int
    long_fraction_a_better: float
    long_fraction_overall: float
    min_length: int


def length_stratified(probs_a: Sequence[float], probs_b: Sequence[float], labels: Sequence[int],
                      lengths: Sequence[int], min_length: int = LONG_SERIES_VISITS) -> LengthStrata:
    """
    Share of long series (>= min_length visits) among instances where model a assigns the true
    class a higher probability than model b, next to the share over all instances
    """
    frame = pd.DataFrame({
        "prob_a": np.asarray(probs_a, dtype=float),
        "prob_b": np.asarray(probs_b, dtype=float),
        "label": np.asarray(labels),
        "length": np.asarray(lengths),
    })
    if frame.empty:
        raise EvaluationError("No instances to stratify")

    true_a = np.where(frame["label"] == 1, frame["prob_a"], 1.0 - frame["prob_a"])
    true_b = np.where(frame["label"] == 1, frame["prob_b"], 1.0 - frame["prob_b"])
    frame["long"] = frame["length"] >= min_length
    better = frame[true_a > true_b]

    return LengthStrata(
        n_total=len(frame),
        n_a_better=len(better),
        long_fraction_a_better=float(better["long"].mean()) if len(better) else 0.0,
        long_fraction_overall=float(frame["long"].mean()),
        min_length=min_length,
    )


# Leakage audit

@dataclass(frozen=True)
class FoldTrace:
    """Every instance id that fed into one fold's training"""

    test_patient: str
    test_ids: Tuple[str, ...]
    train_ids: Tuple[str, ...]
    feature_columns: Tuple[str, ...]
    imputation_rows: Tuple[str, ...]
    inner_fold_ids: Tuple[str, ...]


def _patient_of(instance_id: str) -> str:
    return instance_id.rsplit(":", 1)[0]


def audit_fold(trace: FoldTrace):
    """Raise LeakageError when a held-out instance or patient appears in any training input"""
    held_out = set(trace.test_ids)
    for name, ids in (
        ("training rows", trace.train_ids),
        ("feature columns", trace.feature_columns),
        ("imputation fit", trace.imputation_rows),
        ("inner folds", trace.inner_fold_ids),
    ):
        leaked = held_out.intersection(ids) | {i for i in ids if _patient_of(i) == trace.test_patient}
        if leaked:
            raise LeakageError(
                f"Fold {trace.test_patient}: {len(leaked)} held-out instance(s) in {name}, e.g. {sorted(leaked)[0]}"
            )
