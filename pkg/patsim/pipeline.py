"""
Leave-one-patient-out evaluation of every requested method over one cohort
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from functools import partial
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from .cache import DistanceCache
from .cohort import Cohort, Instance, cohort_fingerprint, summarize_cohort
from .config import RunConfig
from .evaluation import (
    ConfidenceInterval,
    ContingencyTable,
    EvaluationError,
    Fold,
    FoldTrace,
    Hyperparameters,
    LengthStrata,
    TopDifference,
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
from .imputation import complete_features, factorization_grid
from .model import LogisticModel, predict_proba, top_weighted_features, train
from .similarity import DistanceMatrix, feature_matrix, pairwise_distances, usable_series

logger = logging.getLogger(__name__)

REFERENCE_METHOD = "subsequence"
TOP_K = 10


@dataclass(frozen=True)
class FoldOutcome:
    test_ids: Tuple[str, ...]
    probabilities: Tuple[float, ...]
    C: float
    factorization: Optional[Tuple[int, float]]
    trace: FoldTrace


@dataclass(frozen=True)
class MethodResult:
    """Held-out predictions of one method over every labeled instance"""

    method: str
    instance_ids: Tuple[str, ...]
    labels: np.ndarray
    probabilities: np.ndarray
    auroc: float
    ci: ConfidenceInterval
    outcomes: Tuple[FoldOutcome, ...]
    top_features: Tuple[Tuple[str, float], ...] = ()
    final_model: Optional[LogisticModel] = None
    top_feature_values: Tuple[float, ...] = ()

    @property
    def chosen_C(self) -> Counter:
        return Counter(outcome.C for outcome in self.outcomes)


@dataclass(frozen=True)
class PairwiseTest:
    method_a: str
    method_b: str
    z: float
    p: float


@dataclass(frozen=True)
class EvalReport:
    """Everything one evaluate run produces"""

    config: RunConfig
    summary: Dict
    instances: Tuple[Instance, ...]
    results: Dict[str, MethodResult]
    tests: Tuple[PairwiseTest, ...] = ()
    contingencies: Tuple[Tuple[str, str, ContingencyTable], ...] = ()
    top_pair: Optional[Tuple[str, str]] = None
    top: Tuple[TopDifference, ...] = ()
    strata_pair: Optional[Tuple[str, str]] = None
    strata: Optional[LengthStrata] = None
    fingerprint: str = field(default="")


def _standardize(train_rows: np.ndarray, test_rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Z-score columns with training statistics; missing entries end up at 0 (the training mean)"""
    observed = ~np.isnan(train_rows)
    counts = np.maximum(observed.sum(axis=0), 1)
    mean = np.where(observed, train_rows, 0.0).sum(axis=0) / counts
    centered = np.where(observed, train_rows - mean, 0.0)
    std = np.sqrt((centered ** 2).sum(axis=0) / counts)
    std[std == 0] = 1.0

    def scale(rows):
        return np.nan_to_num((rows - mean) / std, nan=0.0)

    return scale(train_rows), scale(test_rows)


def _fit_and_score(Xt, yt, Xv, C):
    return predict_proba(train(Xt, yt, C), Xv)


def _fit_fold(X_train: np.ndarray, y_train: np.ndarray, groups: Sequence[str], X_test: np.ndarray,
              config: RunConfig, feature_names: Sequence[str], grid: Sequence[Hyperparameters],
              prepare=None):
    """
    Nested selection, final fit and held-out probabilities

    With a prepare step the selected (rank, lam) completes the outer blocks before the final fit,
    exactly as it completed every inner split during selection.
    """
    selection = nested_select(X_train, y_train, groups, grid, config.inner_k, _fit_and_score, prepare=prepare)
    if prepare is not None:
        X_train, X_test = prepare(X_train, X_test, selection.params)
    model = train(X_train, y_train, selection.C, feature_names=feature_names)
    probabilities = np.atleast_1d(predict_proba(model, X_test))
    return selection, model, probabilities


def _inner_ids(selection, train_ids: Sequence[str]) -> Tuple[str, ...]:
    used = sorted({k for train_idx, val_idx in selection.inner_folds for k in train_idx + val_idx})
    return tuple(train_ids[k] for k in used)


class SnapshotFeatures:
    """Final-visit biomarker vectors (modalities in canonical order, NaN where absent)"""

    def __init__(self, instances: Sequence[Instance], modalities: Sequence[str], dims: Dict[str, int]):
        self.names = [f"{m}[{k}]" for m in modalities for k in range(dims[m])]
        rows = {}
        for instance in instances:
            blocks = []
            for modality in modalities:
                vector = instance.visits[-1].vector(modality)
                blocks.append(np.full(dims[modality], np.nan) if vector is None else vector)
            rows[instance.instance_id] = np.concatenate(blocks)
        self.rows = rows

    def matrix(self, ids: Sequence[str]) -> np.ndarray:
        return np.vstack([self.rows[i] for i in ids])


class MethodRunner:
    """Runs the leave-one-patient-out protocol for one method"""

    def __init__(self, cohort: Cohort, config: RunConfig, modalities: Sequence[str],
                 cache: Optional[DistanceCache] = None, fingerprint: Optional[str] = None):
        self.cohort = cohort
        self.config = config
        self.modalities = list(modalities)
        self.cache = cache
        self.fingerprint = fingerprint or cohort_fingerprint(cohort)
        self.labeled = cohort.labeled_instances()
        self.labels = {i.instance_id: int(i.label) for i in self.labeled}
        self.patients = {i.instance_id: i.patient_id for i in self.labeled}

    def distance_matrices(self, variant: str) -> List[DistanceMatrix]:
        matrices = []
        for modality in self.modalities:
            if not any(usable_series(i, modality, variant) is not None for i in self.labeled):
                logger.warning(f"No labeled instance has usable {modality} data, skipping the modality")
                continue

            def compute(modality=modality):
                logger.info(f"Computing {variant}/{modality} distances over {len(self.labeled)} instances")
                return pairwise_distances(self.labeled, modality, variant, n_jobs=self.config.jobs)

            if self.cache is None:
                matrices.append(compute())
            else:
                matrices.append(self.cache.get_or_compute(self.fingerprint, variant, modality, compute))
        if not matrices:
            raise EvaluationError(f"No modality is usable for method {variant}")
        return matrices

    def _complete(self, X_train: np.ndarray, X_test: np.ndarray, params: Hyperparameters):
        completed_train, completed_test, _ = complete_features(X_train, X_test, params.rank, params.lam,
                                                               seed=self.config.seed)
        return completed_train, completed_test

    def _distance_fold(self, fold: Fold, matrices: Sequence[DistanceMatrix]) -> FoldOutcome:
        columns = {}
        for matrix in matrices:
            diagonal = np.diag(matrix.values)
            available = {matrix.row_ids[k] for k in range(len(diagonal)) if not np.isnan(diagonal[k])}
            columns[matrix.modality] = [i for i in fold.train_ids if i in available]

        train_block = feature_matrix(fold.train_ids, matrices, columns)
        test_block = feature_matrix(fold.test_ids, matrices, columns)
        X_train, X_test = train_block.values, test_block.values

        prepare = None
        imputation_rows: Tuple[str, ...] = ()
        if np.isnan(X_train).any() or np.isnan(X_test).any():
            observed = ~np.isnan(X_train)
            shape = (int(observed.any(axis=1).sum()), int(observed.any(axis=0).sum()))
            settings = factorization_grid(shape, self.config.grid_rank, self.config.grid_lambda)
            grid = [Hyperparameters(C, rank, lam) for C in self.config.grid_c for rank, lam in settings]
            prepare = self._complete
            imputation_rows = tuple(fold.train_ids)
        else:
            grid = [Hyperparameters(C) for C in self.config.grid_c]

        y_train = np.array([self.labels[i] for i in fold.train_ids])
        groups = [self.patients[i] for i in fold.train_ids]
        selection, _, probabilities = _fit_fold(X_train, y_train, groups, X_test, self.config,
                                                train_block.column_names, grid, prepare=prepare)
        factorization = None if prepare is None else (selection.params.rank, selection.params.lam)

        trace = FoldTrace(
            test_patient=fold.test_patient,
            test_ids=fold.test_ids,
            train_ids=fold.train_ids,
            feature_columns=tuple(instance_id for _, instance_id in train_block.columns),
            imputation_rows=imputation_rows,
            inner_fold_ids=_inner_ids(selection, fold.train_ids),
        )
        audit_fold(trace)
        logger.debug(f"Fold {fold.test_patient}: C={selection.C}, factorization={factorization}")
        return FoldOutcome(fold.test_ids, tuple(float(p) for p in probabilities), selection.C, factorization, trace)

    def _snapshot_fold(self, fold: Fold, features: SnapshotFeatures) -> FoldOutcome:
        X_train, X_test = _standardize(features.matrix(fold.train_ids), features.matrix(fold.test_ids))
        y_train = np.array([self.labels[i] for i in fold.train_ids])
        groups = [self.patients[i] for i in fold.train_ids]
        grid = [Hyperparameters(C) for C in self.config.grid_c]
        selection, _, probabilities = _fit_fold(X_train, y_train, groups, X_test, self.config, features.names, grid)

        trace = FoldTrace(
            test_patient=fold.test_patient,
            test_ids=fold.test_ids,
            train_ids=fold.train_ids,
            feature_columns=(),
            imputation_rows=(),
            inner_fold_ids=_inner_ids(selection, fold.train_ids),
        )
        audit_fold(trace)
        return FoldOutcome(fold.test_ids, tuple(float(p) for p in probabilities), selection.C, None, trace)

    def _snapshot_refit(self, features: SnapshotFeatures, outcomes: Sequence[FoldOutcome]) -> LogisticModel:
        """Refit the snapshot model on every labeled instance with the most frequently chosen C"""
        ids = [i.instance_id for i in self.labeled]
        X, _ = _standardize(features.matrix(ids), features.matrix(ids[:1]))
        C = Counter(o.C for o in outcomes).most_common(1)[0][0]
        return train(X, [self.labels[i] for i in ids], C, feature_names=features.names)

    def run(self, method: str) -> MethodResult:
        plan = make_folds(self.cohort)
        if method == "snapshot":
            features = SnapshotFeatures(self.labeled, self.modalities, self.cohort.modality_dims())
            task = partial(self._snapshot_fold, features=features)
        else:
            matrices = self.distance_matrices(method)
            task = partial(self._distance_fold, matrices=matrices)

        logger.info(f"Evaluating {method} over {len(plan)} leave-one-patient-out folds")
        outcomes = Parallel(n_jobs=self.config.jobs, prefer="threads")(delayed(task)(fold) for fold in plan)

        predicted = {i: p for outcome in outcomes for i, p in zip(outcome.test_ids, outcome.probabilities)}
        ids = tuple(i.instance_id for i in self.labeled)
        labels = np.array([self.labels[i] for i in ids])
        probabilities = np.array([predicted[i] for i in ids])

        score = auroc(probabilities, labels)
        ci = delong_ci(probabilities, labels)
        logger.info(f"{method}: AUROC {score:.3f} ({ci.lower:.3f} - {ci.upper:.3f})")

        top_features, final_model, top_feature_values = (), None, ()
        if method == "snapshot":
            final_model = self._snapshot_refit(features, outcomes)
            top_features = tuple(top_weighted_features(final_model, k=len(features.names)))
            column = features.names.index(top_features[0][0])
            top_feature_values = tuple(float(v) for v in features.matrix(ids)[:, column])

        return MethodResult(
            method=method,
            instance_ids=ids,
            labels=labels,
            probabilities=probabilities,
            auroc=score,
            ci=ci,
            outcomes=tuple(outcomes),
            top_features=top_features,
            final_model=final_model,
            top_feature_values=top_feature_values,
        )


def _comparison_partner(methods: Sequence[str], reference: str, preferred: str) -> Optional[str]:
    if preferred in methods and preferred != reference:
        return preferred
    others = [m for m in methods if m != reference]
    return others[0] if others else None


def run_evaluation(cohort: Cohort, config: RunConfig, cache: Optional[DistanceCache] = None) -> EvalReport:
    """
    Evaluate every configured method and compare them

    The reference method (subsequence when requested, otherwise the first method) is compared
    with every other method through contingency tables, and with the snapshot baseline (or the
    next method) through the top-difference list and the length-stratified analysis.
    """
    if len(cohort.labeled_instances()) == 0:
        raise EvaluationError("Cohort has no labeled instances")

    modalities = list(config.modalities) or cohort.modalities()
    unknown = set(modalities) - set(cohort.modalities())
    if unknown:
        raise EvaluationError(f"Unknown modality {sorted(unknown)[0]!r}; cohort has {', '.join(cohort.modalities())}")
    fingerprint = cohort_fingerprint(cohort)
    runner = MethodRunner(cohort, config, modalities, cache=cache, fingerprint=fingerprint)
    results = {method: runner.run(method) for method in config.methods}

    labels = next(iter(results.values())).labels
    tests = tuple(
        PairwiseTest(a, b, *delong_ztest(results[a].probabilities, results[b].probabilities, labels))
        for a, b in combinations(config.methods, 2)
    )

    reference = REFERENCE_METHOD if REFERENCE_METHOD in results else config.methods[0]
    patients = [runner.patients[i] for i in results[reference].instance_ids]
    contingencies = tuple(
        (reference, other, contingency(results[reference].probabilities, results[other].probabilities,
                                       labels, patient_ids=patients))
        for other in config.methods if other != reference
    )

    instances = tuple(runner.labeled)
    top_partner = _comparison_partner(config.methods, reference, "snapshot")
    top: Tuple[TopDifference, ...] = ()
    if top_partner:
        top = tuple(top_differences(results[reference].probabilities, results[top_partner].probabilities,
                                    instances, k=TOP_K))

    strata_partner = _comparison_partner(config.methods, reference, "global")
    strata = None
    if strata_partner:
        strata = length_stratified(results[reference].probabilities, results[strata_partner].probabilities,
                                   labels, [i.length for i in instances])

    return EvalReport(
        config=config,
        summary=summarize_cohort(cohort),
        instances=instances,
        results=results,
        tests=tests,
        contingencies=contingencies,
        top_pair=(reference, top_partner) if top_partner else None,
        top=top,
        strata_pair=(reference, strata_partner) if strata_partner else None,
        strata=strata,
        fingerprint=fingerprint,
    )
