"""
Explicit matrix factorization for imputing masked distance entries
"""

import logging
from dataclasses import dataclass, replace
from typing import List, Sequence, Tuple, Union

import numpy as np

from .similarity import DistanceMatrix, FeatureMatrix

logger = logging.getLogger(__name__)

DEFAULT_RANKS = (2, 5, 10)
DEFAULT_LAMBDAS = (0.01, 0.1, 1.0)

MaskedMatrix = Union[DistanceMatrix, FeatureMatrix, np.ndarray]


class ImputationError(ValueError):
    """Raised for infeasible ranks, fully masked rows/columns or shape mismatches"""


@dataclass(frozen=True)
class FactorModel:
    """Low-rank factors fitted to the observed entries of one matrix"""

    rank: int
    row_factors: np.ndarray
    col_factors: np.ndarray
    lam: float
    loss_trace: Tuple[float, ...]
    row_ids: Tuple[str, ...] = ()
    col_ids: Tuple[str, ...] = ()

    @property
    def shape(self) -> Tuple[int, int]:
        return self.row_factors.shape[0], self.col_factors.shape[0]

    def reconstruct(self) -> np.ndarray:
        """dot(U_i, W_j) clamped at zero (distances are non-negative)"""
        return np.maximum(self.row_factors @ self.col_factors.T, 0.0)


def _unpack(matrix: MaskedMatrix) -> Tuple[np.ndarray, np.ndarray, List[str], List[str]]:
    if isinstance(matrix, DistanceMatrix):
        return matrix.values, matrix.mask, list(matrix.row_ids), list(matrix.col_ids)
    if isinstance(matrix, FeatureMatrix):
        return matrix.values, matrix.mask, list(matrix.row_ids), matrix.column_names
    values = np.asarray(matrix, dtype=float)
    if values.ndim != 2:
        raise ImputationError(f"Expected a 2-D matrix, got shape {values.shape}")
    rows = [str(i) for i in range(values.shape[0])]
    cols = [str(j) for j in range(values.shape[1])]
    return values, ~np.isnan(values), rows, cols


def _solve_side(X: np.ndarray, M: np.ndarray, F: np.ndarray, lam: float) -> np.ndarray:
    """Ridge solve of every row factor against fixed factors F, using observed entries only"""
    rank = F.shape[1]
    weights = M.astype(float)
    # Row i's normal matrix is sum_j M_ij F_j F_j^T: one matmul against the outer products
    outer = (F[:, :, None] * F[:, None, :]).reshape(F.shape[0], rank * rank)
    A = (weights @ outer).reshape(-1, rank, rank) + lam * np.eye(rank)
    b = (X * weights) @ F
    return np.linalg.solve(A, b[..., None])[..., 0]


def _objective(X: np.ndarray, M: np.ndarray, U: np.ndarray, W: np.ndarray, lam: float) -> float:
    residual = np.where(M, X - U @ W.T, 0.0)
    return float(np.sum(residual ** 2) + lam * (np.sum(U ** 2) + np.sum(W ** 2)))


def fit_factorization(matrix: MaskedMatrix, rank: int, lam: float, max_sweeps: int = 200,
                      seed: int = 0, tol: float = 1e-10) -> FactorModel:
    """
    Fit U, W minimizing the squared error on observed entries plus lam * (|U|^2 + |W|^2)

    Args:
        matrix: DistanceMatrix, FeatureMatrix or array with NaN for missing entries
        rank: Number of latent factors
        lam: L2 regularization strength
        max_sweeps: Maximum number of alternating (rows, then columns) sweeps
        seed: Seed for the uniform [0, 0.1] factor initialization
        tol: Stop once a sweep improves the objective by less than tol (relative)

    Returns:
        FactorModel with the per-sweep objective trace (first entry = initialization)
    """
    values, mask, row_ids, col_ids = _unpack(matrix)
    n_rows, n_cols = values.shape

    if rank < 1 or rank >= min(n_rows, n_cols):
        raise ImputationError(f"Rank {rank} is infeasible for a {n_rows}x{n_cols} matrix")
    if lam <= 0:
        raise ImputationError(f"Regularization must be positive, got {lam}")

    empty_rows = np.flatnonzero(~mask.any(axis=1))
    if empty_rows.size:
        raise ImputationError(f"Row {row_ids[empty_rows[0]]} has no observed entries")
    empty_cols = np.flatnonzero(~mask.any(axis=0))
    if empty_cols.size:
        raise ImputationError(f"Column {col_ids[empty_cols[0]]} has no observed entries")

    rng = np.random.default_rng(seed)
    U = rng.uniform(0.0, 0.1, size=(n_rows, rank))
    W = rng.uniform(0.0, 0.1, size=(n_cols, rank))
    X = np.where(mask, values, 0.0)

    trace = [_objective(X, mask, U, W, lam)]
    for sweep in range(max_sweeps):
        U = _solve_side(X, mask, W, lam)
        W = _solve_side(X.T, mask.T, U, lam)
        loss = _objective(X, mask, U, W, lam)

        previous = trace[-1]
        # Exact block minimization cannot increase the objective beyond rounding
        if loss > previous * (1 + 1e-9) + 1e-12:
            raise ImputationError(f"Objective increased at sweep {sweep + 1}: {previous} -> {loss}")
        trace.append(loss)
        if previous - loss <= tol * max(previous, 1.0):
            break
    else:
        logger.debug(f"Factorization stopped at max_sweeps={max_sweeps} (rank={rank}, lam={lam})")

    return FactorModel(
        rank=rank,
        row_factors=U,
        col_factors=W,
        lam=lam,
        loss_trace=tuple(trace),
        row_ids=tuple(row_ids),
        col_ids=tuple(col_ids),
    )


def impute(matrix: MaskedMatrix, model: FactorModel) -> MaskedMatrix:
    """
    Replace masked entries with clamped reconstructions; observed entries are left untouched.
    A DistanceMatrix with matching row and column ids and a symmetric mask gets its imputed
    entries averaged with their mirror.
    """
    values, mask, row_ids, col_ids = _unpack(matrix)
    if values.shape != model.shape:
        raise ImputationError(f"Matrix shape {values.shape} does not match model shape {model.shape}")
    if model.row_ids and (tuple(row_ids) != model.row_ids or tuple(col_ids) != model.col_ids):
        raise ImputationError("Matrix ids do not match the ids the model was fitted on")

    reconstruction = model.reconstruct()
    square = isinstance(matrix, DistanceMatrix) and row_ids == col_ids
    if square and np.array_equal(mask, mask.T):
        reconstruction = (reconstruction + reconstruction.T) / 2.0

    filled = np.where(mask, values, reconstruction)

    if isinstance(matrix, DistanceMatrix):
        return replace(matrix, values=filled)
    if isinstance(matrix, FeatureMatrix):
        return replace(matrix, values=filled)
    return filled


def project_rows(model: FactorModel, rows: np.ndarray) -> np.ndarray:
    """
    Complete unseen rows against the fitted column factors

    Each row factor is ridge-solved from that row's observed entries; missing entries become
    the clamped reconstruction. Rows without any observed entry are filled with zeros.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != model.col_factors.shape[0]:
        raise ImputationError(f"Rows have {rows.shape[1]} columns, model expects {model.col_factors.shape[0]}")
    mask = ~np.isnan(rows)
    if mask.all():
        return rows.copy()
    factors = _solve_side(np.where(mask, rows, 0.0), mask, model.col_factors, model.lam)
    reconstruction = np.maximum(factors @ model.col_factors.T, 0.0)
    return np.where(mask, rows, reconstruction)


def factorization_grid(shape: Tuple[int, int], ranks: Sequence[int] = DEFAULT_RANKS,
                       lambdas: Sequence[float] = DEFAULT_LAMBDAS) -> List[Tuple[int, float]]:
    """(rank, lam) pairs feasible for a matrix of the given shape, in ascending order"""
    feasible = [r for r in sorted(set(ranks)) if 1 <= r < min(shape)]
    if not feasible:
        raise ImputationError(f"No feasible rank in {list(ranks)} for a {shape[0]}x{shape[1]} matrix")
    return [(r, float(lam)) for r in feasible for lam in sorted(set(lambdas))]


def complete_features(train_rows: np.ndarray, test_rows: np.ndarray, rank: int, lam: float, seed: int = 0,
                      max_sweeps: int = 200) -> Tuple[np.ndarray, np.ndarray, FactorModel]:
    """
    Complete a training feature block and rows held out from it with one factorization

    The factorization is fitted on the training rows and columns holding at least one observed
    entry. Training rows with nothing observed are completed like held-out rows (all zeros);
    columns no training row observes are set to zero in both blocks. The rank is capped at what
    the fitted block supports.
    """
    train_rows = np.asarray(train_rows, dtype=float)
    test_rows = np.atleast_2d(np.asarray(test_rows, dtype=float))
    if test_rows.shape[1] != train_rows.shape[1]:
        raise ImputationError(f"Held-out rows have {test_rows.shape[1]} columns, training rows {train_rows.shape[1]}")

    mask = ~np.isnan(train_rows)
    rows = mask.any(axis=1)
    cols = mask.any(axis=0)
    block = train_rows[np.ix_(rows, cols)]
    limit = min(block.shape) - 1
    if limit < 1:
        raise ImputationError(f"Observed training block {block.shape[0]}x{block.shape[1]} is too small to factorize")
    if rank > limit:
        logger.debug(f"Capping rank {rank} at {limit} for a {block.shape[0]}x{block.shape[1]} block")
        rank = limit

    model = fit_factorization(block, rank, lam, max_sweeps=max_sweeps, seed=seed)

    completed_train = np.zeros_like(train_rows)
    completed_train[np.ix_(rows, cols)] = impute(block, model)
    completed_train[np.ix_(~rows, cols)] = project_rows(model, train_rows[np.ix_(~rows, cols)])
    completed_test = np.zeros_like(test_rows)
    completed_test[:, cols] = project_rows(model, test_rows[:, cols])
    return completed_train, completed_test, model
