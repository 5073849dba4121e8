"""
L2-regularized logistic regression on distance (or snapshot) features
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

logger = logging.getLogger(__name__)

DEFAULT_C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
CUTOFF = 0.5


class ModelError(ValueError):
    """Raised for single-class training data, non-finite features or length mismatches"""


@dataclass(frozen=True)
class LogisticModel:
    """Trained weights plus the column ordering they apply to"""

    weights: np.ndarray
    bias: float
    C: float
    feature_names: Tuple[str, ...]
    objective_trace: Tuple[float, ...] = ()
    converged: bool = True

    @property
    def n_features(self) -> int:
        return len(self.weights)


def _as_labels(labels: Sequence[int]) -> np.ndarray:
    y = np.asarray(labels)
    if not np.isin(y, (0, 1)).all():
        raise ModelError("Labels must be 0 or 1")
    return np.where(y == 1, 1.0, -1.0)


def regularized_objective(params: np.ndarray, X: np.ndarray, y: np.ndarray, C: float) -> float:
    """
    0.5 * |w|^2 + C * sum(log(1 + exp(-y_i (w.x_i + b))))

    params holds the weights followed by the unregularized bias; y is in {-1, +1}.
    """
    w, b = params[:-1], params[-1]
    margins = y * (X @ w + b)
    return float(0.5 * w @ w + C * np.sum(np.logaddexp(0.0, -margins)))


def _gradient(params: np.ndarray, X: np.ndarray, y: np.ndarray, C: float) -> np.ndarray:
    w, b = params[:-1], params[-1]
    margins = y * (X @ w + b)
    # d/dm log(1 + exp(-m)) = -sigmoid(-m)
    coef = -C * y * expit(-margins)
    return np.concatenate([w + X.T @ coef, [coef.sum()]])


def _hessian_product(params: np.ndarray, vector: np.ndarray, X: np.ndarray, y: np.ndarray, C: float) -> np.ndarray:
    w, b = params[:-1], params[-1]
    p = expit(X @ w + b)
    curvature = C * p * (1.0 - p)
    direction = X @ vector[:-1] + vector[-1]
    weighted = curvature * direction
    return np.concatenate([vector[:-1] + X.T @ weighted, [weighted.sum()]])


def train(features: np.ndarray, labels: Sequence[int], C: float = 1.0, tolerance: float = 1e-6,
          max_iter: int = 500, feature_names: Optional[Sequence[str]] = None) -> LogisticModel:
    """
    Fit weights and bias with a trust-region Newton-CG solver

    Args:
        features: (n, d) matrix without missing values
        labels: n binary labels
        C: Inverse regularization strength
        tolerance: Gradient-norm stopping tolerance
        max_iter: Iteration cap; hitting it logs a warning
        feature_names: Column names recorded on the model (defaults to "f0", "f1", ...)

    Returns:
        LogisticModel (deterministic for fixed inputs)
    """
    X = np.asarray(features, dtype=float)
    if X.ndim != 2:
        raise ModelError(f"Features must be a 2-D matrix, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ModelError("Features contain missing or non-finite values")
    y = _as_labels(labels)
    if len(y) != X.shape[0]:
        raise ModelError(f"{X.shape[0]} feature rows but {len(y)} labels")
    if len(np.unique(y)) < 2:
        raise ModelError("Training labels contain a single class")
    if C <= 0:
        raise ModelError(f"C must be positive, got {C}")

    names = tuple(feature_names) if feature_names is not None else tuple(f"f{k}" for k in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise ModelError(f"{len(names)} feature names for {X.shape[1]} columns")

    x0 = np.zeros(X.shape[1] + 1)
    trace: List[float] = [regularized_objective(x0, X, y, C)]

    def record(params):
        trace.append(regularized_objective(params, X, y, C))

    result = minimize(
        regularized_objective,
        x0,
        args=(X, y, C),
        method="trust-ncg",
        jac=_gradient,
        hessp=_hessian_product,
        callback=record,
        options={"gtol": tolerance, "maxiter": max_iter},
    )
    if not result.success:
        logger.warning(f"Logistic solver did not converge (C={C}): {result.message}")

    return LogisticModel(
        weights=result.x[:-1].copy(),
        bias=float(result.x[-1]),
        C=float(C),
        feature_names=names,
        objective_trace=tuple(trace),
        converged=bool(result.success),
    )


def predict_proba(model: LogisticModel, features: np.ndarray) -> Union[float, np.ndarray]:
    """sigmoid(w.x + b) for one vector (float) or for every row of a matrix (array)"""
    x = np.asarray(features, dtype=float)
    if x.shape[-1] != model.n_features:
        raise ModelError(f"Feature vector has length {x.shape[-1]}, model expects {model.n_features}")
    probabilities = expit(x @ model.weights + model.bias)
    if x.ndim == 1:
        return float(probabilities)
    return probabilities


def top_weighted_features(model: LogisticModel, k: int = 5) -> List[Tuple[str, float]]:
    """Features with the largest absolute weight, ties in column order"""
    order = sorted(range(model.n_features), key=lambda j: (-abs(model.weights[j]), j))
    return [(model.feature_names[j], float(model.weights[j])) for j in order[:k]]


def save_model(model: LogisticModel, path: Union[str, Path]):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"# C={model.C!r}\n")
        f.write(f"bias\t{model.bias!r}\n")
        for name, weight in zip(model.feature_names, model.weights):
            f.write(f"{name}\t{float(weight)!r}\n")


def load_model(path: Union[str, Path]) -> LogisticModel:
    """Read a model written by save_model"""
    with open(path, "r", encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f if line.strip()]
    if len(lines) < 2 or not lines[0].startswith("# C="):
        raise ModelError(f"{path}: missing model header")

    try:
        C = float(lines[0][len("# C="):])
        key, bias = lines[1].split("\t")
        if key != "bias":
            raise ModelError(f"{path}: second line must hold the bias")
        names, weights = [], []
        for line in lines[2:]:
            name, weight = line.rsplit("\t", 1)
            names.append(name)
            weights.append(float(weight))
    except ValueError as e:
        raise ModelError(f"{path}: malformed model file ({e})") from None

    return LogisticModel(weights=np.array(weights), bias=float(bias), C=C, feature_names=tuple(names))
