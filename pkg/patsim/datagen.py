"""
Seeded synthetic cohorts with heterogeneous progression, irregular visits and block-missing PET
"""

import logging
from dataclasses import dataclass, replace
from typing import List, Tuple

import numpy as np

from .cohort import DEFAULT_HORIZON, Cohort, Diagnosis, PatientRecord, Visit

logger = logging.getLogger(__name__)

# P(V = 2..9): median 3, about 32% of patients with 4 or more visits
VISIT_COUNT_PROBS = (0.28, 0.40, 0.12, 0.07, 0.05, 0.04, 0.02, 0.02)
MIN_VISITS = 2
MONTH_GRID = (6, 12, 18, 24, 36, 48, 60, 72, 84, 96, 108)

PET_PATTERNS = ("per_patient", "per_visit")
FEATURE_MODELS = ("stage_level", "decline")
AD_STAGE = 1.0


class GeneratorError(ValueError):
    """Raised for infeasible generator parameters"""


@dataclass(frozen=True)
class GeneratorConfig:
    """
    Parameters of the synthetic cohort

    Each patient enters at a latent stage s0 ~ U(0, enrollment_stage_max) and advances linearly:
    progressors cross the AD threshold (stage 1) within progression_years of stage 0, stable
    patients drift by at most stable_rate_max per year. Biomarkers follow the stage through
    feature_model; PET is present for a pet_probability share of patients (per_patient) or of
    visits (per_visit).
    """

    n_patients: int = 300
    seed: int = 0
    horizon: int = DEFAULT_HORIZON
    visit_probs: Tuple[float, ...] = VISIT_COUNT_PROBS
    month_grid: Tuple[int, ...] = MONTH_GRID
    pet_probability: float = 0.35
    pet_pattern: str = "per_patient"
    progressor_fraction: float = 0.45
    progression_years: Tuple[float, float] = (3.0, 8.0)
    stable_rate_max: float = 0.05
    enrollment_stage_max: float = 0.8
    feature_model: str = "stage_level"
    slope_separation: float = 1.0
    noise: float = 0.1
    offset_sd: float = 0.25
    knee: float = 0.4
    mri_dim: int = 3
    pet_dim: int = 2

    def __post_init__(self):
        if self.n_patients < 0:
            raise GeneratorError(f"n_patients must be non-negative, got {self.n_patients}")
        probs = np.asarray(self.visit_probs, dtype=float)
        if probs.size == 0 or (probs < 0).any() or not np.isclose(probs.sum(), 1.0):
            raise GeneratorError("visit_probs must be non-negative and sum to 1")
        max_visits = MIN_VISITS + len(probs) - 1
        if len(self.month_grid) < max_visits - 1:
            raise GeneratorError(f"month_grid has {len(self.month_grid)} slots, too few for {max_visits} visits")
        if any(m <= 0 for m in self.month_grid) or len(set(self.month_grid)) != len(self.month_grid):
            raise GeneratorError("month_grid must hold distinct positive months")
        for name in ("pet_probability", "progressor_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise GeneratorError(f"{name} must lie in [0, 1], got {value}")
        low, high = self.progression_years
        if not 0 < low <= high:
            raise GeneratorError(f"progression_years must satisfy 0 < low <= high, got {self.progression_years}")
        if not 0.0 <= self.enrollment_stage_max < AD_STAGE:
            raise GeneratorError("enrollment_stage_max must lie in [0, 1)")
        if min(self.stable_rate_max, self.noise, self.offset_sd, self.slope_separation) < 0:
            raise GeneratorError("Rates, noise and separation must be non-negative")
        if self.pet_pattern not in PET_PATTERNS:
            raise GeneratorError(f"pet_pattern must be one of {', '.join(PET_PATTERNS)}")
        if self.feature_model not in FEATURE_MODELS:
            raise GeneratorError(f"feature_model must be one of {', '.join(FEATURE_MODELS)}")
        if self.mri_dim < 1 or self.pet_dim < 1:
            raise GeneratorError("Modality dimensions must be positive")


def _loadings(dim: int) -> np.ndarray:
    return np.linspace(1.0, 0.6, dim)


def _visit_months(config: GeneratorConfig, rng: np.random.Generator) -> List[int]:
    n_visits = MIN_VISITS + int(rng.choice(len(config.visit_probs), p=config.visit_probs))
    follow_ups = rng.choice(config.month_grid, size=n_visits - 1, replace=False)
    return [0] + sorted(int(m) for m in follow_ups)


def _biomarkers(config: GeneratorConfig, stage: np.ndarray, offsets: np.ndarray, loadings: np.ndarray,
                sign: float, rng: np.random.Generator) -> np.ndarray:
    """(visits, dim) biomarkers; sign -1 for atrophy-like markers, +1 for uptake-like markers"""
    if config.feature_model == "stage_level":
        signal = stage[:, None] * loadings[None, :]
    else:
        # Flat until the knee, then a decline whose steepness tracks the progression rate
        decline = np.maximum(stage - config.knee, 0.0)
        signal = 1.5 * config.slope_separation * decline[:, None] * loadings[None, :]
    noise = rng.normal(0.0, config.noise, size=signal.shape)
    return offsets[None, :] + sign * signal + noise


def _patient(config: GeneratorConfig, index: int, rng: np.random.Generator) -> PatientRecord:
    months = np.array(_visit_months(config, rng))
    progressor = rng.random() < config.progressor_fraction
    stage0 = rng.uniform(0.0, config.enrollment_stage_max)
    if progressor:
        rate = 1.0 / rng.uniform(*config.progression_years)
    else:
        rate = rng.uniform(0.0, config.stable_rate_max)
    stage = stage0 + rate * months / 12.0

    mri = _biomarkers(config, stage, rng.normal(0.0, config.offset_sd, config.mri_dim),
                      _loadings(config.mri_dim), -1.0, rng)
    pet = _biomarkers(config, stage, rng.normal(0.0, config.offset_sd, config.pet_dim),
                      _loadings(config.pet_dim), 1.0, rng)

    if config.pet_pattern == "per_patient":
        has_pet = np.full(len(months), rng.random() < config.pet_probability)
    else:
        has_pet = rng.random(len(months)) < config.pet_probability

    visits = []
    for k, month in enumerate(months):
        features = {"MRI": tuple(mri[k])}
        if has_pet[k]:
            features["PET"] = tuple(pet[k])
        diagnosis = Diagnosis.AD if stage[k] >= AD_STAGE else Diagnosis.MCI
        visits.append(Visit(month=int(month), features_by_modality=features, diagnosis=diagnosis))
    return PatientRecord(patient_id=f"P{index:04d}", visits=tuple(visits))


def generate(config: GeneratorConfig = GeneratorConfig()) -> Cohort:
    """Draw a cohort; identical configs (seed included) give identical cohorts"""
    rng = np.random.default_rng(config.seed)
    patients = [_patient(config, index, rng) for index in range(config.n_patients)]
    cohort = Cohort.from_patients(patients, horizon=config.horizon)
    logger.info(
        f"Generated {len(patients)} patients ({config.feature_model}, seed={config.seed}), "
        f"{len(cohort.labeled_instances())} labeled instances"
    )
    return cohort


def planted_signal_cohort(config: GeneratorConfig = GeneratorConfig()) -> Cohort:
    """
    Cohort whose label signal lives in the recent decline of the biomarkers rather than their level

    Patient offsets keep final-visit values overlapping between classes; slope_separation = 0
    removes any dependence of the features on the labels.
    """
    return generate(replace(config, feature_model="decline"))
