"""
Patient, visit and instance data types, instance expansion and horizon labels
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

DEFAULT_HORIZON = 36
MIN_INSTANCE_VISITS = 3


class CohortError(ValueError):
    """Raised for malformed patient records, cohorts or cohort files"""


class Diagnosis(str, Enum):
    """Clinical diagnosis assigned at a visit"""

    MCI = "MCI"
    AD = "AD"

    @classmethod
    def parse(cls, value: str) -> "Diagnosis":
        """Parse a diagnosis string ("MCI", "AD" or "probable-AD")"""
        if isinstance(value, cls):
            return value
        normalized = str(value).strip().upper()
        if normalized in ("AD", "PROBABLE-AD", "PROBABLE_AD"):
            return cls.AD
        if normalized == "MCI":
            return cls.MCI
        raise CohortError(f"Unknown diagnosis: {value!r}")


@dataclass(frozen=True)
class Visit:
    """One examination: month since enrollment, biomarkers per modality and diagnosis"""

    month: int
    features_by_modality: Mapping[str, Tuple[float, ...]]
    diagnosis: Diagnosis

    def __post_init__(self):
        if self.month < 0:
            raise CohortError(f"Visit month must be non-negative, got {self.month}")
        features = {
            modality: tuple(float(x) for x in vector)
            for modality, vector in self.features_by_modality.items()
        }
        for modality, vector in features.items():
            if not vector:
                raise CohortError(f"Empty feature vector for modality {modality}")
        object.__setattr__(self, "features_by_modality", features)
        object.__setattr__(self, "diagnosis", Diagnosis.parse(self.diagnosis))

    def has(self, modality: str) -> bool:
        """Check whether the modality was measured at this visit"""
        return modality in self.features_by_modality

    def vector(self, modality: str) -> Optional[np.ndarray]:
        """Feature vector for a modality, or None when the modality is absent"""
        values = self.features_by_modality.get(modality)
        if values is None:
            return None
        return np.asarray(values, dtype=float)


@dataclass(frozen=True)
class PatientRecord:
    """A patient's visits ordered by time"""

    patient_id: str
    visits: Tuple[Visit, ...]

    def __post_init__(self):
        visits = tuple(self.visits)
        object.__setattr__(self, "visits", visits)
        if not visits:
            raise CohortError(f"Patient {self.patient_id} has no visits")

        months = [visit.month for visit in visits]
        if any(later <= earlier for earlier, later in zip(months, months[1:])):
            raise CohortError(f"Visit months of patient {self.patient_id} are not strictly increasing: {months}")

        # Per-modality dimension must not change between visits
        dims: Dict[str, int] = {}
        for visit in visits:
            for modality, vector in visit.features_by_modality.items():
                expected = dims.setdefault(modality, len(vector))
                if expected != len(vector):
                    raise CohortError(
                        f"Patient {self.patient_id}: modality {modality} has dimension "
                        f"{len(vector)} at month {visit.month}, expected {expected}"
                    )

    @property
    def n_visits(self) -> int:
        return len(self.visits)

    @property
    def months(self) -> List[int]:
        return [visit.month for visit in self.visits]

    def modality_dims(self) -> Dict[str, int]:
        """Feature dimension of every modality seen for this patient"""
        dims: Dict[str, int] = {}
        for visit in self.visits:
            for modality, vector in visit.features_by_modality.items():
                dims.setdefault(modality, len(vector))
        return dims


@dataclass(frozen=True)
class Instance:
    """A prefix of a patient's visits with one horizon label (None = censored)"""

    instance_id: str
    patient_id: str
    visits: Tuple[Visit, ...]
    end_visit_index: int
    label: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "visits", tuple(self.visits))
        if len(self.visits) < MIN_INSTANCE_VISITS:
            raise CohortError(f"Instance {self.instance_id} has fewer than {MIN_INSTANCE_VISITS} visits")
        if len(self.visits) != self.end_visit_index:
            raise CohortError(f"Instance {self.instance_id} length does not match its end visit index")
        if self.label not in (None, 0, 1):
            raise CohortError(f"Instance {self.instance_id} has a non-binary label {self.label!r}")

    @property
    def length(self) -> int:
        return len(self.visits)

    @property
    def months(self) -> List[int]:
        return [visit.month for visit in self.visits]

    @property
    def is_labeled(self) -> bool:
        return self.label is not None

    def has_modality(self, modality: str) -> bool:
        """A modality is usable only when it is present at every visit of the prefix"""
        return all(visit.has(modality) for visit in self.visits)

    def series(self, modality: str) -> Optional[np.ndarray]:
        """(length, d) array for a modality, or None when any visit lacks it"""
        if not self.has_modality(modality):
            return None
        return np.vstack([visit.vector(modality) for visit in self.visits])


def make_instance_id(patient_id: str, end_visit_index: int) -> str:
    return f"{patient_id}:{end_visit_index}"


def horizon_label(patient: PatientRecord, end_visit_index: int, horizon: int = DEFAULT_HORIZON) -> Optional[int]:
    """
    Label the prefix ending at a 1-based visit index

    Args:
        patient: Source patient record
        end_visit_index: 1-based index v of the last visit in the prefix
        horizon: Prediction horizon in months

    Returns:
        1 if an AD diagnosis is observed in (t_v, t_v + horizon], 0 if the patient is observed
        as MCI at some visit with month >= t_v + horizon, None when neither is decidable
    """
    end_month = patient.visits[end_visit_index - 1].month
    boundary = end_month + horizon
    later = patient.visits[end_visit_index:]

    # Closed interval: progression exactly at the boundary counts
    if any(visit.diagnosis is Diagnosis.AD and end_month < visit.month <= boundary for visit in later):
        return 1
    if any(visit.diagnosis is Diagnosis.MCI and visit.month >= boundary for visit in later):
        return 0
    return None


def expand_instances(patient: PatientRecord, horizon: int = DEFAULT_HORIZON) -> List[Instance]:
    """One instance per visit index v in 3..V_p; patients with fewer visits yield nothing"""
    instances = []
    for v in range(MIN_INSTANCE_VISITS, patient.n_visits + 1):
        instances.append(Instance(
            instance_id=make_instance_id(patient.patient_id, v),
            patient_id=patient.patient_id,
            visits=patient.visits[:v],
            end_visit_index=v,
            label=horizon_label(patient, v, horizon),
        ))
    return instances


def snapshot_features(instance: Instance, modality: str) -> Optional[np.ndarray]:
    """Final-visit feature vector; None marks a modality missing at the final visit"""
    return instance.visits[-1].vector(modality)


def labels_monotone(instances: Sequence[Instance]) -> bool:
    """Check that labeled instances of one patient never go from 1 back to 0"""
    seen_positive = False
    for instance in sorted(instances, key=lambda x: x.end_visit_index):
        if instance.label is None:
            continue
        if instance.label == 1:
            seen_positive = True
        elif seen_positive:
            return False
    return True


@dataclass(frozen=True)
class Cohort:
    """Patients plus their expanded instances"""

    patients: Tuple[PatientRecord, ...]
    instances: Tuple[Instance, ...]
    horizon: int = DEFAULT_HORIZON
    _patient_index: Dict[str, PatientRecord] = field(default=None, repr=False, compare=False)
    _instance_index: Dict[str, Instance] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "patients", tuple(self.patients))
        object.__setattr__(self, "instances", tuple(self.instances))

        patient_index: Dict[str, PatientRecord] = {}
        for patient in self.patients:
            if patient.patient_id in patient_index:
                raise CohortError(f"Duplicate patient id {patient.patient_id}")
            patient_index[patient.patient_id] = patient

        instance_index: Dict[str, Instance] = {}
        seen_keys = set()
        for instance in self.instances:
            if instance.patient_id not in patient_index:
                raise CohortError(f"Instance {instance.instance_id} refers to unknown patient {instance.patient_id}")
            key = (instance.patient_id, instance.end_visit_index)
            if key in seen_keys or instance.instance_id in instance_index:
                raise CohortError(f"Duplicate instance {instance.instance_id}")
            seen_keys.add(key)
            instance_index[instance.instance_id] = instance

        # Modality dimensions must agree across the whole cohort
        dims: Dict[str, int] = {}
        for patient in self.patients:
            for modality, dim in patient.modality_dims().items():
                expected = dims.setdefault(modality, dim)
                if expected != dim:
                    raise CohortError(
                        f"Modality {modality} has dimension {dim} for patient {patient.patient_id}, expected {expected}"
                    )

        object.__setattr__(self, "_patient_index", patient_index)
        object.__setattr__(self, "_instance_index", instance_index)

    @classmethod
    def from_patients(cls, patients: Iterable[PatientRecord], horizon: int = DEFAULT_HORIZON) -> "Cohort":
        """Build a cohort by expanding every patient into instances"""
        patients = sorted(patients, key=lambda p: p.patient_id)
        instances = [instance for patient in patients for instance in expand_instances(patient, horizon)]
        return cls(patients=tuple(patients), instances=tuple(instances), horizon=horizon)

    def patient(self, patient_id: str) -> PatientRecord:
        try:
            return self._patient_index[patient_id]
        except KeyError:
            raise CohortError(f"Unknown patient {patient_id}") from None

    def instance(self, instance_id: str) -> Instance:
        try:
            return self._instance_index[instance_id]
        except KeyError:
            raise CohortError(f"Unknown instance {instance_id}") from None

    def labeled_instances(self) -> List[Instance]:
        """Instances with a decidable label, in cohort order"""
        return [instance for instance in self.instances if instance.is_labeled]

    def instances_of(self, patient_id: str) -> List[Instance]:
        return [instance for instance in self.instances if instance.patient_id == patient_id]

    def modality_dims(self) -> Dict[str, int]:
        dims: Dict[str, int] = {}
        for patient in self.patients:
            for modality, dim in patient.modality_dims().items():
                dims.setdefault(modality, dim)
        return dims

    def modalities(self) -> List[str]:
        """Modalities in canonical order: MRI first, PET second, others alphabetical"""
        return order_modalities(self.modality_dims())


def order_modalities(modalities: Iterable[str]) -> List[str]:
    priority = {"MRI": 0, "PET": 1}
    return sorted(set(modalities), key=lambda m: (priority.get(m, 2), m))


# Line-delimited cohort files

def _visit_record(patient_id: str, visit: Visit) -> Dict:
    return {
        "patient_id": patient_id,
        "month": int(visit.month),
        "diagnosis": visit.diagnosis.value,
        "features": {
            modality: [float(x) for x in visit.features_by_modality[modality]]
            for modality in order_modalities(visit.features_by_modality)
        },
    }


def cohort_lines(patients: Iterable[PatientRecord]) -> List[str]:
    """Serialize patients as one JSON record per visit, ordered by patient id then month"""
    lines = []
    for patient in sorted(patients, key=lambda p: p.patient_id):
        for visit in patient.visits:
            lines.append(json.dumps(_visit_record(patient.patient_id, visit)))
    return lines


def write_cohort(cohort: Union[Cohort, Sequence[PatientRecord]], path: Union[str, Path]):
    """Write a cohort (or bare patient list) in the ingestion format"""
    patients = cohort.patients if isinstance(cohort, Cohort) else cohort
    lines = cohort_lines(patients)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(line + "\n")
    logger.info(f"Wrote {len(lines)} visit records to {path}")


def parse_cohort_lines(lines: Iterable[str], horizon: int = DEFAULT_HORIZON, source: str = "<input>") -> Cohort:
    """Parse JSONL visit records into a cohort"""
    by_patient: Dict[str, List[Visit]] = {}
    for line_number, raw in enumerate(lines, start=1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            record = json.loads(raw)
            patient_id = str(record["patient_id"])
            month = record["month"]
            if isinstance(month, bool) or int(month) != month:
                raise CohortError(f"month must be an integer, got {month!r}")
            features = record.get("features") or {}
            if not isinstance(features, dict):
                raise CohortError("features must be an object keyed by modality")
            visit = Visit(
                month=int(month),
                features_by_modality={str(k): v for k, v in features.items() if v is not None},
                diagnosis=record["diagnosis"],
            )
        except CohortError as e:
            raise CohortError(f"{source}:{line_number}: {e}") from None
        except (KeyError, TypeError, ValueError) as e:
            raise CohortError(f"{source}:{line_number}: malformed visit record ({e})") from None
        by_patient.setdefault(patient_id, []).append(visit)

    patients = []
    for patient_id, visits in by_patient.items():
        visits.sort(key=lambda v: v.month)
        patients.append(PatientRecord(patient_id=patient_id, visits=tuple(visits)))

    cohort = Cohort.from_patients(patients, horizon)
    logger.info(f"Loaded {len(cohort.patients)} patients, {len(cohort.instances)} instances from {source}")
    return cohort


def read_cohort(path: Union[str, Path], horizon: int = DEFAULT_HORIZON) -> Cohort:
    """Read a cohort file in the ingestion format"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_cohort_lines(f, horizon=horizon, source=str(path))
    except OSError as e:
        raise CohortError(f"Cannot read cohort file {path}: {e}") from None


def cohort_fingerprint(cohort: Cohort) -> str:
    """Content hash of the cohort (visits + horizon), used to key cached matrices"""
    digest = hashlib.sha256()
    digest.update(f"horizon={cohort.horizon}\n".encode())
    for line in cohort_lines(cohort.patients):
        digest.update(line.encode())
        digest.update(b"\n")
    return digest.hexdigest()


def summarize_cohort(cohort: Cohort) -> Dict:
    """
    Summary statistics of a cohort

    Returns:
        Dictionary with visit-count histogram, median visits, share of patients with 4+ visits,
        per-visit PET availability, instance counts and label prevalence
    """
    visit_counts = pd.Series([p.n_visits for p in cohort.patients], dtype="int64")
    visits = [visit for patient in cohort.patients for visit in patient.visits]
    labels = pd.Series([i.label for i in cohort.labeled_instances()], dtype="float64")

    pet_available = float(np.mean([visit.has("PET") for visit in visits])) if visits else 0.0
    histogram = {int(k): int(v) for k, v in visit_counts.value_counts().sort_index().items()}

    return {
        "patients": len(cohort.patients),
        "visits": len(visits),
        "visit_histogram": histogram,
        "median_visits": float(visit_counts.median()) if len(visit_counts) else 0.0,
        "share_4plus_visits": float((visit_counts >= 4).mean()) if len(visit_counts) else 0.0,
        "pet_availability": pet_available,
        "instances": len(cohort.instances),
        "labeled_instances": int(labels.size),
        "censored_instances": len(cohort.instances) - int(labels.size),
        "positive_instances": int(labels.sum()) if labels.size else 0,
        "prevalence": float(labels.mean()) if labels.size else 0.0,
    }
