import numpy as np
import pytest

from patsim.cohort import Cohort, PatientRecord, Visit

TOY_MONTHS = (0, 12, 24, 36, 48, 84)


def make_patient(patient_id, visits):
    """Build a PatientRecord from (month, diagnosis, mri[, pet]) tuples"""
    records = []
    for visit in visits:
        month, diagnosis, mri = visit[:3]
        features = {"MRI": mri}
        if len(visit) > 3 and visit[3] is not None:
            features["PET"] = visit[3]
        records.append(Visit(month=month, features_by_modality=features, diagnosis=diagnosis))
    return PatientRecord(patient_id=patient_id, visits=tuple(records))


def toy_patients(n_patients=12, seed=0, with_pet=True):
    """
    Half progressors (AD from month 36), half stable; every patient has six visits, so
    instances end at visits 3..6 and the first three of them are labeled.
    Progressors decline in MRI, stable patients stay flat; every other patient has PET.
    """
    rng = np.random.default_rng(seed)
    patients = []
    for k in range(n_patients):
        progressor = k % 2 == 0
        offset = rng.normal(0.0, 0.2, size=2)
        visits = []
        for v, month in enumerate(TOY_MONTHS):
            stage = 0.02 * month if progressor else 0.1
            mri = offset - stage + rng.normal(0.0, 0.05, size=2)
            pet = None
            if with_pet and k % 4 < 2:
                pet = [stage + rng.normal(0.0, 0.05)]
            diagnosis = "AD" if progressor and month >= 36 else "MCI"
            visits.append((month, diagnosis, mri.tolist(), pet))
        patients.append(make_patient(f"T{k:02d}", visits))
    return patients


@pytest.fixture
def toy_cohort():
    return Cohort.from_patients(toy_patients())


@pytest.fixture
def mri_only_cohort():
    return Cohort.from_patients(toy_patients(with_pet=False))
