import numpy as np
import pytest

from habclust.cohort import Cohort, PatientScan, SurvivalRecord, default_synth_spec, generate_synthetic


def cohorts_equal(a: Cohort, b: Cohort) -> bool:
    if a.modality_names != b.modality_names or a.n_patients != b.n_patients:
        return False
    for sa, sb in zip(a.scans, b.scans):
        if sa.patient_id != sb.patient_id or sa.image_dims != tuple(sb.image_dims):
            return False
        if not np.array_equal(sa.pixel_values, sb.pixel_values):
            return False
        if not np.array_equal(sa.pixel_coords, sb.pixel_coords):
            return False
    for ra, rb in zip(a.survival, b.survival):
        if (ra.patient_id, ra.time, ra.event) != (rb.patient_id, rb.time, rb.event):
            return False
    return True


def tiny_cohort(n_patients=3, n_pixels=5, modalities=("m1", "m2"), seed=0) -> Cohort:
    """Hand-sized cohort with dense deterministic values for unit tests."""
    rng = np.random.default_rng(seed)
    scans, recs = [], []
    for i in range(n_patients):
        pid = f"t{i}"
        coords = np.column_stack([np.arange(n_pixels), np.zeros(n_pixels, dtype=int)])
        values = rng.normal(0, 1, (n_pixels, len(modalities)))
        scans.append(PatientScan(pid, values, coords, (n_pixels, 4)))
        recs.append(SurvivalRecord(pid, float(i + 1), bool(i % 2 == 0)))
    return Cohort(scans, recs, list(modalities))


@pytest.fixture(scope="session")
def planted_cohort():
    spec = default_synth_spec(n_patients=24, n_regions=4, image_dims=(28, 28), seed=11)
    cohort, truth = generate_synthetic(spec)
    return cohort, truth
