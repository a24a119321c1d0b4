"""Multi-modal pixel cohorts: data model, filtering, synthesis and disk I/O.

A cohort is a set of patients, each carrying a matrix of in-mask pixel
intensities (rows = pixels, columns = modalities) plus a right-censored
survival record. Everything downstream (representation learning, pixel
clustering, texture features, risk grouping) consumes this structure.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

FLOAT_FMT = "%.17g"  # shortest exact round-trip for float64


class CohortIOError(Exception):
    """Base class for cohort file problems."""


class MalformedManifestError(CohortIOError):
    pass


class MissingPatientFileError(CohortIOError):
    pass


class ModalityMismatchError(CohortIOError):
    pass


@dataclass(eq=False)
class PatientScan:
    """In-mask pixels of one patient: values (n_pixels x M) and grid coords."""

    patient_id: str
    pixel_values: np.ndarray  # (n_pixels, M) float64
    pixel_coords: np.ndarray  # (n_pixels, 2) int, (row, col)
    image_dims: tuple[int, int]  # (height, width)

    def __post_init__(self):
        self.pixel_values = np.ascontiguousarray(self.pixel_values, dtype=np.float64)
        self.pixel_coords = np.ascontiguousarray(self.pixel_coords, dtype=np.int64)
        if self.pixel_values.ndim != 2:
            raise ValueError(f"pixel_values must be 2-D, got {self.pixel_values.ndim}-D")
        if self.pixel_coords.shape != (self.pixel_values.shape[0], 2):
            raise ValueError(
                f"patient {self.patient_id}: {self.pixel_values.shape[0]} pixel rows "
                f"but coords shape {self.pixel_coords.shape}"
            )
        if not np.all(np.isfinite(self.pixel_values)):
            raise ValueError(f"patient {self.patient_id}: non-finite pixel values")
        h, w = self.image_dims
        r, c = self.pixel_coords[:, 0], self.pixel_coords[:, 1]
        if len(r) and (r.min() < 0 or c.min() < 0 or r.max() >= h or c.max() >= w):
            raise ValueError(f"patient {self.patient_id}: pixel coords outside {self.image_dims}")

    @property
    def n_pixels(self) -> int:
        return self.pixel_values.shape[0]


@dataclass(frozen=True)
class SurvivalRecord:
    patient_id: str
    time: float  # days
    event: bool  # True = death observed, False = censored

    def __post_init__(self):
        if not (self.time > 0):
            raise ValueError(f"patient {self.patient_id}: survival time must be > 0")


@dataclass(eq=False)
class Cohort:
    scans: list[PatientScan]
    survival: list[SurvivalRecord]
    modality_names: list[str]

    def __post_init__(self):
        m = len(self.modality_names)
        for scan in self.scans:
            if scan.pixel_values.shape[1] != m:
                raise ValueError(
                    f"patient {scan.patient_id}: {scan.pixel_values.shape[1]} modality "
                    f"columns, cohort declares {m}"
                )
        scan_ids = [s.patient_id for s in self.scans]
        surv_ids = [s.patient_id for s in self.survival]
        if sorted(scan_ids) != sorted(surv_ids):
            raise ValueError("survival records do not match scans one-to-one by patient_id")
        if len(set(scan_ids)) != len(scan_ids):
            raise ValueError("duplicate patient ids")

    @property
    def n_patients(self) -> int:
        return len(self.scans)

    @property
    def n_modalities(self) -> int:
        return len(self.modality_names)

    def survival_for(self, patient_id: str) -> SurvivalRecord:
        for rec in self.survival:
            if rec.patient_id == patient_id:
                return rec
        raise KeyError(patient_id)


def pooled_pixels(cohort: Cohort) -> np.ndarray:
    """All pixel rows of all patients stacked, in scan order."""
    if not cohort.scans:
        raise ValueError("empty cohort")
    return np.concatenate([s.pixel_values for s in cohort.scans], axis=0)


def patient_slices(cohort: Cohort) -> list[slice]:
    """Row ranges of each patient inside pooled_pixels(cohort)."""
    slices, start = [], 0
    for scan in cohort.scans:
        slices.append(slice(start, start + scan.n_pixels))
        start += scan.n_pixels
    return slices


def _rebuild(cohort: Cohort, pooled: np.ndarray) -> Cohort:
    scans = []
    for scan, sl in zip(cohort.scans, patient_slices(cohort)):
        scans.append(
            PatientScan(scan.patient_id, pooled[sl].copy(), scan.pixel_coords.copy(), scan.image_dims)
        )
    return Cohort(scans, list(cohort.survival), list(cohort.modality_names))


# ---------------------------------------------------------------------------
# filtering / normalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModalityStats:
    """Per-modality winsorization bounds and standardization statistics.

    Storing both lets a held-out cohort be pushed through the exact
    transformation fitted on training data, with no refitting.
    """

    clip_lo: tuple[float, ...]
    clip_hi: tuple[float, ...]
    mean: tuple[float, ...]
    std: tuple[float, ...]


def quantile_filter(cohort: Cohort, gamma: float) -> Cohort:
    """Winsorize each modality into its central `gamma` quantile mass.

    Quantiles are computed over all pixels of all patients pooled, with
    linear interpolation on the sorted sample; values are clipped, never
    removed, so pixel grids stay intact for texture extraction.
    """
    lo, hi = quantile_bounds(cohort, gamma)
    pooled = np.clip(pooled_pixels(cohort), lo, hi)
    return _rebuild(cohort, pooled)


def quantile_bounds(cohort: Cohort, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    if not (0.0 <= gamma <= 1.0):
        raise ValueError(f"gamma must be in [0,1], got {gamma}")
    pooled = pooled_pixels(cohort)
    lo = np.quantile(pooled, (1.0 - gamma) / 2.0, axis=0)
    hi = np.quantile(pooled, (1.0 + gamma) / 2.0, axis=0)
    return lo, hi


def standardize(cohort: Cohort) -> tuple[Cohort, ModalityStats]:
    """Scale every modality to pooled mean 0 / population stddev 1.

    Returns the fitted statistics so held-out cohorts can be transformed
    identically (see apply_stats).
    """
    pooled = pooled_pixels(cohort)
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)  # population (1/N)
    for m, s in enumerate(std):
        if s == 0.0:
            raise ValueError(f"modality '{cohort.modality_names[m]}' has zero pooled variance")
    stats = ModalityStats(
        clip_lo=tuple(np.full(len(mean), -np.inf)),
        clip_hi=tuple(np.full(len(mean), np.inf)),
        mean=tuple(mean),
        std=tuple(std),
    )
    return apply_stats(cohort, stats), stats


def apply_stats(cohort: Cohort, stats: ModalityStats) -> Cohort:
    """Clip to stored bounds, then shift/scale with stored mean and stddev."""
    pooled = pooled_pixels(cohort)
    lo = np.asarray(stats.clip_lo)
    hi = np.asarray(stats.clip_hi)
    pooled = np.clip(pooled, lo, hi)
    pooled = (pooled - np.asarray(stats.mean)) / np.asarray(stats.std)
    return _rebuild(cohort, pooled)


def fit_modality_stats(cohort: Cohort, gamma: float) -> tuple[Cohort, ModalityStats]:
    """Winsorize at `gamma` and standardize in one pass, keeping the clip
    bounds inside the returned stats so the identical transform can be
    replayed on held-out data."""
    lo, hi = quantile_bounds(cohort, gamma)
    filtered, std_stats = standardize(quantile_filter(cohort, gamma))
    stats = ModalityStats(
        clip_lo=tuple(lo), clip_hi=tuple(hi), mean=std_stats.mean, std=std_stats.std
    )
    return filtered, stats


# ---------------------------------------------------------------------------
# synthetic cohorts
# ---------------------------------------------------------------------------


@dataclass
class SynthSpec:
    """Generator settings for a synthetic cohort with planted pixel regions.

    Each patient gets a random blob mask split into `n_regions_true`
    contiguous regions; pixel intensities come from per-region Gaussians and
    survival from an exponential clock whose rate is softplus(hazard_weights
    . region_proportions). Censoring truncates a fraction of the records.
    """

    n_patients: int
    n_regions_true: int
    image_dims: tuple[int, int]
    region_means: np.ndarray  # (n_regions_true, M)
    region_stddevs: np.ndarray  # (n_regions_true, M)
    hazard_weights: np.ndarray  # (n_regions_true,)
    censoring_rate: float = 0.0
    seed: int = 0
    modality_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        self.region_means = np.atleast_2d(np.asarray(self.region_means, dtype=np.float64))
        self.region_stddevs = np.atleast_2d(np.asarray(self.region_stddevs, dtype=np.float64))
        self.hazard_weights = np.asarray(self.hazard_weights, dtype=np.float64)
        if self.n_regions_true < 2:
            raise ValueError("need at least 2 planted regions")
        if self.region_means.shape != self.region_stddevs.shape:
            raise ValueError("region_means and region_stddevs shapes differ")
        if self.region_means.shape[0] != self.n_regions_true:
            raise ValueError("region_means rows must equal n_regions_true")
        if np.any(self.region_stddevs <= 0):
            raise ValueError("region stddevs must be positive")
        if self.hazard_weights.shape != (self.n_regions_true,):
            raise ValueError("hazard_weights length must equal n_regions_true")
        if not (0.0 <= self.censoring_rate < 1.0):
            raise ValueError("censoring_rate must be in [0,1)")
        if self.n_patients < 1:
            raise ValueError("need at least one patient")
        if not self.modality_names:
            self.modality_names = tuple(f"m{i+1}" for i in range(self.region_means.shape[1]))

    @property
    def n_modalities(self) -> int:
        return self.region_means.shape[1]


def default_synth_spec(n_patients: int, n_regions: int, image_dims=(32, 32), seed: int = 0,
                       censoring_rate: float = 0.2, separation: float = 10.0,
                       n_modalities: int = 3) -> SynthSpec:
    """Deterministic default spec: well-separated region means on a cyclic
    grid and hazards that decrease with region index (region 0 = worst)."""
    means = np.empty((n_regions, n_modalities))
    for r in range(n_regions):
        for m in range(n_modalities):
            means[r, m] = separation * ((r + m) % n_regions)
    stddevs = np.ones_like(means)
    hazards = np.array([6.0 - 12.0 * r / max(n_regions - 1, 1) for r in range(n_regions)])
    return SynthSpec(
        n_patients=n_patients,
        n_regions_true=n_regions,
        image_dims=image_dims,
        region_means=means,
        region_stddevs=stddevs,
        hazard_weights=hazards,
        censoring_rate=censoring_rate,
        seed=seed,
    )


def _blob_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Random smooth blob inside an (h, w) grid; boolean mask, True in-mask."""
    cy = h / 2.0 + rng.uniform(-h * 0.06, h * 0.06)
    cx = w / 2.0 + rng.uniform(-w * 0.06, w * 0.06)
    base = 0.5 * min(h, w) * rng.uniform(0.58, 0.78)
    amp = rng.uniform(-0.14, 0.14, size=3)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=3)
    yy, xx = np.mgrid[0:h, 0:w]
    ang = np.arctan2(yy - cy, xx - cx)
    radius = base * (1.0 + sum(amp[k] * np.cos((k + 1) * ang + phase[k]) for k in range(3)))
    radius = np.clip(radius, 2.0, 0.5 * min(h, w) - 1.0)
    dist = np.hypot(yy - cy, xx - cx)
    return dist <= radius


def _partition_mask(
    rng: np.random.Generator, mask: np.ndarray, n_regions: int, severity_axis: np.ndarray
) -> tuple[np.ndarray, float]:
    """Split the in-mask pixels into contiguous power-diagram regions.

    Each patient draws a severity score u in [-1, 1]; region r's cell is
    grown or shrunk by u * severity_axis[r] (power-diagram bias), so
    region proportions vary across patients along the axis tied to the
    hazard weights and the planted survival signal stays recoverable.
    Returns (labels, severity).
    """
    coords = np.argwhere(mask)
    scale = float(coords.var(axis=0).sum())  # squared-radius unit for the bias
    severity = float(rng.uniform(-1.0, 1.0))
    for _ in range(20):
        sites = coords[rng.choice(len(coords), size=n_regions, replace=False)]
        jitter = rng.uniform(-0.1, 0.1, size=n_regions)
        bias = (0.6 * severity * severity_axis + jitter) * scale
        d2 = ((coords[:, None, :] - sites[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2 - bias[None, :], axis=1)  # lowest index wins ties
        if np.unique(labels).size == n_regions:
            return labels, severity
    return labels, severity


def _severity_axis(hazard_weights: np.ndarray) -> np.ndarray:
    """Unit-scaled contrast along which region proportions drift with patient
    severity; zero when all hazard weights coincide."""
    centered = hazard_weights - hazard_weights.mean()
    peak = np.abs(centered).max()
    return centered / peak if peak > 0 else np.zeros_like(centered)


def generate_synthetic(spec: SynthSpec) -> tuple[Cohort, list[np.ndarray]]:
    """Build a cohort with planted ground truth; deterministic given the seed.

    Per-patient substreams are derived from (seed, patient index) so the
    output is independent of any parallel generation schedule.
    """
    h, w = spec.image_dims
    axis = _severity_axis(spec.hazard_weights)
    scans, records, truth = [], [], []
    for n in range(spec.n_patients):
        rng = np.random.default_rng(np.random.SeedSequence((spec.seed, n)))
        mask = _blob_mask(rng, h, w)
        while mask.sum() < 4 * spec.n_regions_true:
            mask = _blob_mask(rng, h, w)
        labels, _severity = _partition_mask(rng, mask, spec.n_regions_true, axis)
        coords = np.argwhere(mask)
        values = (
            spec.region_means[labels]
            + rng.standard_normal((len(labels), spec.n_modalities)) * spec.region_stddevs[labels]
        )
        props = np.bincount(labels, minlength=spec.n_regions_true) / len(labels)
        rate = np.logaddexp(0.0, spec.hazard_weights @ props)  # softplus
        t_event = rng.exponential(1.0 / rate)
        censored = rng.uniform() < spec.censoring_rate
        if censored:
            time = t_event * rng.uniform(0.1, 0.9)
        else:
            time = t_event
        pid = f"p{n:04d}"
        scans.append(PatientScan(pid, values, coords, spec.image_dims))
        records.append(SurvivalRecord(pid, float(time), not censored))
        truth.append(labels)
    return Cohort(scans, records, list(spec.modality_names)), truth


# ---------------------------------------------------------------------------
# patient-level splitting
# ---------------------------------------------------------------------------


def split_cohort(cohort: Cohort, fraction: float, seed: int) -> tuple[Cohort, Cohort]:
    """Patient-level split; first part gets round(fraction * N) patients."""
    if not (0.0 < fraction < 1.0):
        raise ValueError(f"fraction must be in (0,1), got {fraction}")
    n = cohort.n_patients
    if n < 2:
        raise ValueError("need at least 2 patients to split")
    n_first = int(np.floor(fraction * n + 0.5))
    if n_first == 0 or n_first == n:
        raise ValueError(f"split of {n} patients at fraction {fraction} leaves an empty part")
    perm = np.random.default_rng(seed).permutation(n)
    first_idx = set(perm[:n_first].tolist())
    surv = {r.patient_id: r for r in cohort.survival}

    def take(indices):
        scans = [cohort.scans[i] for i in indices]
        return Cohort(scans, [surv[s.patient_id] for s in scans], list(cohort.modality_names))

    return take([i for i in range(n) if i in first_idx]), take(
        [i for i in range(n) if i not in first_idx]
    )


# ---------------------------------------------------------------------------
# disk format
# ---------------------------------------------------------------------------


def write_cohort(cohort: Cohort, path: str) -> None:
    """Write manifest.json plus one pixel CSV per patient under `path`."""
    os.makedirs(path, exist_ok=True)
    patients = []
    for scan in cohort.scans:
        rec = cohort.survival_for(scan.patient_id)
        fname = f"{scan.patient_id}.csv"
        patients.append(
            {
                "patient_id": scan.patient_id,
                "pixel_file": fname,
                "image_dims": list(scan.image_dims),
                "time": float(rec.time),
                "event": bool(rec.event),
            }
        )
        with open(os.path.join(path, fname), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "col"] + list(cohort.modality_names))
            for (r, c), vals in zip(scan.pixel_coords, scan.pixel_values):
                writer.writerow([int(r), int(c)] + [FLOAT_FMT % v for v in vals])
    manifest = {"modality_names": list(cohort.modality_names), "patients": patients}
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_cohort(path: str) -> Cohort:
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise MalformedManifestError(f"no manifest.json under {path}")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        modality_names = list(manifest["modality_names"])
        entries = manifest["patients"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise MalformedManifestError(f"malformed manifest {manifest_path}: {exc}") from exc

    scans, records = [], []
    for entry in entries:
        try:
            pid = entry["patient_id"]
            fname = entry["pixel_file"]
            dims = tuple(int(d) for d in entry["image_dims"])
            rec = SurvivalRecord(pid, float(entry["time"]), bool(entry["event"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedManifestError(f"malformed patient entry in manifest: {exc}") from exc
        fpath = os.path.join(path, fname)
        if not os.path.exists(fpath):
            raise MissingPatientFileError(f"missing patient file {fpath}")
        coords, values = _read_pixel_csv(fpath, modality_names)
        scans.append(PatientScan(pid, values, coords, dims))
        records.append(rec)
    return Cohort(scans, records, modality_names)


def _read_pixel_csv(fpath: str, modality_names: list[str]) -> tuple[np.ndarray, np.ndarray]:
    with open(fpath, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["row", "col"]:
            raise MalformedManifestError(f"{fpath}: bad pixel header {header}")
        if header[2:] != list(modality_names):
            raise ModalityMismatchError(
                f"{fpath}: modality columns {header[2:]} do not match manifest {modality_names}"
            )
        coords, values = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 + len(modality_names):
                raise ModalityMismatchError(
                    f"{fpath}:{lineno}: expected {2 + len(modality_names)} fields, got {len(row)}"
                )
            try:
                coords.append((int(row[0]), int(row[1])))
                values.append([float(v) for v in row[2:]])
            except ValueError as exc:
                raise CohortIOError(f"{fpath}:{lineno}: non-numeric field ({exc})") from exc
    return (
        np.asarray(coords, dtype=np.int64).reshape(-1, 2),
        np.asarray(values, dtype=np.float64).reshape(-1, len(modality_names)),
    )
