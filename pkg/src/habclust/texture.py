"""Patient-level texture features over sub-region label maps.

Label maps are rasterized onto the image grid (background = 0, labels
shifted to 1..eta), then summarized through a co-occurrence matrix and a
run-length matrix. Five scalar features plus the per-region pixel shares
form the patient feature vector used for risk grouping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import LabelMap

DEFAULT_OFFSETS = ((0, 1), (1, 0), (1, 1), (1, -1))
DEFAULT_DIRECTIONS = ("horizontal", "vertical")


@dataclass(eq=False)
class PatientFeatureVector:
    patient_id: str
    lre: float
    rmi: float
    joint_energy: float
    run_variance: float
    run_length_nonuniformity: float
    region_proportions: np.ndarray  # (eta,), sums to 1

    FEATURE_NAMES = ("lre", "rmi", "joint_energy", "run_variance", "rln")

    def __post_init__(self):
        self.region_proportions = np.asarray(self.region_proportions, dtype=np.float64)
        if not (0.0 < self.joint_energy <= 1.0 + 1e-12):
            raise ValueError(f"joint_energy {self.joint_energy} outside (0,1]")
        if not (-1e-12 <= self.rmi <= 1.0 + 1e-12):
            raise ValueError(f"rmi {self.rmi} outside [0,1]")
        if self.lre < 1.0 - 1e-12:
            raise ValueError(f"lre {self.lre} below 1")
        if np.any(self.region_proportions < 0) or abs(self.region_proportions.sum() - 1.0) > 1e-9:
            raise ValueError("region proportions must be nonnegative and sum to 1")

    def as_array(self) -> np.ndarray:
        return np.concatenate(
            (
                [self.lre, self.rmi, self.joint_energy, self.run_variance,
                 self.run_length_nonuniformity],
                self.region_proportions,
            )
        )


def rasterize(label_map: LabelMap, image_dims: tuple[int, int]) -> np.ndarray:
    """Grid of label+1 values with 0 marking background."""
    grid = np.zeros(image_dims, dtype=np.int64)
    if label_map.labels.size:
        rows, cols = label_map.pixel_coords[:, 0], label_map.pixel_coords[:, 1]
        grid[rows, cols] = label_map.labels + 1
    return grid


def glcm(grid: np.ndarray, offsets=DEFAULT_OFFSETS, n_levels: int | None = None) -> np.ndarray:
    """Symmetrized, normalized co-occurrence matrix of in-mask level pairs."""
    if n_levels is None:
        n_levels = int(grid.max())
    matrix = np.zeros((n_levels, n_levels), dtype=np.float64)
    h, w = grid.shape
    for dr, dc in offsets:
        r0, r1 = max(0, -dr), min(h, h - dr)
        c0, c1 = max(0, -dc), min(w, w - dc)
        a = grid[r0:r1, c0:c1]
        b = grid[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        valid = (a > 0) & (b > 0)
        av, bv = a[valid] - 1, b[valid] - 1
        np.add.at(matrix, (av, bv), 1.0)
        np.add.at(matrix, (bv, av), 1.0)
    total = matrix.sum()
    if total == 0:
        raise ValueError("no co-occurring in-mask pixel pairs")
    return matrix / total


def _runs_along_rows(lines: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Maximal constant runs along axis 1; a sentinel column keeps runs from
    wrapping across row ends. Returns (levels-1, lengths) of in-mask runs."""
    sep = np.full((lines.shape[0], 1), -1, dtype=lines.dtype)
    flat = np.concatenate([lines, sep], axis=1).ravel()
    change = np.flatnonzero(np.diff(flat) != 0)
    starts = np.concatenate(([0], change + 1))
    ends = np.concatenate((change, [flat.size - 1]))
    values = flat[starts]
    keep = values > 0
    return values[keep] - 1, (ends - starts + 1)[keep]


def glrlm(grid: np.ndarray, directions=DEFAULT_DIRECTIONS, n_levels: int | None = None) -> np.ndarray:
    """Run counts: entry (i, j) = number of maximal runs of level i+1 with
    length j+1, summed over the requested directions. Runs never span
    background pixels."""
    if n_levels is None:
        n_levels = int(grid.max())
    if grid.size == 0:
        raise ValueError("empty grid")
    all_levels, all_lengths = [], []
    for direction in directions:
        if direction not in DEFAULT_DIRECTIONS:
            raise ValueError(f"unknown direction {direction!r}")
        lines = grid if direction == "horizontal" else grid.T
        levels, lengths = _runs_along_rows(np.ascontiguousarray(lines))
        all_levels.append(levels)
        all_lengths.append(lengths)
    levels = np.concatenate(all_levels)
    lengths = np.concatenate(all_lengths)
    if levels.size == 0:
        raise ValueError("no in-mask runs")
    matrix = np.zeros((n_levels, int(lengths.max())), dtype=np.float64)
    np.add.at(matrix, (levels, lengths - 1), 1.0)
    return matrix


def feature_lre(run_matrix: np.ndarray) -> float:
    """Long-run emphasis: run-count-weighted mean of squared run lengths."""
    n_r = run_matrix.sum()
    lengths = np.arange(1, run_matrix.shape[1] + 1, dtype=np.float64)
    return float((run_matrix * lengths[None, :] ** 2).sum() / n_r)


def feature_rv(run_matrix: np.ndarray) -> float:
    """Run variance: variance of run length under the normalized run counts."""
    n_r = run_matrix.sum()
    p = run_matrix / n_r
    lengths = np.arange(1, run_matrix.shape[1] + 1, dtype=np.float64)
    mu = float((p * lengths[None, :]).sum())
    return float((p * (lengths[None, :] - mu) ** 2).sum())


def feature_rln(run_matrix: np.ndarray) -> float:
    """Run-length non-uniformity: spread of run counts across lengths."""
    n_r = run_matrix.sum()
    per_length = run_matrix.sum(axis=0)
    return float((per_length**2).sum() / n_r)


def feature_joint_energy(cooc: np.ndarray) -> float:
    return float((cooc**2).sum())


def feature_rmi(cooc: np.ndarray) -> float:
    """Mutual information of the co-occurrence distribution, normalized by
    its joint entropy (natural log); 0 for a degenerate single-cell matrix."""
    p = cooc[cooc > 0]
    joint_entropy = float(-(p * np.log(p)).sum())
    if joint_entropy == 0.0:
        return 0.0
    row = cooc.sum(axis=1)
    col = cooc.sum(axis=0)
    outer = row[:, None] * col[None, :]
    mask = cooc > 0
    mi = float((cooc[mask] * np.log(cooc[mask] / outer[mask])).sum())
    return mi / joint_entropy


def extract_features(label_map: LabelMap, image_dims: tuple[int, int], eta: int) -> PatientFeatureVector:
    """All five texture features plus region pixel shares for one patient."""
    if label_map.labels.size == 0:
        raise ValueError(f"patient {label_map.patient_id}: empty label map")
    grid = rasterize(label_map, image_dims)
    cooc = glcm(grid, n_levels=eta)
    run_matrix = glrlm(grid, n_levels=eta)
    counts = np.bincount(label_map.labels, minlength=eta).astype(np.float64)
    return PatientFeatureVector(
        patient_id=label_map.patient_id,
        lre=feature_lre(run_matrix),
        rmi=feature_rmi(cooc),
        joint_energy=feature_joint_energy(cooc),
        run_variance=feature_rv(run_matrix),
        run_length_nonuniformity=feature_rln(run_matrix),
        region_proportions=counts / counts.sum(),
    )


def feature_table(features: list[PatientFeatureVector]) -> np.ndarray:
    """Stack patient vectors into a matrix (rows follow the input order)."""
    return np.vstack([f.as_array() for f in features])


def write_feature_csv(features: list[PatientFeatureVector], path: str) -> None:
    eta = features[0].region_proportions.shape[0] if features else 0
    header = ["patient_id", "lre", "rmi", "joint_energy", "run_variance", "rln"] + [
        f"prop_{i}" for i in range(eta)
    ]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for f in features:
            row = [f.patient_id] + ["%.17g" % v for v in f.as_array()]
            fh.write(",".join(row) + "\n")
