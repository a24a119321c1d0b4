"""Pixel-wise K-means, patient-wise k-medoids, label alignment and the
resampling stability loss.

The stability loss re-splits the cohort K times at patient level, clusters
the two parts independently and scores their permutation-minimized label
disagreement on the validation pixels; averaging the K distances yields a
number in [0, 1] where smaller means more reproducible clusterings.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import kernels
from .cohort import Cohort, pooled_pixels, split_cohort


@dataclass(eq=False)
class ClusterModel:
    centroids: np.ndarray  # (eta, d)
    eta: int
    inertia: float

    def __post_init__(self):
        self.centroids = np.ascontiguousarray(self.centroids, dtype=np.float64)
        if self.eta < 2:
            raise ValueError("need at least 2 clusters")
        if self.centroids.shape[0] != self.eta:
            raise ValueError("centroid count does not match eta")
        if not np.all(np.isfinite(self.centroids)):
            raise ValueError("non-finite centroids")


@dataclass(eq=False)
class LabelMap:
    patient_id: str
    labels: np.ndarray  # (n_pixels,) ints in [0, eta)
    eta: int
    pixel_coords: np.ndarray  # (n_pixels, 2), aligned with labels

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.pixel_coords = np.asarray(self.pixel_coords, dtype=np.int64)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.eta):
            raise ValueError("labels outside [0, eta)")
        if self.pixel_coords.shape != (self.labels.shape[0], 2):
            raise ValueError("coords not aligned with labels")


def _as_points(points) -> np.ndarray:
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    return points


def _kmeanspp(points: np.ndarray, eta: int, rng: np.random.Generator) -> np.ndarray:
    """Distance-weighted seeding; raises when fewer than eta distinct rows."""
    n = points.shape[0]
    centroids = np.empty((eta, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, eta):
        total = d2.sum()
        if total <= 0.0:
            raise ValueError(f"degenerate data: fewer than {eta} distinct points")
        centroids[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(axis=1))
    return centroids


def kmeans_fit(points, eta: int, seed: int = 0, n_init: int = 10, max_iter: int = 300) -> ClusterModel:
    """Best of n_init seeded k-means++ restarts, Lloyd-refined to convergence."""
    points = _as_points(points)
    n = points.shape[0]
    if n < eta:
        raise ValueError(f"{n} points cannot form {eta} clusters")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        init = _kmeanspp(points, eta, rng)
        centroids, _labels, inertia, _n_iter = kernels.lloyd(points, init, max_iter)
        if best is None or inertia < best[1]:
            best = (centroids, inertia)
    return ClusterModel(centroids=best[0], eta=eta, inertia=float(best[1]))


def kmeans_predict(model: ClusterModel, points) -> np.ndarray:
    """Nearest-centroid labels; equidistant points go to the lower index."""
    points = _as_points(points)
    if points.shape[1] != model.centroids.shape[1]:
        raise ValueError(
            f"points have {points.shape[1]} features, model has {model.centroids.shape[1]}"
        )
    return kernels.assign_nearest(points, model.centroids)


def align_labels(labels_a, labels_b, eta: int) -> tuple[np.ndarray, int]:
    """Best relabeling of b against a via the assignment problem.

    Returns (perm, mismatches) where perm[j] is the a-label assigned to
    b-label j and mismatches counts remaining disagreements; equals
    exhaustive search over all eta! permutations.
    """
    labels_a = np.asarray(labels_a, dtype=np.int64)
    labels_b = np.asarray(labels_b, dtype=np.int64)
    if labels_a.shape != labels_b.shape:
        raise ValueError("label vectors differ in length")
    confusion = np.zeros((eta, eta), dtype=np.int64)
    np.add.at(confusion, (labels_a, labels_b), 1)
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    perm = np.empty(eta, dtype=np.int64)
    perm[cols] = rows
    agreement = confusion[rows, cols].sum()
    return perm, int(labels_a.shape[0] - agreement)


def stability_distance(model_c: ClusterModel, model_c_prime: ClusterModel, val_points) -> float:
    """Permutation-minimized disagreement rate of the two models' label
    vectors on the validation points; in [0, 1]."""
    if model_c.eta != model_c_prime.eta:
        raise ValueError("cluster counts differ")
    val_points = _as_points(val_points)
    if val_points.shape[0] == 0:
        raise ValueError("empty validation set")
    labels_a = kmeans_predict(model_c, val_points)
    labels_b = kmeans_predict(model_c_prime, val_points)
    _, mismatches = align_labels(labels_a, labels_b, model_c.eta)
    return mismatches / val_points.shape[0]


def stability_loss(
    latent_provider,
    cohort: Cohort,
    eta: int,
    k_trials: int = 10,
    fraction: float = 57.0 / 82.0,
    seed: int = 0,
    n_init: int = 10,
    max_iter: int = 300,
    n_workers: int = 1,
) -> tuple[float, np.ndarray]:
    """Mean clustering distance over k_trials patient-level reshuffles.

    latent_provider(train_part, val_part, trial_seed) must return the
    latent feature matrices (Z_train, Z_val) for the two parts. Per trial,
    one model is fitted on the training latents, one on the validation
    latents, and their disagreement is scored on the validation latents.
    Trials run independently (optionally threaded); the mean is reduced in
    trial order so results do not depend on scheduling.
    """
    if k_trials < 1:
        raise ValueError("need at least one trial")
    state = np.random.SeedSequence(seed).generate_state(3 * k_trials)

    def one_trial(k: int) -> float:
        split_seed = int(state[3 * k])
        train_part, val_part = split_cohort(cohort, fraction, split_seed)
        z_train, z_val = latent_provider(train_part, val_part, split_seed)
        model_c = kmeans_fit(z_train, eta, seed=int(state[3 * k + 1]), n_init=n_init, max_iter=max_iter)
        model_cp = kmeans_fit(z_val, eta, seed=int(state[3 * k + 2]), n_init=n_init, max_iter=max_iter)
        return stability_distance(model_c, model_cp, z_val)

    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            distances = list(pool.map(one_trial, range(k_trials)))
    else:
        distances = [one_trial(k) for k in range(k_trials)]
    distances = np.asarray(distances)
    return float(distances.mean()), distances


def stability_score(loss: float) -> float:
    """Higher-is-better companion of the stability loss."""
    return 1.0 - loss


def calinski_harabasz(points, labels) -> float:
    """Between/within dispersion ratio of a labeled point set."""
    points = _as_points(points)
    labels = np.asarray(labels, dtype=np.int64)
    n = points.shape[0]
    uniq = np.unique(labels)
    k = uniq.shape[0]
    if k < 2:
        raise ValueError("need at least 2 clusters")
    if k >= n:
        raise ValueError("as many clusters as points")
    grand = points.mean(axis=0)
    between = 0.0
    within = 0.0
    for lab in uniq:
        cluster = points[labels == lab]
        mean = cluster.mean(axis=0)
        between += cluster.shape[0] * float(((mean - grand) ** 2).sum())
        within += float(((cluster - mean) ** 2).sum())
    if within == 0.0:
        raise ValueError("degenerate CH: zero within-cluster dispersion")
    return (between / (k - 1)) / (within / (n - k))


# ---------------------------------------------------------------------------
# k-medoids (build + swap)
# ---------------------------------------------------------------------------


def kmedoids_fit(points, k: int, seed: int = 0,
                 max_swaps: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Partition-around-medoids under Euclidean distance.

    Greedy build then best-improvement swaps until no swap lowers the total
    point-to-medoid distance (or max_swaps is reached). Ties always resolve
    to the lowest index, so the outcome is deterministic; the seed parameter
    is accepted for interface symmetry with the other fitters.
    """
    del seed
    points = _as_points(points)
    n = points.shape[0]
    if n < k:
        raise ValueError(f"{n} points cannot host {k} medoids")
    dist = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))

    # build: first medoid minimizes total distance, the rest greedily
    # maximize cost reduction
    medoids = [int(dist.sum(axis=1).argmin())]
    nearest = dist[medoids[0]].copy()
    while len(medoids) < k:
        reduction = np.maximum(nearest[None, :] - dist, 0.0).sum(axis=1)
        reduction[medoids] = -np.inf
        cand = int(reduction.argmax())
        medoids.append(cand)
        nearest = np.minimum(nearest, dist[cand])

    def total_cost(meds):
        return float(dist[meds].min(axis=0).sum())

    cost = total_cost(medoids)
    n_swaps = 0
    improved = True
    while improved and (max_swaps is None or n_swaps < max_swaps):
        improved = False
        best_swap, best_cost = None, cost
        for mi in range(k):
            for p in range(n):
                if p in medoids:
                    continue
                trial = list(medoids)
                trial[mi] = p
                c = total_cost(trial)
                if c < best_cost - 1e-15:
                    best_cost, best_swap = c, (mi, p)
        if best_swap is not None:
            medoids[best_swap[0]] = best_swap[1]
            cost = best_cost
            improved = True
            n_swaps += 1
    medoids = np.asarray(medoids, dtype=np.int64)
    labels = dist[medoids].argmin(axis=0).astype(np.int64)
    return medoids, labels
