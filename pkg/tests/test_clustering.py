import itertools

import numpy as np
import pytest

from habclust import kernels
from habclust.clustering import (
    ClusterModel,
    align_labels,
    calinski_harabasz,
    kmeans_fit,
    kmeans_predict,
    kmedoids_fit,
    stability_distance,
    stability_loss,
    stability_score,
)
from habclust.cohort import default_synth_spec, generate_synthetic, pooled_pixels


def brute_force_best_partition(points: np.ndarray, k: int) -> float:
    """Minimal within-cluster sum of squares over every labeling."""
    best = np.inf
    n = len(points)
    for labels in itertools.product(range(k), repeat=n):
        labels = np.asarray(labels)
        if len(set(labels.tolist())) < k:
            continue
        wcss = 0.0
        for j in range(k):
            cluster = points[labels == j]
            wcss += ((cluster - cluster.mean(axis=0)) ** 2).sum()
        best = min(best, wcss)
    return best


def min_hamming(labels_a, labels_b, eta) -> int:
    """Exhaustive permutation search; the oracle for align_labels."""
    labels_a = np.asarray(labels_a)
    labels_b = np.asarray(labels_b)
    best = len(labels_a) + 1
    for perm in itertools.permutations(range(eta)):
        mapped = np.asarray(perm)[labels_b]
        best = min(best, int((mapped != labels_a).sum()))
    return best


class TestKmeans:
    def test_two_cluster_1d_oracle(self):
        points = np.array([[-1.0], [0.0], [10.0], [11.0]])
        model = kmeans_fit(points, 2, seed=0)
        assert sorted(model.centroids[:, 0].tolist()) == [-0.5, 10.5]
        assert model.inertia == pytest.approx(1.0)
        assert model.inertia == pytest.approx(brute_force_best_partition(points, 2))

    def test_eta_equals_n(self):
        points = np.array([[0.0], [5.0], [9.0]])
        model = kmeans_fit(points, 3, seed=1)
        assert model.inertia == 0.0
        assert sorted(model.centroids[:, 0].tolist()) == [0.0, 5.0, 9.0]

    def test_duplicating_points_keeps_centroids(self):
        points = np.array([[-1.0], [0.0], [10.0], [11.0]])
        doubled = np.vstack([points, points])
        a = kmeans_fit(points, 2, seed=3)
        b = kmeans_fit(doubled, 2, seed=3)
        assert sorted(a.centroids[:, 0].tolist()) == sorted(b.centroids[:, 0].tolist())

    def test_predict_is_lloyd_fixed_point(self):
        rng = np.random.default_rng(7)
        points = np.vstack([rng.normal(0, 0.5, (40, 2)), rng.normal(8, 0.5, (40, 2))])
        model = kmeans_fit(points, 2, seed=2)
        labels = kmeans_predict(model, points)
        # refitting from the converged centroids must not move anything
        cents, labels2, _, n_iter = kernels.lloyd(
            np.ascontiguousarray(points), model.centroids, 10
        )
        assert np.array_equal(labels, labels2)
        assert np.allclose(cents, model.centroids)
        assert n_iter == 1

    def test_tie_goes_to_lowest_index(self):
        model = ClusterModel(np.array([[0.0], [2.0]]), 2, 0.0)
        assert kmeans_predict(model, np.array([[1.0]]))[0] == 0

    def test_centroid_predicts_itself(self):
        model = ClusterModel(np.array([[0.0, 0.0], [3.0, 3.0]]), 2, 0.0)
        assert kmeans_predict(model, np.array([[3.0, 3.0]]))[0] == 1

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError):
            kmeans_fit(np.zeros((2, 1)), 3, seed=0)

    def test_degenerate_duplicates_rejected(self):
        with pytest.raises(ValueError, match="distinct"):
            kmeans_fit(np.ones((6, 2)), 2, seed=0)

    def test_inertia_non_increasing_over_iterations(self):
        rng = np.random.default_rng(11)
        points = np.ascontiguousarray(rng.normal(0, 1, (120, 2)))
        init = np.ascontiguousarray(points[:4].copy())
        inertias = [kernels.lloyd(points, init, t)[2] for t in range(1, 12)]
        assert all(b <= a + 1e-9 for a, b in zip(inertias, inertias[1:]))

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(13)
        points = rng.normal(0, 1, (200, 3))
        a = kmeans_fit(points, 4, seed=5)
        b = kmeans_fit(points, 4, seed=5)
        assert np.array_equal(a.centroids, b.centroids)


class TestAlignLabels:
    def test_pure_relabeling(self):
        perm, mism = align_labels([0, 0, 1, 1], [1, 1, 0, 0], 2)
        assert mism == 0
        assert perm.tolist() == [1, 0]

    def test_one_mismatch(self):
        perm, mism = align_labels([0, 0, 1, 1], [0, 1, 1, 1], 2)
        assert mism == 1
        assert perm.tolist() == [0, 1]
        assert mism == min_hamming([0, 0, 1, 1], [0, 1, 1, 1], 2)

    def test_identity(self):
        perm, mism = align_labels([0, 1, 2, 1], [0, 1, 2, 1], 3)
        assert mism == 0 and perm.tolist() == [0, 1, 2]

    @pytest.mark.parametrize("eta", [2, 3, 4])
    def test_matches_brute_force(self, eta):
        rng = np.random.default_rng(eta)
        for _ in range(60):
            n = int(rng.integers(2, 12))
            a = rng.integers(0, eta, n)
            b = rng.integers(0, eta, n)
            _, mism = align_labels(a, b, eta)
            assert mism == min_hamming(a, b, eta)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            align_labels([0, 1], [0], 2)


class TestStabilityDistance:
    def test_identical_models(self):
        model = ClusterModel(np.array([[0.0], [5.0]]), 2, 0.0)
        assert stability_distance(model, model, np.array([[0.1], [4.9]])) == 0.0

    def test_permuted_centroids(self):
        a = ClusterModel(np.array([[0.0], [5.0]]), 2, 0.0)
        b = ClusterModel(np.array([[5.0], [0.0]]), 2, 0.0)
        pts = np.array([[0.2], [0.4], [4.8], [5.2]])
        assert stability_distance(a, b, pts) == 0.0

    def test_half_disagreement_case(self):
        a = ClusterModel(np.array([[0.0], [10.0]]), 2, 0.0)
        b = ClusterModel(np.array([[0.0], [4.0]]), 2, 0.0)
        pts = np.array([[1.0], [2.0], [3.0], [5.0]])
        assert stability_distance(a, b, pts) == 0.5

    def test_empty_validation_rejected(self):
        model = ClusterModel(np.array([[0.0], [5.0]]), 2, 0.0)
        with pytest.raises(ValueError):
            stability_distance(model, model, np.zeros((0, 1)))

    def test_eta_mismatch_rejected(self):
        a = ClusterModel(np.array([[0.0], [5.0]]), 2, 0.0)
        b = ClusterModel(np.array([[0.0], [5.0], [9.0]]), 3, 0.0)
        with pytest.raises(ValueError):
            stability_distance(a, b, np.array([[1.0]]))

    def test_pseudometric_on_random_triples(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            eta = int(rng.integers(2, 5))
            n = int(rng.integers(3, 13))
            a, b, c = (rng.integers(0, eta, n) for _ in range(3))
            d_ab = min_hamming(a, b, eta) / n
            d_ba = min_hamming(b, a, eta) / n
            d_bc = min_hamming(b, c, eta) / n
            d_ac = min_hamming(a, c, eta) / n
            assert d_ab == d_ba
            assert d_ac <= d_ab + d_bc + 1e-12


class TestStabilityLoss:
    @staticmethod
    def identity_provider(train_part, val_part, _seed):
        return pooled_pixels(train_part), pooled_pixels(val_part)

    def test_separated_blobs_are_stable(self, planted_cohort):
        cohort, _ = planted_cohort
        loss, per_trial = stability_loss(
            self.identity_provider, cohort, eta=4, k_trials=5, fraction=0.6, seed=0
        )
        assert loss < 0.05
        assert per_trial.shape == (5,)
        assert 0.0 <= loss <= 1.0

    def test_deterministic_and_worker_invariant(self, planted_cohort):
        cohort, _ = planted_cohort
        args = (self.identity_provider, cohort, 3, 4, 0.6, 9)
        first = stability_loss(*args)
        second = stability_loss(*args)
        threaded = stability_loss(*args, n_workers=4)
        assert first[0] == second[0] == threaded[0]
        assert np.array_equal(first[1], threaded[1])

    def test_default_trial_count(self):
        import inspect

        assert inspect.signature(stability_loss).parameters["k_trials"].default == 10

    def test_score_complements_loss(self):
        assert stability_score(0.0) == 1.0
        assert stability_score(1.0) == 0.0
        assert stability_score(0.077) == pytest.approx(0.923)


class TestCalinskiHarabasz:
    def test_hand_case(self):
        points = np.array([[0.0], [1.0], [10.0], [11.0]])
        labels = [0, 0, 1, 1]
        # grand mean 5.5; cluster means 0.5, 10.5; between 100, within 1
        assert calinski_harabasz(points, labels) == pytest.approx(200.0)

    def test_affine_invariance(self):
        rng = np.random.default_rng(31)
        points = rng.normal(0, 1, (60, 3))
        labels = rng.integers(0, 3, 60)
        base = calinski_harabasz(points, labels)
        scaled = calinski_harabasz(2.5 * points - 7.0, labels)
        assert scaled == pytest.approx(base, rel=1e-9)

    def test_degenerate_cases(self):
        # two singletons: as many clusters as points
        with pytest.raises(ValueError):
            calinski_harabasz(np.array([[0.0], [1.0]]), [0, 1])
        # zero within-cluster dispersion with n > k
        with pytest.raises(ValueError, match="degenerate"):
            calinski_harabasz(np.array([[0.0], [0.0], [1.0]]), [0, 0, 1])
        with pytest.raises(ValueError):
            calinski_harabasz(np.array([[0.0], [1.0]]), [0, 0])


class TestKmedoids:
    def test_build_swap_oracle_1d(self):
        points = np.array([[0.0], [1.0], [2.0], [10.0]])
        medoids, labels = kmedoids_fit(points, 2)
        assert sorted(points[medoids][:, 0].tolist()) == [1.0, 10.0]
        assert labels.tolist() == [0, 0, 0, 1]
        # brute force over all medoid pairs
        best = min(
            sum(min(abs(p - points[i, 0]), abs(p - points[j, 0])) for p in points[:, 0])
            for i in range(4)
            for j in range(i + 1, 4)
        )
        cost = sum(
            abs(points[p, 0] - points[medoids[labels[p]], 0]) for p in range(4)
        )
        assert cost == pytest.approx(best) == pytest.approx(2.0)

    def test_blob_membership(self):
        rng = np.random.default_rng(41)
        pts = np.vstack([rng.normal(0, 0.3, (20, 2)), rng.normal(6, 0.3, (25, 2))])
        _, labels = kmedoids_fit(pts, 2)
        assert len(set(labels[:20].tolist())) == 1
        assert len(set(labels[20:].tolist())) == 1
        assert labels[0] != labels[-1]

    def test_medoids_are_members(self):
        rng = np.random.default_rng(42)
        pts = rng.normal(0, 1, (30, 4))
        medoids, _ = kmedoids_fit(pts, 3)
        assert all(0 <= int(m) < 30 for m in medoids)

    def test_swaps_never_increase_cost(self):
        rng = np.random.default_rng(43)
        pts = rng.normal(0, 1, (25, 2))

        def cost_at(max_swaps):
            medoids, labels = kmedoids_fit(pts, 3, max_swaps=max_swaps)
            d = np.sqrt(((pts[:, None] - pts[medoids][None]) ** 2).sum(axis=2))
            return d.min(axis=1).sum()

        costs = [cost_at(s) for s in range(0, 6)]
        assert all(b <= a + 1e-12 for a, b in zip(costs, costs[1:]))

    def test_too_many_medoids_rejected(self):
        with pytest.raises(ValueError):
            kmedoids_fit(np.zeros((2, 1)), 3)
