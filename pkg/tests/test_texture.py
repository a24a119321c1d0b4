import numpy as np
import pytest

from habclust.clustering import LabelMap
from habclust.texture import (
    extract_features,
    feature_joint_energy,
    feature_lre,
    feature_rln,
    feature_rmi,
    feature_rv,
    glcm,
    glrlm,
    rasterize,
)


def label_map_from_grid(grid: np.ndarray, eta: int, pid="p") -> LabelMap:
    coords = np.argwhere(grid > 0)
    labels = grid[coords[:, 0], coords[:, 1]] - 1
    return LabelMap(pid, labels, eta, coords)


class TestRasterize:
    def test_empty_map_is_all_background(self):
        lm = LabelMap("p", np.zeros(0, dtype=int), 3, np.zeros((0, 2), dtype=int))
        assert np.all(rasterize(lm, (4, 5)) == 0)

    def test_single_pixel_level_shift(self):
        lm = LabelMap("p", np.array([2]), 3, np.array([[0, 0]]))
        grid = rasterize(lm, (2, 2))
        assert grid[0, 0] == 3 and grid.sum() == 3

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        grid = rng.integers(0, 4, (6, 6))
        lm = label_map_from_grid(grid, 3)
        assert np.array_equal(rasterize(lm, (6, 6)), grid)


class TestGlcm:
    def test_constant_grid_single_entry(self):
        grid = np.full((2, 2), 1, dtype=int)
        mat = glcm(grid, offsets=((0, 1),), n_levels=1)
        assert mat.shape == (1, 1) and mat[0, 0] == 1.0

    def test_checkerboard_half_half(self):
        grid = np.array([[1, 2], [2, 1]])
        mat = glcm(grid, offsets=((0, 1),), n_levels=2)
        assert mat[0, 1] == 0.5 and mat[1, 0] == 0.5
        assert mat[0, 0] == 0.0 and mat[1, 1] == 0.0

    def test_sums_to_one_and_symmetric(self):
        rng = np.random.default_rng(1)
        grid = rng.integers(0, 5, (12, 9))
        mat = glcm(grid, n_levels=4)
        assert mat.sum() == pytest.approx(1.0)
        assert np.allclose(mat, mat.T)

    def test_background_excluded(self):
        grid = np.array([[1, 0, 2]])
        with pytest.raises(ValueError):
            glcm(grid, offsets=((0, 1),), n_levels=2)  # no adjacent in-mask pair

    def test_single_pixel_errors(self):
        with pytest.raises(ValueError):
            glcm(np.array([[1]]), n_levels=1)


class TestGlrlm:
    def test_basic_runs(self):
        grid = np.array([[1, 1, 2]])
        mat = glrlm(grid, directions=("horizontal",), n_levels=2)
        # one run of level 1 with length 2, one run of level 2 with length 1
        assert mat[0, 1] == 1 and mat[1, 0] == 1 and mat.sum() == 2

    def test_alternating_runs(self):
        grid = np.array([[1, 2, 1, 2]])
        mat = glrlm(grid, directions=("horizontal",), n_levels=2)
        assert mat.shape[1] == 1 and mat[:, 0].tolist() == [2.0, 2.0]

    def test_constant_row(self):
        mat = glrlm(np.array([[2, 2, 2]]), directions=("horizontal",), n_levels=2)
        assert mat[1, 2] == 1 and mat.sum() == 1

    def test_background_breaks_runs(self):
        mat = glrlm(np.array([[1, 0, 1]]), directions=("horizontal",), n_levels=1)
        assert mat[0, 0] == 2 and mat.shape[1] == 1

    def test_length_weighted_sum_counts_pixels(self):
        rng = np.random.default_rng(2)
        grid = rng.integers(0, 3, (10, 7))
        for direction in ("horizontal", "vertical"):
            mat = glrlm(grid, directions=(direction,), n_levels=2)
            lengths = np.arange(1, mat.shape[1] + 1)
            assert (mat * lengths).sum() == (grid > 0).sum()

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            glrlm(np.zeros((0, 0), dtype=int), n_levels=1)


class TestRunFeatures:
    def test_single_long_run(self):
        mat = np.zeros((1, 3))
        mat[0, 2] = 1.0  # one run of length 3
        assert feature_lre(mat) == 9.0
        assert feature_rv(mat) == 0.0
        assert feature_rln(mat) == 1.0

    def test_two_runs_hand_values(self):
        mat = np.zeros((2, 2))
        mat[0, 1] = 1.0  # length 2
        mat[1, 0] = 1.0  # length 1
        assert feature_lre(mat) == pytest.approx(2.5)
        assert feature_rv(mat) == pytest.approx(0.25)
        assert feature_rln(mat) == pytest.approx(1.0)

    def test_all_unit_runs(self):
        mat = np.zeros((3, 1))
        mat[:, 0] = [2, 1, 2]  # five runs, all length 1
        assert feature_lre(mat) == 1.0
        assert feature_rln(mat) == 5.0
        assert feature_rv(mat) == 0.0


class TestCoocFeatures:
    def test_single_entry(self):
        mat = np.array([[1.0]])
        assert feature_joint_energy(mat) == 1.0
        assert feature_rmi(mat) == 0.0

    def test_uniform_independence(self):
        mat = np.full((2, 2), 0.25)
        assert feature_joint_energy(mat) == pytest.approx(0.25)
        assert feature_rmi(mat) == pytest.approx(0.0, abs=1e-12)

    def test_diagonal_perfect_dependence(self):
        mat = np.diag([0.5, 0.5])
        assert feature_joint_energy(mat) == pytest.approx(0.5)
        assert feature_rmi(mat) == pytest.approx(1.0)


class TestExtractFeatures:
    def test_single_label_map(self):
        grid = np.full((4, 4), 1, dtype=int)
        lm = label_map_from_grid(grid, 3)
        fv = extract_features(lm, (4, 4), 3)
        assert fv.region_proportions.tolist() == [1.0, 0.0, 0.0]
        assert fv.joint_energy == 1.0
        # 8 maximal runs of length 4 (both directions), so LRE = 16
        assert fv.lre == 16.0

    def test_proportions(self):
        labels = np.array([0] * 50 + [1] * 30 + [2] * 20)
        coords = np.column_stack([np.repeat(np.arange(10), 10), np.tile(np.arange(10), 10)])
        lm = LabelMap("p", labels, 3, coords)
        fv = extract_features(lm, (10, 10), 3)
        assert np.allclose(fv.region_proportions, [0.5, 0.3, 0.2])

    def test_identical_grids_identical_vectors(self):
        rng = np.random.default_rng(3)
        grid = rng.integers(1, 4, (8, 8))
        a = extract_features(label_map_from_grid(grid, 3, "a"), (8, 8), 3)
        b = extract_features(label_map_from_grid(grid, 3, "b"), (8, 8), 3)
        assert np.array_equal(a.as_array(), b.as_array())

    def test_scalar_features_invariant_to_relabeling(self):
        rng = np.random.default_rng(4)
        grid = rng.integers(1, 4, (9, 9))
        perm = np.array([2, 0, 1])  # relabel 0->2, 1->0, 2->1
        permuted = perm[grid - 1] + 1
        a = extract_features(label_map_from_grid(grid, 3), (9, 9), 3)
        b = extract_features(label_map_from_grid(permuted, 3), (9, 9), 3)
        for name in ("lre", "rmi", "joint_energy", "run_variance", "run_length_nonuniformity"):
            assert getattr(a, name) == pytest.approx(getattr(b, name), rel=1e-12)
        assert np.allclose(np.sort(a.region_proportions), np.sort(b.region_proportions))

    def test_feature_invariants(self, planted_cohort):
        from habclust.clustering import kmeans_fit, kmeans_predict
        from habclust.cohort import pooled_pixels, patient_slices

        cohort, _ = planted_cohort
        pixels = pooled_pixels(cohort)
        model = kmeans_fit(pixels, 4, seed=0, n_init=2)
        for scan, sl in zip(cohort.scans[:6], patient_slices(cohort)[:6]):
            labels = kmeans_predict(model, pixels[sl])
            fv = extract_features(
                LabelMap(scan.patient_id, labels, 4, scan.pixel_coords), scan.image_dims, 4
            )
            assert 0.0 < fv.joint_energy <= 1.0
            assert 0.0 <= fv.rmi <= 1.0
            assert fv.lre >= 1.0
            assert fv.region_proportions.sum() == pytest.approx(1.0, abs=1e-9)

    def test_empty_map_rejected(self):
        lm = LabelMap("p", np.zeros(0, dtype=int), 2, np.zeros((0, 2), dtype=int))
        with pytest.raises(ValueError):
            extract_features(lm, (4, 4), 2)
