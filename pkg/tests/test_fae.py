import numpy as np
import pytest

from habclust import fae
from habclust.fae import (
    FaeConfig,
    FaeModel,
    TrainingDivergedError,
    build_variant,
    fae_encode,
    fae_forward,
    fae_init,
    fae_loss_global,
    fae_loss_pairwise,
    fae_train,
    gradient_check,
    load_transform,
    save_transform,
    standard_ae_init,
)


def small_config(**overrides) -> FaeConfig:
    base = dict(n_modalities=3, hidden_width=10, epochs=2, batch_size=64, seed=0)
    base.update(overrides)
    return FaeConfig(**base)


def zero_model(config=None, kind="fae") -> FaeModel:
    model = fae_init(config or small_config(), kind=kind)
    model.theta[...] = 0.0
    return model


class TestInit:
    def test_same_seed_identical(self):
        a = fae_init(small_config(seed=4))
        b = fae_init(small_config(seed=4))
        assert np.array_equal(a.theta, b.theta)

    def test_three_modalities_make_three_pairs(self):
        model = fae_init(small_config())
        assert model.n_pairs == 3
        views = model.views()
        assert views["enc_W1"].shape == (3, 10, 2)
        assert views["dec_U2"].shape == (3, 2, 10)

    def test_biases_zero_weights_bounded(self):
        model = fae_init(small_config(seed=9))
        views = model.views()
        for name in ("enc_b1", "enc_b2", "lat_b", "proj_c", "dec_a1", "dec_a2", "glob_b1", "glob_b2"):
            assert np.all(views[name] == 0.0)
        bound = np.sqrt(6.0 / (2 + 10))
        assert np.all(np.abs(views["enc_W1"]) <= bound)
        assert np.abs(views["enc_W1"]).max() > 0.0

    def test_latent_dim_capped(self):
        with pytest.raises(ValueError):
            FaeConfig(n_modalities=3, latent_dim=4)


class TestForward:
    def test_zero_model_maps_to_zero(self):
        z, pair, glob = fae_forward(zero_model(), np.array([1.0, 2.0, 3.0]))
        assert np.all(z == 0) and np.all(pair == 0) and np.all(glob == 0)

    def test_shapes(self):
        model = fae_init(small_config(seed=2))
        z, pair, glob = fae_forward(model, np.array([0.1, -0.4, 0.2]))
        assert z.shape == (3,) and pair.shape == (3, 2) and glob.shape == (3,)

    def test_deterministic(self):
        model = fae_init(small_config(seed=3))
        x = np.array([0.3, 0.1, -0.2])
        first = fae_forward(model, x)
        second = fae_forward(model, x)
        for a, b in zip(first, second):
            assert np.array_equal(a, b)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            fae_forward(fae_init(small_config()), np.array([np.nan, 0.0, 0.0]))


class TestLosses:
    def test_perfect_reconstruction_is_zero(self):
        model = zero_model()
        batch = np.zeros((5, 3))
        assert fae_loss_pairwise(model, batch) == 0.0
        assert fae_loss_global(model, batch) == 0.0

    def test_zero_model_global_loss_matches_second_moment(self):
        rng = np.random.default_rng(0)
        batch = rng.normal(0, 1, (10_000, 3))
        batch = (batch - batch.mean(axis=0)) / batch.std(axis=0)
        loss = fae_loss_global(zero_model(), batch)
        assert abs(loss - 1.0) < 0.05
        # the oracle: with zero weights the reconstruction is zero, so the
        # loss is literally the mean of squares
        assert abs(loss - float((batch**2).mean())) < 1e-12

    def test_doubling_inputs_quadruples_losses(self):
        rng = np.random.default_rng(1)
        batch = rng.normal(0, 1, (64, 3))
        model = zero_model()
        assert np.isclose(fae_loss_pairwise(model, 2 * batch), 4 * fae_loss_pairwise(model, batch))
        assert np.isclose(fae_loss_global(model, 2 * batch), 4 * fae_loss_global(model, batch))


class TestGradientCheck:
    def test_fae_both_losses(self):
        rng = np.random.default_rng(5)
        model = fae_init(small_config(seed=5))
        model.theta += rng.normal(0, 0.05, model.theta.shape)
        batch = rng.normal(0, 1, (8, 3))
        assert gradient_check(model, batch) < 1e-4

    def test_zero_case_is_exact(self):
        assert gradient_check(zero_model(), np.zeros((4, 3))) == 0.0

    def test_ensemble_and_standard(self):
        rng = np.random.default_rng(6)
        batch = rng.normal(0, 1, (8, 3))
        ens = fae_init(small_config(seed=6), kind="ensemble_ae")
        ens.theta += rng.normal(0, 0.05, ens.theta.shape)
        assert gradient_check(ens, batch) < 1e-4
        std = standard_ae_init(small_config(seed=6))
        std.theta += rng.normal(0, 0.05, std.theta.shape)
        assert gradient_check(std, batch) < 1e-4


def linear_reconstruction_floor(pixels: np.ndarray) -> float:
    """Oracle for the trainability bar: the best linear reconstruction of the
    data from itself (full-rank latent), solved in closed form."""
    w, *_ = np.linalg.lstsq(pixels, pixels, rcond=None)
    return float(((pixels @ w - pixels) ** 2).mean())


class TestTraining:
    @pytest.fixture(scope="class")
    def dependent_pixels(self):
        rng = np.random.default_rng(12)
        a = rng.normal(0, 1, 5000)
        b = rng.normal(0, 1, 5000)
        c = a + b + rng.normal(0, 0.01, 5000)
        pixels = np.column_stack([a, b, c])
        return (pixels - pixels.mean(axis=0)) / pixels.std(axis=0)

    def test_learns_dependent_modalities(self, dependent_pixels):
        floor = linear_reconstruction_floor(dependent_pixels)
        assert floor < 0.1  # oracle achieves the bar
        config = small_config(epochs=200, batch_size=256, seed=1)
        model = fae_init(config)
        _, trace = fae_train(model, dependent_pixels, config)
        assert min(trace["global"]) < 0.1

    def test_trace_finite_and_min_below_initial(self, dependent_pixels):
        config = small_config(epochs=10, seed=2)
        model = fae_init(config)
        _, trace = fae_train(model, dependent_pixels[:1000], config)
        for series in trace.values():
            assert np.all(np.isfinite(series))
            assert series.min() <= series[0]
            assert len(series) == config.epochs + 1

    def test_same_seed_same_weights(self, dependent_pixels):
        config = small_config(epochs=3, seed=8)
        a, _ = fae_train(fae_init(config), dependent_pixels[:500], config)
        b, _ = fae_train(fae_init(config), dependent_pixels[:500], config)
        assert np.array_equal(a.theta, b.theta)

    def test_divergence_reports_epoch(self):
        config = small_config(epochs=3, seed=0)
        model = fae_init(config)
        model.theta[...] = 1e200
        with pytest.raises(TrainingDivergedError) as err:
            fae_train(model, np.random.default_rng(0).normal(0, 1, (200, 3)), config)
        assert err.value.epoch == 0


class TestEncode:
    def test_zero_model_encodes_to_zero(self):
        z = fae_encode(zero_model(), np.ones((7, 3)))
        assert np.all(z == 0.0)

    def test_bounded_by_tanh(self):
        model = fae_init(small_config(seed=10))
        model.theta *= 4.0
        z = fae_encode(model, np.random.default_rng(0).normal(0, 5, (200, 3)))
        assert np.abs(z).max() < 1.0
        # under extreme saturation float64 tanh rounds onto the bound itself,
        # but never beyond it
        model.theta *= 50.0
        z = fae_encode(model, np.random.default_rng(0).normal(0, 5, (200, 3)))
        assert np.abs(z).max() <= 1.0

    def test_row_independence(self):
        model = fae_init(small_config(seed=11))
        pixels = np.random.default_rng(1).normal(0, 1, (20, 3))
        full = fae_encode(model, pixels)
        one = fae_encode(model, pixels[7:8])
        assert np.array_equal(full[7], one[0])
        split = np.vstack([fae_encode(model, pixels[:9]), fae_encode(model, pixels[9:])])
        assert np.array_equal(full, split)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            fae_encode(fae_init(small_config()), np.ones((4, 2)))


class TestVariants:
    def test_baseline_is_identity(self):
        t = build_variant("baseline", small_config())
        x = np.random.default_rng(2).normal(0, 1, (10, 3))
        t.train(x)
        assert np.array_equal(t.encode(x), x)

    def test_ensemble_has_no_global_head(self):
        ens = build_variant("ensemble_ae", small_config())
        full = build_variant("fae", small_config())
        assert ens.n_params < full.n_params
        assert "glob_S1" not in ens.model.views()
        with pytest.raises(ValueError):
            fae_loss_global(ens.model, np.zeros((2, 3)))

    def test_all_variants_emit_m_features(self):
        x = np.random.default_rng(3).normal(0, 1, (300, 3))
        for kind in ("baseline", "standard_ae", "ensemble_ae", "fae"):
            t = build_variant(kind, small_config(epochs=1))
            t.train(x)
            assert t.encode(x).shape == (300, 3)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            build_variant("mystery", small_config())


class TestSerialization:
    @pytest.mark.parametrize("kind", ["baseline", "standard_ae", "ensemble_ae", "fae"])
    def test_round_trip_exact(self, tmp_path, kind):
        t = build_variant(kind, small_config(epochs=1, seed=14))
        t.train(np.random.default_rng(4).normal(0, 1, (400, 3)))
        path = str(tmp_path / "weights.txt")
        save_transform(t, path)
        again = load_transform(path)
        assert again.kind == kind
        x = np.random.default_rng(5).normal(0, 1, (20, 3))
        assert np.array_equal(t.encode(x), again.encode(x))

    def test_bad_file_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("not a weight file\n")
        with pytest.raises(ValueError):
            load_transform(str(path))
