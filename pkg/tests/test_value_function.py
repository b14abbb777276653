import numpy as np
import pytest

from latent_shap.codec import (
    fourier_codec,
    ground_truth_codec,
    identity_codec,
    pixel_location_grouping,
)
from latent_shap.errors import ConfigError, GroupingMismatch, ShapeMismatch
from latent_shap.models import ModelHandle, constant_model, mean_intensity_model
from latent_shap.shapley import Coalition, exact_shapley
from latent_shap.sprites import SpriteGenerator, sample_dataset
from latent_shap.value_function import (
    BackgroundSet,
    ValueFnConfig,
    make_latent_value_fn,
    make_raw_value_fn,
    splice,
)


def product_model():
    """f_y(x) = x_0 * x_1 on 2x1x1 images; class 0 carries the product."""

    def predict(batch):
        p0 = batch[:, 0, 0, 0] * batch[:, 1, 0, 0]
        return np.stack([p0, 1.0 - p0], axis=1)

    return ModelHandle(predict=predict, num_classes=2, name="product")


def first_pixel_model():
    def predict(batch):
        p0 = batch[:, 0, 0, 0]
        return np.stack([p0, 1.0 - p0], axis=1)

    return ModelHandle(predict=predict, num_classes=2, name="first-pixel")


class TestSplice:
    def setup_method(self):
        self.codec = identity_codec(2, 2, 1)
        rng = np.random.default_rng(0)
        self.z = self.codec.encode(rng.uniform(size=(2, 2, 1)))
        self.zp = self.codec.encode(rng.uniform(size=(2, 2, 1)))
        self.n = self.codec.grouping.num_features

    def test_full_coalition_is_identity(self):
        out = splice(self.z, self.zp, Coalition.full(self.n))
        assert np.array_equal(out.scalars, self.z.scalars)

    def test_empty_coalition_is_replacement(self):
        out = splice(self.z, self.zp, Coalition.empty(self.n))
        assert np.array_equal(out.scalars, self.zp.scalars)

    def test_two_features_over_four_scalars(self):
        from latent_shap.codec import FeatureGrouping, LatentVector

        grouping = FeatureGrouping(
            num_features=2,
            scalar_assignment=np.array([0, 0, 1, 1]),
            feature_names=("lo", "hi"),
            feature_kind="pixel",
        )
        z = LatentVector(np.array([1.0, 2.0, 3.0, 4.0]), grouping)
        zp = LatentVector(np.array([5.0, 6.0, 7.0, 8.0]), grouping)
        out = splice(z, zp, Coalition.of([0], 2))
        assert out.scalars.tolist() == [1.0, 2.0, 7.0, 8.0]

    def test_grouping_mismatch(self):
        other = identity_codec(2, 2, 1, pixel_location_grouping(2, 2, 1))
        z_other = other.encode(np.zeros((2, 2, 1)))
        bad = identity_codec(4, 1, 1).encode(np.zeros((4, 1, 1)))
        with pytest.raises(GroupingMismatch):
            splice(self.z, bad, Coalition.full(self.n))
        # structurally identical groupings are accepted
        out = splice(self.z, z_other, Coalition.empty(self.n))
        assert np.array_equal(out.scalars, z_other.scalars)


class TestLatentValueFn:
    def test_full_coalition_is_reconstruction_value(self):
        gen = SpriteGenerator()
        samples = sample_dataset(6, seed=1, gen=gen)
        codec = ground_truth_codec(gen, samples)
        model = mean_intensity_model()
        bg = BackgroundSet([s.image for s in samples], seed=2)
        vf = make_latent_value_fn(model, codec, samples[0].image, bg,
                                  ValueFnConfig(target_class=0))
        full = Coalition.full(vf.n)
        expected = float(model.predict(samples[0].image[None])[0, 0])
        assert vf.evaluate(full) == expected
        assert vf.evaluate(full) == vf.evaluate(full)

    def test_v_full_independent_of_background(self):
        gen = SpriteGenerator()
        samples = sample_dataset(8, seed=3, gen=gen)
        codec = ground_truth_codec(gen, samples)
        model = mean_intensity_model()
        full = Coalition.full(5)
        values = []
        for k in (2, 5, 8):
            bg = BackgroundSet([s.image for s in samples[:k]], seed=k)
            vf = make_latent_value_fn(model, codec, samples[0].image, bg,
                                      ValueFnConfig(target_class=0))
            values.append(vf.evaluate(full))
        assert values[0] == values[1] == values[2]

    def test_empty_coalition_exhaustive_is_background_mean(self):
        codec = identity_codec(2, 2, 1)
        model = mean_intensity_model()
        rng = np.random.default_rng(4)
        x = rng.uniform(size=(2, 2, 1))
        points = [rng.uniform(size=(2, 2, 1)) for _ in range(5)]
        bg = BackgroundSet(points, seed=0)
        vf = make_latent_value_fn(model, codec, x, bg,
                                  ValueFnConfig(target_class=0, exhaustive=True))
        got = vf.evaluate(Coalition.empty(4))
        expected = float(np.mean([model.predict(p[None])[0, 0] for p in points]))
        assert got == pytest.approx(expected, abs=1e-15)

    def test_constant_model_constant_value(self):
        codec = identity_codec(2, 2, 1)
        model = constant_model(2, [0.7, 0.3])
        rng = np.random.default_rng(5)
        bg = BackgroundSet([rng.uniform(size=(2, 2, 1)) for _ in range(3)], seed=1)
        vf = make_latent_value_fn(model, codec, rng.uniform(size=(2, 2, 1)), bg,
                                  ValueFnConfig(target_class=0))
        for mask in range(16):
            assert vf.evaluate(Coalition(mask, 4)) == 0.7
        attr = exact_shapley(vf)
        assert np.all(attr.values == 0.0)

    def test_coalition_keyed_determinism(self):
        gen = SpriteGenerator()
        samples = sample_dataset(10, seed=6, gen=gen)
        codec = ground_truth_codec(gen, samples)
        model = mean_intensity_model()
        bg = BackgroundSet([s.image for s in samples], seed=7)
        cfg = ValueFnConfig(target_class=0, seed=11, memoize=False)
        vf1 = make_latent_value_fn(model, codec, samples[0].image, bg, cfg)
        vf2 = make_latent_value_fn(model, codec, samples[0].image, bg, cfg)
        for mask in (0, 3, 17, 30):
            c = Coalition(mask, 5)
            assert vf1.evaluate(c) == vf1.evaluate(c)
            assert vf1.evaluate(c) == vf2.evaluate(c)

    def test_batch_matches_scalar_evaluation(self):
        gen = SpriteGenerator()
        samples = sample_dataset(6, seed=8, gen=gen)
        codec = ground_truth_codec(gen, samples)
        model = mean_intensity_model()
        bg = BackgroundSet([s.image for s in samples], seed=9)
        scalar_vf = make_latent_value_fn(model, codec, samples[1].image, bg,
                                         ValueFnConfig(target_class=0, seed=1))
        batch_vf = make_latent_value_fn(model, codec, samples[1].image, bg,
                                        ValueFnConfig(target_class=0, seed=1))
        masks = np.array([0, 1, 5, 31, 7, 5], dtype=np.uint64)
        batched = batch_vf.batch_evaluate(masks)
        singles = [scalar_vf.evaluate(Coalition(int(m), 5)) for m in masks]
        assert batched.tolist() == singles

    def test_dummy_feature_has_zero_value(self):
        # Model reads only the first pixel; other pixel-features are dummies.
        codec = identity_codec(2, 1, 1)
        model = first_pixel_model()
        rng = np.random.default_rng(10)
        bg = BackgroundSet([rng.uniform(size=(2, 1, 1)) for _ in range(4)], seed=3)
        x = rng.uniform(size=(2, 1, 1))
        vf = make_latent_value_fn(model, codec, x, bg,
                                  ValueFnConfig(target_class=0, exhaustive=True))
        attr = exact_shapley(vf)
        assert abs(attr.values[1]) <= 1e-10
        assert attr.values[0] == pytest.approx(
            x[0, 0, 0] - np.mean([p[0, 0, 0] for p in bg.points]), abs=1e-12
        )

    def test_target_defaults_to_argmax(self):
        codec = identity_codec(2, 2, 1)
        model = mean_intensity_model()
        x = np.full((2, 2, 1), 0.9)  # argmax is class 0
        bg = BackgroundSet([np.zeros((2, 2, 1))], seed=0)
        vf = make_latent_value_fn(model, codec, x, bg, ValueFnConfig())
        assert vf.evaluate(Coalition.full(4)) == pytest.approx(0.9)

    def test_shape_mismatch(self):
        codec = identity_codec(2, 2, 1)
        model = mean_intensity_model()
        bg = BackgroundSet([np.zeros((2, 2, 1))], seed=0)
        with pytest.raises(ShapeMismatch):
            make_latent_value_fn(model, codec, np.zeros((3, 3, 1)), bg, ValueFnConfig())
        with pytest.raises(ShapeMismatch):
            make_latent_value_fn(model, codec, np.zeros((2, 2, 1)),
                                 BackgroundSet([np.zeros((3, 3, 1))], seed=0),
                                 ValueFnConfig())

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            ValueFnConfig(num_background_draws=0)
        codec = identity_codec(2, 2, 1)
        bg = BackgroundSet([np.zeros((2, 2, 1))], seed=0)
        with pytest.raises(ConfigError):
            make_latent_value_fn(mean_intensity_model(), codec, np.zeros((2, 2, 1)),
                                 bg, ValueFnConfig(target_class=5))


class TestRawValueFn:
    def test_equals_latent_with_identity_codec(self):
        model = mean_intensity_model()
        rng = np.random.default_rng(11)
        x = rng.uniform(size=(2, 2, 1))
        points = [rng.uniform(size=(2, 2, 1)) for _ in range(4)]
        cfg = ValueFnConfig(target_class=0, seed=21, num_background_draws=2)
        raw = make_raw_value_fn(model, x, BackgroundSet(points, seed=5), cfg)
        codec = identity_codec(2, 2, 1)
        latent = make_latent_value_fn(model, codec, x,
                                      BackgroundSet(points, seed=5), cfg)
        for mask in range(16):
            c = Coalition(mask, 4)
            assert raw.evaluate(c) == latent.evaluate(c)

    def test_hand_evaluated_two_pixel_game(self):
        model = first_pixel_model()
        x = np.array([[[0.8]], [[0.6]]])
        bg = BackgroundSet([np.zeros((2, 1, 1))], seed=0)
        vf = make_raw_value_fn(model, x, bg, ValueFnConfig(target_class=0, exhaustive=True))
        assert vf.evaluate(Coalition.of([0], 2)) == pytest.approx(0.8)
        assert vf.evaluate(Coalition.of([1], 2)) == pytest.approx(0.0)
        assert vf.evaluate(Coalition.empty(2)) == pytest.approx(0.0)

    def test_product_game_half_half(self):
        model = product_model()
        x = np.ones((2, 1, 1))
        bg = BackgroundSet([np.zeros((2, 1, 1))], seed=0)
        vf = make_raw_value_fn(model, x, bg, ValueFnConfig(target_class=0, exhaustive=True))
        attr = exact_shapley(vf)
        # v(empty)=0, v({0})=v({1})=0, v(N)=1 enumerated by hand
        assert attr.values == pytest.approx([0.5, 0.5], abs=1e-12)

    def test_fourier_backed_value_fn_runs(self):
        model = mean_intensity_model()
        rng = np.random.default_rng(12)
        x = rng.uniform(size=(4, 4, 1))
        codec = fourier_codec(4, 4, 1, num_bins=3)
        bg = BackgroundSet([rng.uniform(size=(4, 4, 1)) for _ in range(3)], seed=2)
        vf = make_latent_value_fn(model, codec, x, bg,
                                  ValueFnConfig(target_class=0, exhaustive=True))
        attr = exact_shapley(vf)
        assert np.isfinite(attr.values).all()
