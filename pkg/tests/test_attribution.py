import numpy as np
import pytest

from tsattr import attribution as attr, lstm, rng as rngmod
from tsattr.errors import ConfigError, IntractableError, ShapeError
from tsattr.oracles import AdditiveModel, LinearModel

from conftest import make_sample


def _random_linear(B=3, T=4, seed=0):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(B, T))
    x = rng.normal(size=(B, T))
    base = attr.BaselineVector(values=rng.normal(size=(B, T)), kind="padded")
    return LinearModel(w), x, base


def _small_lstm(B=3, T=4, seed=0, hidden=6):
    return lstm.LstmRegressor(lstm.init_params(n_bands=B, hidden_size=hidden,
                                               n_layers=2, seed=seed))


class TestBaselines:
    def test_padded_baseline_definition(self):
        b = attr.padded_baseline(2, 3)
        assert b.kind == "padded"
        np.testing.assert_array_equal(b.values, np.full((2, 3), -1.0))

    def test_mean_baseline_without_padding_equals_dataset_mean(self):
        rng = np.random.default_rng(0)
        values = rng.normal(size=(10, 2, 3))
        pads = np.zeros_like(values, dtype=bool)
        dm = attr.compute_dataset_mean(values, pads)
        sample = make_sample(values[0])
        b = attr.mean_baseline(dm, sample)
        np.testing.assert_array_equal(b.values, values.mean(axis=0))
        assert b.kind == "mean_adapted"

    def test_mean_baseline_fully_padded_pixel(self):
        rng = np.random.default_rng(1)
        values = rng.normal(size=(5, 2, 3))
        pads = np.zeros_like(values, dtype=bool)
        dm = attr.compute_dataset_mean(values, pads)
        sample = make_sample(np.full((2, 3), -1.0), pad_mask=np.ones((2, 3), bool))
        b = attr.mean_baseline(dm, sample)
        np.testing.assert_array_equal(b.values, np.full((2, 3), -1.0))

    def test_case_rule_matches_scripted_application(self):
        rng = np.random.default_rng(2)
        values = rng.normal(size=(8, 3, 4))
        pads = rng.random(size=(8, 3, 4)) < 0.3
        values[pads] = -1.0
        dm = attr.compute_dataset_mean(values, pads)
        sample = make_sample(values[0], pad_mask=pads[0])
        b = attr.mean_baseline(dm, sample)
        for i in range(3):
            for t in range(4):
                if pads[0, i, t]:
                    assert b.values[i, t] == -1.0
                else:
                    col = values[:, i, t][~pads[:, i, t]]
                    assert b.values[i, t] == pytest.approx(col.mean(), abs=1e-12)

    def test_slot_padded_everywhere_flagged(self):
        values = np.full((4, 1, 2), -1.0)
        values[:, 0, 0] = 2.0
        pads = np.zeros_like(values, dtype=bool)
        pads[:, 0, 1] = True
        dm = attr.compute_dataset_mean(values, pads)
        assert dm.never_observed[0, 1]
        assert dm.mean[0, 1] == -1.0


class TestGradientFamily:
    def test_saliency_on_linear_oracle_is_w(self):
        model, x, _ = _random_linear()
        np.testing.assert_array_equal(attr.saliency(model, x), model.weights)

    def test_saliency_constant_model_flagged_zero(self):
        model = LinearModel(np.zeros((2, 2)))
        tensor = attr.attribute("saliency", model, np.ones((2, 2)), None)
        assert tensor.all_zero
        np.testing.assert_array_equal(tensor.scaled, 0.0)

    def test_saliency_equals_input_gradient_bitwise(self):
        model = _small_lstm()
        x = np.random.default_rng(3).normal(size=(3, 4))
        np.testing.assert_array_equal(attr.saliency(model, x), model.input_gradient(x))

    def test_input_x_gradient_linear(self):
        model, x, _ = _random_linear(seed=4)
        np.testing.assert_allclose(attr.input_x_gradient(model, x), model.weights * x)

    def test_input_x_gradient_zero_input(self):
        model = _small_lstm(seed=5)
        np.testing.assert_array_equal(attr.input_x_gradient(model, np.zeros((3, 4))), 0.0)

    def test_input_x_gradient_composition(self):
        model = _small_lstm(seed=6)
        x = np.random.default_rng(6).normal(size=(3, 4))
        np.testing.assert_array_equal(
            attr.input_x_gradient(model, x), attr.saliency(model, x) * x)


class TestIntegratedGradients:
    def test_linear_exact_for_any_step_count(self):
        model, x, base = _random_linear(seed=7)
        truth = model.attribution_ground_truth(x, base.values)
        for steps in (1, 3, 16):
            got = attr.integrated_gradients(model, x, base, steps=steps)
            np.testing.assert_allclose(got, truth, atol=1e-12)

    def test_zero_path(self):
        model, x, _ = _random_linear(seed=8)
        base = attr.BaselineVector(values=x.copy(), kind="padded")
        got = attr.integrated_gradients(model, x, base, steps=8)
        np.testing.assert_array_equal(got, 0.0)

    @pytest.mark.parametrize("rule", ["right", "left", "midpoint", "trapezoid"])
    def test_completeness_on_smooth_lstm(self, rule):
        # a smooth model and a nearby baseline keep the m=256 discretization
        # error inside the tolerance; long paths through saturating gates do not
        params = lstm.init_params(n_bands=3, hidden_size=8, n_layers=2, seed=9)
        for name in params.tensors:
            if name.startswith("lstm") and name.endswith((".wx", ".wh")):
                params.tensors[name] *= 0.4
        model = lstm.LstmRegressor(params)
        rng = np.random.default_rng(9)
        x = rng.normal(size=(3, 4))
        base = attr.BaselineVector(values=x - 0.2 * rng.normal(size=(3, 4)), kind="padded")
        raw = attr.integrated_gradients(model, x, base, steps=256, rule=rule)
        gap = abs(raw.sum() - (model.predict(x) - model.predict(base.values)))
        assert gap <= 1e-3 * abs(model.predict(x) - model.predict(base.values)) + 1e-6

    def test_convergence_with_steps(self):
        model = _small_lstm(seed=10)
        rng = np.random.default_rng(10)
        x = rng.normal(size=(3, 4))
        base = attr.BaselineVector(values=rng.normal(size=(3, 4)), kind="padded")
        target = model.predict(x) - model.predict(base.values)
        gaps = [abs(attr.integrated_gradients(model, x, base, steps=m).sum() - target)
                for m in (4, 32, 256)]
        assert gaps[2] <= gaps[0] + 1e-12


class TestGradientShap:
    def test_linear_recovery_and_se_shrink(self):
        model, x, base = _random_linear(seed=11)
        truth = model.attribution_ground_truth(x, base.values)
        errors = []
        for n in (8, 128, 2048):
            raw = attr.gradient_shap(model, x, base, n_samples=n, sigma=0.25,
                                     rng=np.random.default_rng(0))
            errors.append(np.abs(raw - truth).max())
        # for a linear model the gradient is constant, so even noisy draws
        # average to w exactly; the error collapses to float noise
        assert errors[-1] <= errors[0] + 1e-12
        assert errors[-1] < 1e-12

    def test_sigma_zero_equals_ig_for_linear(self):
        model, x, base = _random_linear(seed=12)
        gs = attr.gradient_shap(model, x, base, n_samples=16, sigma=0.0,
                                rng=np.random.default_rng(1))
        ig = attr.integrated_gradients(model, x, base, steps=16)
        np.testing.assert_allclose(gs, ig, atol=1e-12)

    def test_zero_difference_gives_zero(self):
        model, x, _ = _random_linear(seed=13)
        base = attr.BaselineVector(values=x.copy(), kind="padded")
        raw = attr.gradient_shap(model, x, base, n_samples=8, sigma=0.0,
                                 rng=np.random.default_rng(2))
        np.testing.assert_array_equal(raw, 0.0)


class TestOcclusion:
    def test_linear_1x1_exact(self):
        model, x, base = _random_linear(seed=14)
        truth = model.attribution_ground_truth(x, base.values)
        np.testing.assert_allclose(attr.occlusion(model, x, base), truth, atol=1e-12)

    def test_padded_feature_zero_under_adapted_baseline(self):
        model = _small_lstm(seed=15)
        values = np.random.default_rng(15).normal(size=(3, 4))
        pad = np.zeros((3, 4), bool)
        pad[:, 0] = True
        values[pad] = -1.0
        sample = make_sample(values, pad_mask=pad)
        dm = attr.compute_dataset_mean(np.stack([values, values + pad * 0]),
                                       np.stack([pad, pad]))
        baseline = attr.mean_baseline(dm, sample)
        raw = attr.occlusion(model, sample.values, baseline)
        assert (raw[:, 0] == 0.0).all()

    def test_three_feature_enumeration_oracle(self):
        model = _small_lstm(B=3, T=1, seed=16)
        x = np.random.default_rng(16).normal(size=(3, 1))
        base = attr.padded_baseline(3, 1)
        raw = attr.occlusion(model, x, base)
        f_x = model.predict(x)
        for b in range(3):
            x_sub = x.copy()
            x_sub[b, 0] = -1.0
            assert raw[b, 0] == pytest.approx(f_x - model.predict(x_sub), abs=1e-12)

    def test_window_averaging(self):
        model, x, base = _random_linear(seed=17)
        raw = attr.occlusion(model, x, base, window=(2, 2))
        assert raw.shape == x.shape
        assert np.isfinite(raw).all()


class TestShapleyValueSampling:
    def test_linear_within_three_standard_errors(self):
        model, x, base = _random_linear(seed=18)
        truth = model.attribution_ground_truth(x, base.values)
        n = 2000
        raw = attr.shapley_value_sampling(model, x, base, n, np.random.default_rng(3))
        # for a linear model every permutation yields the exact value, so the
        # estimator is exact; use a strict tolerance
        np.testing.assert_allclose(raw, truth, atol=1e-10)

    def test_symmetry_axiom(self):
        model = LinearModel(np.ones((2, 1)))
        x = np.array([[0.7], [0.7]])
        base = attr.BaselineVector(values=np.zeros((2, 1)), kind="padded")
        raw = attr.shapley_value_sampling(model, x, base, 50, np.random.default_rng(4))
        assert raw[0, 0] == pytest.approx(raw[1, 0], abs=1e-12)

    def test_converges_to_exact_shapley(self):
        model = _small_lstm(B=3, T=4, seed=19)
        rng = np.random.default_rng(19)
        x = rng.normal(size=(3, 4))
        base = attr.BaselineVector(values=rng.normal(size=(3, 4)), kind="padded")
        exact = attr.exact_shapley(model, x, base)
        err = []
        for n in (200, 5000):
            svs = attr.shapley_value_sampling(model, x, base, n, np.random.default_rng(5))
            err.append(np.abs(svs - exact).mean())
        assert err[1] < err[0]
        assert err[1] <= 0.02 * np.abs(exact).max() + 1e-9

    def test_seeded_determinism(self):
        model = _small_lstm(seed=20)
        x = np.random.default_rng(20).normal(size=(3, 4))
        base = attr.padded_baseline(3, 4)
        cfg = attr.AttributionConfig(svs_samples=10, seed=77)
        a = attr.attribute("shapley_value_sampling", model, x, base, cfg, pixel_id="p1")
        b = attr.attribute("shapley_value_sampling", model, x, base, cfg, pixel_id="p1")
        np.testing.assert_array_equal(a.raw, b.raw)


class TestExactShapley:
    def test_linear_game(self):
        model, x, base = _random_linear(seed=21)
        truth = model.attribution_ground_truth(x, base.values)
        np.testing.assert_allclose(attr.exact_shapley(model, x, base), truth, atol=1e-12)

    def test_dummy_axiom(self):
        w = np.array([[1.0, 2.0, 0.0]])   # third feature ignored by the model
        model = LinearModel(w)
        x = np.array([[0.4, 0.9, 0.7]])
        base = attr.BaselineVector(values=np.zeros((1, 3)), kind="padded")
        raw = attr.exact_shapley(model, x, base)
        assert raw[0, 2] == 0.0

    def test_efficiency_on_random_small_models(self):
        for seed in range(5):
            model = _small_lstm(B=2, T=3, seed=seed)
            rng = np.random.default_rng(seed)
            x = rng.normal(size=(2, 3))
            base = attr.BaselineVector(values=rng.normal(size=(2, 3)), kind="padded")
            raw = attr.exact_shapley(model, x, base)
            target = model.predict(x) - model.predict(base.values)
            assert abs(raw.sum() - target) < 1e-9

    def test_additive_model_ground_truth(self):
        rng = np.random.default_rng(22)
        model = AdditiveModel(alpha=rng.normal(size=(2, 3)), beta=rng.normal(size=(2, 3)))
        x = rng.normal(size=(2, 3))
        base = attr.BaselineVector(values=rng.normal(size=(2, 3)), kind="padded")
        truth = model.attribution_ground_truth(x, base.values)
        np.testing.assert_allclose(attr.exact_shapley(model, x, base), truth, atol=1e-10)

    def test_too_many_features_rejected(self):
        model, _, _ = _random_linear()
        x = np.zeros((3, 7))
        base = attr.BaselineVector(values=np.ones((3, 7)), kind="padded")
        model = LinearModel(np.ones((3, 7)))
        with pytest.raises(IntractableError):
            attr.exact_shapley(model, x, base)


class TestLime:
    def test_full_enumeration_recovers_linear(self):
        model, x, base = _random_linear(B=2, T=3, seed=23)
        truth = model.attribution_ground_truth(x, base.values)
        raw = attr.lime(model, x, base, n_samples=1 << 6, kernel_width=None,
                        rng=np.random.default_rng(6))
        np.testing.assert_allclose(raw, truth, atol=1e-4)

    def test_baseline_equals_sample_gives_zeros(self):
        model, x, _ = _random_linear(seed=24)
        base = attr.BaselineVector(values=x.copy(), kind="padded")
        raw = attr.lime(model, x, base, n_samples=64, kernel_width=None,
                        rng=np.random.default_rng(7))
        np.testing.assert_array_equal(raw, 0.0)

    def test_duplicate_columns_split_under_ridge(self):
        # perfectly collinear design columns: ridge splits the joint effect,
        # preserving the coefficient sum of the scripted reference solve
        rng = np.random.default_rng(8)
        z = rng.random((64, 2)) < 0.5
        design = np.hstack([z[:, :1], z[:, :1], z[:, 1:], np.ones((64, 1))])
        y = 3.0 * z[:, 0] + 1.0 * z[:, 1] + 0.5
        weights = np.ones(64)
        coef = attr._ridge_wls(design, y, weights, ridge=1e-6,
                               penalize=np.array([1.0, 1.0, 1.0, 0.0]))
        assert coef[0] == pytest.approx(coef[1], rel=1e-6)
        assert coef[0] + coef[1] == pytest.approx(3.0, abs=1e-4)

        # scripted reference: normal equations solved directly
        lam = np.diag([1e-6, 1e-6, 1e-6, 0.0])
        ref = np.linalg.solve(design.T @ design + lam, design.T @ y)
        np.testing.assert_allclose(coef, ref, atol=1e-10)


class TestKernelShap:
    def test_full_enumeration_equals_exact_shapley(self):
        model = _small_lstm(B=3, T=4, seed=25)
        rng = np.random.default_rng(25)
        x = rng.normal(size=(3, 4))
        base = attr.BaselineVector(values=rng.normal(size=(3, 4)), kind="padded")
        exact = attr.exact_shapley(model, x, base)
        ks = attr.kernel_shap(model, x, base, n_samples=1 << 14, rng=np.random.default_rng(9))
        np.testing.assert_allclose(ks, exact, atol=1e-6)

    def test_linear_game(self):
        model, x, base = _random_linear(seed=26)
        truth = model.attribution_ground_truth(x, base.values)
        ks = attr.kernel_shap(model, x, base, n_samples=1 << 14, rng=np.random.default_rng(10))
        np.testing.assert_allclose(ks, truth, atol=1e-9)

    def test_efficiency_regardless_of_samples(self):
        model = _small_lstm(B=3, T=5, seed=27)
        rng = np.random.default_rng(27)
        x = rng.normal(size=(3, 5))
        base = attr.BaselineVector(values=rng.normal(size=(3, 5)), kind="padded")
        target = model.predict(x) - model.predict(base.values)
        for n in (20, 100, 1000):
            raw = attr.kernel_shap(model, x, base, n, np.random.default_rng(11))
            assert abs(raw.sum() - target) < 1e-9

    def test_single_active_feature(self):
        model = LinearModel(np.array([[2.0]]))
        x = np.array([[1.5]])
        base = attr.BaselineVector(values=np.array([[0.5]]), kind="padded")
        raw = attr.kernel_shap(model, x, base, None, np.random.default_rng(0))
        assert raw[0, 0] == pytest.approx(2.0)


class TestDispatchAndTensor:
    def test_unknown_method_rejected(self):
        model, x, base = _random_linear()
        with pytest.raises(ConfigError):
            attr.attribute("gradcam", model, x, base)

    def test_missing_baseline_rejected(self):
        model, x, _ = _random_linear()
        with pytest.raises(ConfigError):
            attr.attribute("occlusion", model, x, None)

    def test_shape_mismatch_rejected(self):
        model, x, _ = _random_linear()
        base = attr.padded_baseline(5, 5)
        with pytest.raises(ShapeError):
            attr.attribute("occlusion", model, x, base)

    def test_normalization_invariant(self):
        model, x, base = _random_linear(seed=28)
        for method in attr.METHOD_NAMES:
            tensor = attr.attribute(method, model, x, base,
                                    attr.AttributionConfig(svs_samples=5, ig_steps=4,
                                                           gradshap_samples=4,
                                                           lime_samples=64,
                                                           kernelshap_samples=64))
            assert abs(np.abs(tensor.scaled).sum() - 1.0) < 1e-9
            np.testing.assert_array_equal(tensor.absolute, np.abs(tensor.scaled))

    def test_padded_nullity_all_perturbation_methods(self):
        model = _small_lstm(B=2, T=4, seed=29)
        rng = np.random.default_rng(29)
        values = rng.normal(size=(2, 4))
        pad = np.zeros((2, 4), bool)
        pad[:, :2] = True
        values[pad] = -1.0
        sample = make_sample(values, pad_mask=pad)
        others = rng.normal(size=(6, 2, 4))
        others[:, pad] = -1.0
        dm = attr.compute_dataset_mean(
            np.concatenate([values[None], others]),
            np.broadcast_to(pad, (7, 2, 4)),
        )
        baseline = attr.mean_baseline(dm, sample)
        cfg = attr.AttributionConfig(svs_samples=8, lime_samples=64, kernelshap_samples=64)
        for method in ("occlusion", "shapley_value_sampling", "lime", "kernel_shap",
                       "integrated_gradients", "gradient_shap"):
            tensor = attr.attribute(method, model, sample, baseline, cfg, pixel_id="p")
            assert (tensor.raw[pad] == 0.0).all(), method
        exact = attr.exact_shapley(model, sample.values, baseline)
        assert (exact[pad] == 0.0).all()


class TestFieldAttributionIO:
    def test_round_trip(self, tmp_path):
        model, x, base = _random_linear(seed=30)
        presence = np.array([[True, False], [True, True]])
        tensors = [attr.attribute("saliency", model, x, base, pixel_id=f"f:2021:{i}")
                   for i in range(3)]
        fa = attr.stack_field_attribution("f", "2021", presence, ["a", "b", "c"], tensors)
        path = tmp_path / "f.atr"
        attr.save_field_attribution(fa, path)
        loaded = attr.load_field_attribution(path)
        assert loaded.key() == "f:2021"
        assert loaded.method == "saliency"
        np.testing.assert_array_equal(loaded.raw, fa.raw)
        np.testing.assert_array_equal(loaded.scaled, fa.scaled)
        np.testing.assert_array_equal(loaded.presence, presence)
        t = loaded.tensor_at(0)
        assert t.pixel_id == "f:2021:0:0"
        attr.save_field_attribution(loaded, tmp_path / "again.atr")
        assert (tmp_path / "again.atr").read_bytes() == path.read_bytes()
