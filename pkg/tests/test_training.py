import numpy as np
import pytest

from tsattr import lstm, training
from tsattr.data import split_cross_validation
from tsattr.errors import TrainingFailureError, UndefinedStatisticError


class TestEvaluate:
    def test_perfect_prediction(self):
        y = np.array([2.0, 3.0, 4.0, 5.0])
        m = training.evaluate(y, y, ["a", "a", "b", "b"])
        assert m["subfield"] == {"mae": 0.0, "rmse": 0.0, "r2": 1.0}
        assert m["field"] == {"mae": 0.0, "rmse": 0.0, "r2": 1.0}

    def test_mean_predictor_r2_zero(self):
        y = np.array([2.0, 4.0, 6.0, 8.0])
        pred = np.full(4, y.mean())
        m = training.evaluate(pred, y, ["a", "a", "b", "b"])
        assert m["subfield"]["r2"] == pytest.approx(0.0)

    def test_hand_example(self):
        m = training.evaluate(np.array([3.0, 3.0]), np.array([2.0, 4.0]), ["a", "b"])
        assert m["subfield"]["mae"] == pytest.approx(1.0)
        assert m["subfield"]["rmse"] == pytest.approx(1.0)
        assert m["subfield"]["r2"] == pytest.approx(0.0)

    def test_zero_variance_target_undefined(self):
        with pytest.raises(UndefinedStatisticError):
            training.evaluate(np.array([1.0, 2.0]), np.array([3.0, 3.0]), ["a", "b"])

    def test_field_level_averages_first(self):
        # two pixels per field; field means are (3, 5) vs predictions (4, 4)
        y = np.array([2.0, 4.0, 4.0, 6.0])
        pred = np.array([3.0, 5.0, 3.0, 5.0])
        m = training.evaluate(pred, y, ["a", "a", "b", "b"])
        assert m["field"]["mae"] == pytest.approx(1.0)
        assert m["field"]["r2"] == pytest.approx(0.0)


class TestSelectBestFold:
    def _metrics(self, r2s):
        return [{"field": {"r2": r, "mae": 0, "rmse": 0},
                 "subfield": {"r2": r, "mae": 0, "rmse": 0}} for r in r2s]

    def test_argmax(self):
        assert training.select_best_fold(self._metrics([0.68, 0.79])) == 1

    def test_tie_breaks_low_index(self):
        assert training.select_best_fold(self._metrics([0.5, 0.5])) == 0

    def test_fold_table(self):
        # field-level column of a 10-fold table; the top row wins
        field_r2 = [0.79, 0.84, 0.81, 0.85, 0.61, 0.60, 0.89, 0.71, 0.57, 0.64]
        assert training.select_best_fold(self._metrics(field_r2)) == 6


class TestTrainSingle:
    def test_one_pixel_memorization(self):
        cfg = training.TrainingConfig(folds=2, epochs=400, batch_size=1,
                                      learning_rate=5e-2, hidden_size=4, n_layers=1,
                                      dropout_rate=0.0, seed=0)
        x = np.random.default_rng(0).normal(size=(1, 2, 3))
        y = np.array([4.2])
        _, history = training.train_single(x, y, cfg)
        assert history[-1] < 0.05
        assert history[-1] < history[0]

    def test_fixed_seed_reproduces_parameters(self):
        cfg = training.TrainingConfig(folds=2, epochs=2, batch_size=8,
                                      hidden_size=6, dropout_rate=0.3, seed=13)
        rng = np.random.default_rng(5)
        x = rng.normal(size=(32, 3, 4))
        y = rng.normal(loc=4, size=32)
        p1, h1 = training.train_single(x, y, cfg)
        p2, h2 = training.train_single(x, y, cfg)
        assert h1 == h2
        for name in p1.tensors:
            np.testing.assert_array_equal(p1.tensors[name], p2.tensors[name])

    def test_non_finite_loss_raises_with_epoch(self):
        cfg = training.TrainingConfig(folds=2, epochs=3, batch_size=4, hidden_size=4,
                                      dropout_rate=0.0, seed=0)
        x = np.random.default_rng(0).normal(size=(8, 2, 3))
        x[0, 0, 0] = np.nan
        with pytest.raises(TrainingFailureError) as err:
            training.train_single(x, np.ones(8), cfg)
        assert err.value.epoch == 0

    def test_loss_decreases_on_linear_data(self, tiny_linear_dataset):
        manifest, _, _ = tiny_linear_dataset
        dataset = training.assemble_pixels(manifest, clean=False)
        cfg = training.TrainingConfig(folds=2, epochs=10, batch_size=32,
                                      hidden_size=8, n_layers=1, dropout_rate=0.0,
                                      learning_rate=3e-3, seed=0)
        _, history = training.train_single(dataset.values, dataset.yields, cfg)
        assert history[9] < history[0]


class TestCrossValidatedTraining:
    def test_fold_results_and_determinism(self, tiny_linear_dataset):
        manifest, _, _ = tiny_linear_dataset
        dataset = training.assemble_pixels(manifest, clean=True)
        splits = split_cross_validation(manifest, k=2, seed=0)
        cfg = training.TrainingConfig(folds=2, epochs=2, batch_size=16, hidden_size=4,
                                      n_layers=1, dropout_rate=0.3, seed=3)
        a = training.train_cross_validation(dataset, splits, cfg)
        b = training.train_cross_validation(dataset, splits, cfg)
        assert [r.fold for r in a] == [0, 1]
        for ra, rb in zip(a, b):
            assert ra.metrics == rb.metrics
            for name in ra.params.tensors:
                np.testing.assert_array_equal(ra.params.tensors[name], rb.params.tensors[name])
        for r in a:
            assert set(r.val_keys).isdisjoint(r.train_keys)
            assert {"mae", "rmse", "r2"} == set(r.metrics["subfield"])

    def test_train_folds_subset(self, tiny_linear_dataset):
        manifest, _, _ = tiny_linear_dataset
        dataset = training.assemble_pixels(manifest, clean=False)
        splits = split_cross_validation(manifest, k=2, seed=0)
        cfg = training.TrainingConfig(folds=2, epochs=1, batch_size=16, hidden_size=4,
                                      n_layers=1, seed=3, train_folds=(1,))
        results = training.train_cross_validation(dataset, splits, cfg)
        assert [r.fold for r in results] == [1]

    def test_standardization_keeps_pads(self, tiny_linear_dataset):
        manifest, _, _ = tiny_linear_dataset
        dataset = training.assemble_pixels(manifest, clean=False)
        from tsattr.preprocess import apply_feature_stats, compute_feature_stats
        stats = compute_feature_stats(dataset.values, dataset.pad_mask)
        out = apply_feature_stats(dataset.values, dataset.pad_mask, stats)
        np.testing.assert_array_equal(out[dataset.pad_mask], dataset.values[dataset.pad_mask])
