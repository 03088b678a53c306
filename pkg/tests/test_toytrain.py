from __future__ import annotations

import numpy as np
import pytest

from specbalance.scheduler import Constant, Granularity, ScheduleConfig, ScheduleFunction
from specbalance.toytrain import (
    Activation,
    Dataset,
    DatasetKind,
    DivergenceDetected,
    Loss,
    TrainConfig,
    build_mlp,
    evaluate_loss,
    forward,
    history_to_csv,
    history_to_dict,
    history_to_json,
    loss_and_grads,
    make_dataset,
    make_teacher,
    split,
    subsample,
    train,
)


def train_config(seed=1, epochs=3, function=ScheduleFunction.SIGMOID, **kwargs) -> TrainConfig:
    schedule = ScheduleConfig(
        base_lr_schedule=Constant(kwargs.pop("eta0", 0.05)),
        function=function,
        s_above=kwargs.pop("s_above", 1.0),
        s_below=kwargs.pop("s_below", 1.0),
        granularity=Granularity.PER_BLOCK,
    )
    return TrainConfig(seed=seed, epochs=epochs, batch_size=16, schedule=schedule, **kwargs)


class TestDatasets:
    def test_same_inputs_bit_identical(self):
        a = make_dataset(DatasetKind.TEACHER_STUDENT, 64, seed=7)
        b = make_dataset(DatasetKind.TEACHER_STUDENT, 64, seed=7)
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.targets, b.targets)

    def test_different_seeds_differ(self):
        a = make_dataset(DatasetKind.TEACHER_STUDENT, 64, seed=7)
        b = make_dataset(DatasetKind.TEACHER_STUDENT, 64, seed=8)
        assert not np.array_equal(a.inputs, b.inputs)

    def test_blobs_are_balanced(self):
        ds = make_dataset(DatasetKind.TWO_CLASS_BLOBS, 100, seed=3)
        assert int((ds.targets == 0).sum()) == 50
        assert int((ds.targets == 1).sum()) == 50

    def test_noiseless_labels_match_the_teacher(self):
        ds = make_dataset(DatasetKind.TEACHER_STUDENT, 32, seed=5, noise=0.0)
        teacher = make_teacher(5)
        assert np.array_equal(ds.targets, forward(teacher, ds.inputs))

    def test_minimum_size(self):
        with pytest.raises(ValueError):
            make_dataset(DatasetKind.TEACHER_STUDENT, 1, seed=0)


class TestSubsample:
    def test_full_ratio_preserves_order(self):
        ds = make_dataset(DatasetKind.TEACHER_STUDENT, 50, seed=1)
        out = subsample(ds, 1.0, seed=2)
        assert np.array_equal(out.inputs, ds.inputs)
        assert np.array_equal(out.targets, ds.targets)

    def test_exact_size(self):
        ds = make_dataset(DatasetKind.TEACHER_STUDENT, 1000, seed=1)
        assert subsample(ds, 0.1, seed=2).n == 100
        assert subsample(ds, 0.0005, seed=2).n == 1  # clamps up to one example

    def test_nested_ratios_are_subsets(self):
        ds = make_dataset(DatasetKind.TEACHER_STUDENT, 200, seed=1)
        rows = {tuple(x) for x in subsample(ds, 0.5, seed=9).inputs}
        small = subsample(ds, 0.1, seed=9)
        assert all(tuple(x) in rows for x in small.inputs)

    def test_deterministic(self):
        ds = make_dataset(DatasetKind.TEACHER_STUDENT, 100, seed=1)
        a = subsample(ds, 0.3, seed=4)
        b = subsample(ds, 0.3, seed=4)
        assert np.array_equal(a.inputs, b.inputs)

    def test_ratio_range(self):
        ds = make_dataset(DatasetKind.TEACHER_STUDENT, 10, seed=1)
        with pytest.raises(ValueError):
            subsample(ds, 0.0, seed=1)
        with pytest.raises(ValueError):
            subsample(ds, 1.5, seed=1)


class TestGradients:
    @staticmethod
    def finite_difference_check(model, x, y, loss, rel_tol=1e-4):
        _, grads_w, grads_b = loss_and_grads(model, x, y, loss)
        eps = 1e-6
        params = [(w.values, gw) for w, gw in zip(model.weights, grads_w)]
        params += list(zip(model.biases, grads_b))
        for values, grad in params:
            flat = values.ravel()
            gflat = grad.ravel()
            for idx in range(0, flat.size, max(1, flat.size // 25)):
                orig = flat[idx]
                flat[idx] = orig + eps
                up = evaluate_loss(model, Dataset(x, y), loss)
                flat[idx] = orig - eps
                down = evaluate_loss(model, Dataset(x, y), loss)
                flat[idx] = orig
                numeric = (up - down) / (2 * eps)
                scale = max(abs(numeric), abs(gflat[idx]), 1e-8)
                assert abs(numeric - gflat[idx]) / scale < rel_tol

    def test_mse_gradients_match_finite_differences(self):
        rng = np.random.default_rng(0)
        model = build_mlp([4, 6, 1], Activation.TANH, seed=1)
        self.finite_difference_check(model, rng.standard_normal((8, 4)), rng.standard_normal((8, 1)), Loss.MSE)

    def test_cross_entropy_gradients_match_finite_differences(self):
        rng = np.random.default_rng(1)
        model = build_mlp([4, 6, 2], Activation.TANH, seed=2)
        labels = rng.integers(0, 2, size=12)
        self.finite_difference_check(model, rng.standard_normal((12, 4)), labels, Loss.CROSS_ENTROPY)

    def test_relu_gradients_match_finite_differences(self):
        rng = np.random.default_rng(2)
        model = build_mlp([5, 8, 1], Activation.RELU, seed=3)
        # keep away from the kink: shift pre-activations by perturbing inputs only
        self.finite_difference_check(model, rng.standard_normal((6, 5)), rng.standard_normal((6, 1)), Loss.MSE)


class TestTrain:
    def make_data(self, n=96, seed=0):
        pool = make_dataset(DatasetKind.TEACHER_STUDENT, n + 32, seed=seed)
        return split(pool, n)

    def test_fixed_seed_reproduces_history_exactly(self):
        train_pool, test = self.make_data()
        histories = []
        for _ in range(2):
            model = build_mlp([16, 16, 1], Activation.TANH, seed=[5, 100])
            histories.append(train(model, train_pool, train_config(seed=5), test))
        assert history_to_json(histories[0]) == history_to_json(histories[1])

    def test_zero_s_matches_baseline_bit_exactly(self):
        train_pool, test = self.make_data()
        runs = {}
        for name, function, s in [("baseline", None, 1.0), ("zero_s", ScheduleFunction.SIGMOID, 0.0)]:
            model = build_mlp([16, 16, 1], Activation.TANH, seed=[3, 100])
            cfg = train_config(seed=3, epochs=4, function=function, s_above=s, s_below=s)
            runs[name] = train(model, train_pool, cfg, test)
        assert history_to_json(runs["baseline"]) == history_to_json(runs["zero_s"])

    def test_losses_finite_and_recorded_per_epoch(self):
        train_pool, test = self.make_data()
        model = build_mlp([16, 16, 1], Activation.TANH, seed=[1, 100])
        history = train(model, train_pool, train_config(epochs=5), test)
        assert len(history.per_epoch) == 5
        assert not history.diverged
        for r in history.per_epoch:
            assert np.isfinite(r.train_loss) and np.isfinite(r.test_loss)

    def test_recorded_lrs_respect_sigmoid_bounds(self):
        train_pool, test = self.make_data()
        model = build_mlp([16, 32, 32, 1], Activation.TANH, seed=[2, 100])
        cfg = train_config(seed=2, epochs=4, s_above=2.0, s_below=1.0, eta0=0.02)
        history = train(model, train_pool, cfg, test)
        for r in history.per_epoch:
            for lr in r.per_layer_lrs.values():
                assert 0.02 * 10 ** (-0.5) <= lr <= 0.02 * 10 ** 1.0

    def test_small_layers_receive_base_rate(self):
        train_pool, test = self.make_data()
        model = build_mlp([16, 32, 32, 1], Activation.TANH, seed=[2, 100])
        history = train(model, train_pool, train_config(seed=2, epochs=1), test)
        # the 32x1 output layer is below the analysis minimum
        assert history.per_epoch[0].per_layer_lrs["layer_2"] == 0.05

    def test_divergence_raises_with_truncated_history(self):
        train_pool, test = self.make_data()
        model = build_mlp([16, 16, 1], Activation.TANH, seed=[4, 100])
        cfg = train_config(seed=4, epochs=50, eta0=1e4)
        with np.errstate(over="ignore", invalid="ignore"), pytest.raises(DivergenceDetected) as excinfo:
            train(model, train_pool, cfg, test)
        history = excinfo.value.history
        assert history.diverged
        assert len(history.per_epoch) < 50

    def test_batch_shrinks_to_dataset_size(self):
        train_pool, test = self.make_data()
        cfg = train_config(seed=1, epochs=2, subsample_ratio=0.05)  # 4 examples < batch 16
        model = build_mlp([16, 16, 1], Activation.TANH, seed=[1, 100])
        history = train(model, train_pool, cfg, test)
        assert len(history.per_epoch) == 2

    def test_cross_entropy_training_runs(self):
        pool = make_dataset(DatasetKind.TWO_CLASS_BLOBS, 128, seed=0)
        train_pool, test = split(pool, 96)
        model = build_mlp([16, 16, 2], Activation.TANH, seed=[1, 100])
        cfg = train_config(seed=1, epochs=5, loss=Loss.CROSS_ENTROPY, eta0=0.1)
        history = train(model, train_pool, cfg, test)
        assert history.per_epoch[-1].train_loss < history.per_epoch[0].train_loss

    def test_config_validation(self):
        schedule = ScheduleConfig(base_lr_schedule=Constant(0.05))
        with pytest.raises(ValueError):
            TrainConfig(seed=1, epochs=0, batch_size=4, schedule=schedule)
        with pytest.raises(ValueError):
            TrainConfig(seed=1, epochs=1, batch_size=0, schedule=schedule)
        with pytest.raises(ValueError):
            TrainConfig(seed=1, epochs=1, batch_size=4, schedule=schedule, subsample_ratio=0.0)


class TestHistorySerialization:
    def make_history(self):
        pool = make_dataset(DatasetKind.TEACHER_STUDENT, 64, seed=0)
        train_pool, test = split(pool, 48)
        model = build_mlp([16, 16, 1], Activation.TANH, seed=[1, 100])
        return train(model, train_pool, train_config(epochs=2), test)

    def test_json_shape(self):
        history = self.make_history()
        d = history_to_dict(history)
        assert d["diverged"] is False
        assert len(d["per_epoch"]) == 2
        assert set(d["per_epoch"][0]) == {"epoch", "train_loss", "test_loss", "alpha_std", "per_layer_lrs"}

    def test_csv_shape(self):
        history = self.make_history()
        lines = history_to_csv(history).splitlines()
        assert lines[0] == "epoch,train_loss,test_loss,alpha_std,lr_layer_0,lr_layer_1"
        assert len(lines) == 3
