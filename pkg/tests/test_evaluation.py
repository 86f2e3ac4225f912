import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcl_sim.data import Dataset
from fcl_sim.evaluation import (
    FinetuneConfig,
    aggregate_metrics,
    evaluate,
    finetune_federated,
    finetune_local,
    metrics_from_confusion,
)
from fcl_sim.exceptions import ConfigError, ShapeError, ValidationError
from fcl_sim.numeric_core import ArchitectureConfig, Layer, ModelParams, attach_classifier, init_params

ARCH = ArchitectureConfig((32,), 32)


def separable(rng, n_per_class=20, dim=4):
    centers = np.array([[0.85, 0.15], [0.15, 0.85]])
    samples, labels = [], []
    for label, center in enumerate(centers):
        base = np.tile(np.resize(center, dim), (n_per_class, 1))
        samples.append(np.clip(base + rng.normal(0.0, 0.05, base.shape), 0.0, 1.0))
        labels.append(np.full(n_per_class, label))
    return Dataset(np.concatenate(samples), np.concatenate(labels), 2)


def assert_same_params(a, b, atol=0.0):
    assert a.architecture() == b.architecture()
    for x, y in zip(a.arrays(), b.arrays()):
        np.testing.assert_allclose(x, y, atol=atol, rtol=0)


class TestMetrics:
    def test_two_class_example(self):
        metrics = metrics_from_confusion(np.array([[2, 0], [1, 1]]))
        np.testing.assert_allclose(metrics.per_class_recall, [1.0, 0.5])
        np.testing.assert_allclose(metrics.per_class_precision, [2 / 3, 1.0])
        assert metrics.mean_recall == pytest.approx(0.75)
        assert metrics.mean_precision == pytest.approx(5 / 6)

    def test_perfect(self):
        metrics = metrics_from_confusion(np.diag([3, 1, 4]))
        assert metrics.mean_recall == metrics.mean_precision == 1.0

    def test_constant_predictor(self):
        metrics = metrics_from_confusion(np.array([[5, 0], [5, 0]]))
        assert metrics.mean_recall == 0.5
        assert metrics.per_class_precision.tolist() == [0.5, 0.0]

    def test_absent_classes_are_excluded(self):
        metrics = metrics_from_confusion(np.array([[3, 1, 0], [0, 0, 0], [0, 2, 2]]))
        assert metrics.classes_present.tolist() == [True, False, True]
        assert metrics.mean_recall == pytest.approx((0.75 + 0.5) / 2)

    def test_empty_confusion(self):
        with pytest.raises(ValidationError):
            metrics_from_confusion(np.zeros((2, 2)))

    def test_evaluate_on_argmax_classifier(self):
        model = ModelParams([Layer(np.eye(2), np.zeros(2))], [], Layer(np.eye(2), np.zeros(2)))
        test = Dataset(np.array([[0.9, 0.1], [0.2, 0.8], [0.7, 0.3]]), np.array([0, 1, 1]), 2)
        metrics = evaluate(model, test)
        np.testing.assert_array_equal(metrics.confusion, [[1, 0], [1, 1]])
        assert metrics.mean_recall == pytest.approx(0.75)

    def test_evaluate_errors(self):
        model = ModelParams([Layer(np.eye(2), np.zeros(2))], [], Layer(np.eye(2), np.zeros(2)))
        with pytest.raises(ValidationError):
            evaluate(model, Dataset(np.zeros((0, 2)), np.zeros(0), 2))
        with pytest.raises(ShapeError):
            evaluate(model, Dataset(np.zeros((1, 2)), np.array([2]), 3))

    @pytest.mark.parametrize("n_per_class", [200, 2000])
    def test_random_guessing_scores_one_over_n_classes(self, n_per_class):
        # identity classifier on uniform noise: argmax is a uniform guess independent of the label
        n_classes = 5
        rng = np.random.default_rng(n_per_class)
        model = ModelParams(
            [Layer(np.eye(n_classes), np.zeros(n_classes))], [], Layer(np.eye(n_classes), np.zeros(n_classes))
        )
        test = Dataset(
            rng.random((n_classes * n_per_class, n_classes)),
            np.repeat(np.arange(n_classes), n_per_class),
            n_classes,
        )

        chance = 1 / n_classes
        sigma = np.sqrt(chance * (1 - chance) / (n_per_class * n_classes))
        assert abs(evaluate(model, test).mean_recall - chance) <= 3 * sigma

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_evaluate_ignores_sample_order(self, seed):
        rng = np.random.default_rng(seed)
        model = attach_classifier(init_params(4, ARCH, feature_dim=4, seed=1), 3, seed=2)
        samples = rng.random((30, 4))
        labels = rng.integers(0, 3, 30)
        order = rng.permutation(30)

        metrics = evaluate(model, Dataset(samples, labels, 3))
        shuffled = evaluate(model, Dataset(samples[order], labels[order], 3))
        np.testing.assert_array_equal(metrics.confusion, shuffled.confusion)
        assert metrics.mean_recall == shuffled.mean_recall
        assert metrics.mean_precision == shuffled.mean_precision


class TestAggregate:
    def test_local_averages_device_means(self):
        a = metrics_from_confusion(np.array([[1, 4], [4, 1]]))
        b = metrics_from_confusion(np.array([[2, 3], [3, 2]]))
        assert aggregate_metrics([a, b], "local").mean_recall == pytest.approx(0.3)

    def test_federated_pools_confusions(self):
        a = metrics_from_confusion(np.array([[1, 4], [0, 0]]))
        b = metrics_from_confusion(np.array([[0, 0], [6, 4]]))

        local = aggregate_metrics([a, b], "local")
        assert local.mean_recall == pytest.approx(0.3)
        assert local.mean_precision == pytest.approx(1.0)
        np.testing.assert_allclose(local.per_class_recall, [0.2, 0.4])

        pooled = aggregate_metrics([a, b], "federated")
        np.testing.assert_array_equal(pooled.confusion, [[1, 4], [6, 4]])
        assert pooled.mean_recall == pytest.approx(0.3)
        assert pooled.mean_precision == pytest.approx((1 / 7 + 0.5) / 2)

    def test_errors(self):
        with pytest.raises(ValidationError):
            aggregate_metrics([], "local")
        with pytest.raises(ValidationError):
            aggregate_metrics([metrics_from_confusion(np.eye(2))], "global")


@pytest.fixture
def pretrained():
    return init_params(4, ARCH, feature_dim=4, seed=3)


class TestFinetune:
    def test_step_schedule(self, rng, pretrained):
        history = []
        cfg = FinetuneConfig(epochs=17, lr=1e-3, local_batch_size=8)
        finetune_local(separable(rng), pretrained, cfg, history=history)
        lrs = [entry["lr"] for entry in history]
        assert lrs[11] == 1e-3
        assert lrs[12] == pytest.approx(2e-4)
        assert lrs[16] == pytest.approx(4e-5)

    def test_zero_epochs_keeps_fresh_head(self, rng, pretrained):
        model = finetune_local(separable(rng), pretrained, FinetuneConfig(epochs=0, seed=5))
        assert_same_params(model, attach_classifier(pretrained, 2, seed=5))
        assert model.projection_layers == []

    def test_learns_separable_classes(self, rng, pretrained):
        data = separable(rng)
        cfg = FinetuneConfig(epochs=100, lr=1e-2, local_batch_size=16, milestones=(1000,))
        model = finetune_local(data, pretrained, cfg)
        assert evaluate(model, data).mean_recall >= 0.99

    def test_pretrained_model_is_untouched(self, rng, pretrained):
        before = pretrained.copy()
        finetune_local(separable(rng), pretrained, FinetuneConfig(epochs=3, lr=1e-2))
        assert_same_params(pretrained, before)

    def test_linear_probe_freezes_encoder(self, rng, pretrained):
        cfg = FinetuneConfig(epochs=5, lr=1e-2, linear_probe=True)
        model = finetune_local(separable(rng), pretrained, cfg)
        for tuned, original in zip(model.encoder_layers, pretrained.encoder_layers):
            np.testing.assert_array_equal(tuned.weight, original.weight)
            np.testing.assert_array_equal(tuned.bias, original.bias)
        fresh = attach_classifier(pretrained, 2, seed=cfg.seed).classifier
        assert not np.array_equal(model.classifier.weight, fresh.weight)

    def test_single_device_federated_equals_local(self, rng, pretrained):
        data = separable(rng)
        cfg = FinetuneConfig(
            epochs=6, rounds=6, lr=1e-3, local_batch_size=8, federated_batch_size=8, milestones=(100,)
        )
        assert_same_params(
            finetune_federated([data], pretrained, cfg), finetune_local(data, pretrained, cfg)
        )

    def test_identical_devices_match_centralized_training(self, rng, pretrained):
        data = separable(rng)
        cfg = FinetuneConfig(
            epochs=10,
            rounds=10,
            lr=1e-3,
            local_batch_size=len(data),
            federated_batch_size=len(data),
            milestones=(100,),
        )
        history, local_history = [], []
        federated = finetune_federated([data, data, data], pretrained, cfg, history=history)
        central = finetune_local(data, pretrained, cfg, history=local_history)

        assert [h["round"] for h in history] == list(range(10))
        np.testing.assert_allclose(
            [h["loss"] for h in history], [h["loss"] for h in local_history], atol=1e-8, rtol=0
        )
        assert_same_params(federated, central, atol=1e-8)

    def test_unlabelled_devices_sit_out(self, rng, pretrained):
        data = separable(rng)
        empty = Dataset(np.zeros((0, 4)), np.zeros(0), 2)
        cfg = FinetuneConfig(rounds=3, lr=1e-3, federated_batch_size=8)
        assert_same_params(
            finetune_federated([data, empty], pretrained, cfg),
            finetune_federated([data], pretrained, cfg),
        )

    def test_errors(self, rng, pretrained):
        empty = Dataset(np.zeros((0, 4)), np.zeros(0), 2)
        with pytest.raises(ValidationError):
            finetune_local(empty, pretrained, FinetuneConfig())
        with pytest.raises(ValidationError):
            finetune_federated([empty, empty], pretrained, FinetuneConfig())

    @pytest.mark.parametrize(
        "kwargs",
        [{"mode": "central"}, {"label_fraction": 0.0}, {"epochs": -1}, {"lr_decay": 0.0}, {"local_batch_size": 0}],
    )
    def test_config_errors(self, kwargs):
        with pytest.raises(ConfigError):
            FinetuneConfig(**kwargs)
