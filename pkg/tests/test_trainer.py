import numpy as np
import pytest
import torch
import torch.nn as nn

from augmentation.policies import make_policy
from config import LABELS, TrainConfig
from dataset.splits import stratified_split
from models.backbones import SCRATCH_PREPROCESSING, Preprocessing
from models.scratch import ModelConfig, build_embedding_mlp, build_model
from training.data import ImageSource, SplitDataset, TensorSource, build_datasets
from training.trainer import Trainer, TrainingDivergedError, make_optimizer, train
from tests.helpers import make_manifest


@pytest.fixture
def manifest():
    return make_manifest({"walking_running": 20, "sitting": 20, "standing": 20})


@pytest.fixture
def splits(manifest):
    return stratified_split(manifest, seed=42)


@pytest.fixture
def features(manifest):
    """One-hot class direction plus noise: separable but not trivially"""
    rng = np.random.default_rng(0)
    rows = {}
    for record in manifest.records:
        row = rng.normal(0.0, 0.6, size=8)
        row[LABELS.index(record.label)] += 2.0
        rows[record.image_id] = row
    return TensorSource(rows, {r.image_id: r.label for r in manifest.records})


def _spec(resolution):
    return Preprocessing(resolution=resolution, mean=SCRATCH_PREPROCESSING.mean, std=SCRATCH_PREPROCESSING.std)


def _cfg(**overrides):
    values = dict(lr=1e-2, batch_size=8, max_epochs=15, patience=5, seed=3, device="cpu")
    values.update(overrides)
    return TrainConfig(**values)


def test_learns_separable_features(features, splits):
    model, log = train(build_embedding_mlp(8, 3, seed=0), splits, _cfg(), features)
    assert log.best_metric > 0.6
    assert 1 <= log.best_epoch <= log.stopped_epoch
    assert log.epochs[0].epoch == 1
    assert set(log.epochs[0].val) == {"accuracy", "precision_macro", "recall_macro", "f1_macro"}


def test_patience_one_with_constant_metric_stops_at_epoch_two(features, splits):
    model = build_model(ModelConfig(family="fnn_base", input_shape=(8,), hidden=[], num_classes=3))
    _, log = train(model, splits, _cfg(lr=1e-12, weight_decay=0.0, patience=1, max_epochs=10), features)
    assert log.stopped_epoch == 2
    assert log.early_stopped
    assert log.best_epoch == 1


def test_best_epoch_weights_restored(features, splits):
    cfg = _cfg(max_epochs=8, patience=8)
    model, log = train(build_embedding_mlp(8, 3, seed=1), splits, cfg, features)
    datasets = build_datasets(features, splits, cfg, LABELS)
    report = Trainer(model, cfg, LABELS).evaluate(datasets["val"])
    assert report.metric(log.metric_name) == pytest.approx(log.best_metric)


def test_same_seed_same_weights_and_log(features, splits):
    cfg = _cfg(max_epochs=4)
    a, log_a = train(build_embedding_mlp(8, 3, seed=2), splits, cfg, features)
    b, log_b = train(build_embedding_mlp(8, 3, seed=2), splits, cfg, features)
    assert log_a.to_json_dict() == log_b.to_json_dict()
    for (name, pa), (_, pb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert torch.equal(pa, pb), name
    assert "wall_clock_seconds" not in log_a.to_json_dict()


def test_decoupled_weight_decay():
    layer = nn.Linear(3, 2)
    before = layer.weight.detach().clone()
    optimizer = make_optimizer(layer, TrainConfig(lr=0.1, weight_decay=0.5))
    layer.weight.grad = torch.zeros_like(layer.weight)
    layer.bias.grad = torch.zeros_like(layer.bias)
    optimizer.step()
    assert torch.allclose(layer.weight, before * (1 - 0.1 * 0.5))


def test_divergence_reports_epoch(features, splits):
    model = build_embedding_mlp(8, 3, seed=0)
    with torch.no_grad():
        model.layers[0].weight.fill_(float("nan"))
    with pytest.raises(TrainingDivergedError) as info:
        train(model, splits, _cfg(), features)
    assert info.value.epoch == 1
    assert info.value.last_finite_epoch == 0


def test_feature_width_mismatch_rejected(features, splits):
    with pytest.raises(ValueError, match="shape"):
        train(build_embedding_mlp(5, 3), splits, _cfg(), features)


def test_progress_callback_sees_every_epoch(features, splits):
    seen = []
    train(build_embedding_mlp(8, 3), splits, _cfg(max_epochs=3, patience=3), features, progress_callback=lambda e, total, loss, report: seen.append(e))
    assert seen == [1, 2, 3]


def test_augmentation_seed_depends_on_epoch(small_manifest, image_cache):
    source = ImageSource(small_manifest, image_cache, preprocessing=_spec(16))
    ids = small_manifest.ids[:2]
    dataset = SplitDataset(source, ids, LABELS, policy=make_policy("all_combined", 16), seed=0)
    dataset.set_epoch(1)
    first = dataset[0][0]
    assert torch.equal(first, dataset[0][0])
    dataset.set_epoch(2)
    assert not torch.equal(first, dataset[0][0])


def test_only_train_split_is_augmented(small_manifest, image_cache):
    splits = stratified_split(small_manifest, seed=0)
    source = ImageSource(small_manifest, image_cache, preprocessing=_spec(16))
    datasets = build_datasets(source, splits, _cfg(augmentation="horizontal_flip", resolution=16), LABELS)
    assert datasets["train"].policy is not None
    assert datasets["val"].policy is None and datasets["test"].policy is None
    x, y = datasets["val"][0]
    assert x.shape == (3, 16, 16) and 0 <= y < 3


def test_binary_class_order_filters_images(features, splits):
    datasets = build_datasets(features, splits, _cfg(), ["sitting", "standing"])
    labels = {features.labels[i] for i in datasets["train"].ids}
    assert labels == {"sitting", "standing"}