import pytest

from augmentation.policies import UnknownPolicyError
from config import TrainConfig
from training.repeats import aggregate, augmentation_sweep, repeat_runs, repeat_seed, sweep_table_to_frame
from tests.helpers import report_with_accuracy


def test_mean_and_sample_sigma():
    reports = [report_with_accuracy(c, 50) for c in (30, 32, 31, 34, 33)]
    mean, sigma = aggregate(reports)
    assert mean["accuracy"] == pytest.approx(0.64)
    assert sigma["accuracy"] == pytest.approx(0.0316228, abs=1e-6)


def test_identical_repeats_have_zero_sigma():
    mean, sigma = aggregate([report_with_accuracy(7)] * 3)
    assert sigma["accuracy"] == 0.0
    assert mean["accuracy"] == pytest.approx(0.7)


def test_repeat_seeds_are_derived_and_distinct():
    seen = []

    def run_fn(cfg, index):
        seen.append((index, cfg.seed))
        return report_with_accuracy(5 + index)

    result = repeat_runs("cnn_base", TrainConfig(seed=42), k=4, run_fn=run_fn)
    assert [s for _, s in seen] == [repeat_seed(42, i) for i in range(4)]
    assert len(set(result.seeds)) == 4
    assert result.repeats == 4
    assert not result.partial


def test_failed_repeat_marks_partial():
    def run_fn(cfg, index):
        if index == 1:
            raise RuntimeError("diverged")
        return report_with_accuracy(6)

    result = repeat_runs("vit", TrainConfig(), k=3, run_fn=run_fn)
    assert result.partial
    assert result.repeats == 2
    assert result.failures == {1: "diverged"}


def test_needs_at_least_two_repeats():
    with pytest.raises(ValueError):
        repeat_runs("vit", TrainConfig(), k=1, run_fn=lambda cfg, i: report_with_accuracy(5))


def test_sweep_sorted_by_accuracy_and_stable_on_ties():
    scores = {"baseline": 5, "horizontal_flip": 7, "vertical_flip": 5, "grayscale": 9}

    def run_fn(cfg, index):
        return report_with_accuracy(scores[cfg.augmentation])

    rows = augmentation_sweep(list(scores), TrainConfig(), run_fn)
    assert [r.policy for r in rows] == ["grayscale", "horizontal_flip", "baseline", "vertical_flip"]
    frame = sweep_table_to_frame(rows)
    assert list(frame.columns) == ["policy", "accuracy", "precision", "recall", "f1"]
    assert frame.loc[0, "accuracy"] == pytest.approx(0.9)


def test_sweep_rejects_unknown_policy_before_running():
    calls = []
    with pytest.raises(UnknownPolicyError, match="cutout"):
        augmentation_sweep(["baseline", "cutout"], TrainConfig(), lambda cfg, i: calls.append(i))
    assert calls == []
