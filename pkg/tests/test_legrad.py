import json

import numpy as np
import pytest
import torch

from config import LABELS
from explain.legrad import deletion_check, legrad_saliency, render_class_grid, render_overlay
from models.backbones import UnsupportedOperationError, attach_head
from models.scratch import ModelConfig, build_model


@pytest.fixture
def finetuned(tiny_vit):
    return attach_head(tiny_vit, num_classes=3, seed=0)


@pytest.fixture
def pixels():
    generator = torch.Generator().manual_seed(3)
    return torch.randn(3, 32, 32, generator=generator)


def test_map_on_patch_grid(finetuned, pixels):
    saliency = legrad_saliency(finetuned, pixels, "sitting", class_order=LABELS)
    grid = saliency.array
    assert grid.shape == (4, 4)
    assert grid.min() == pytest.approx(0.0)
    assert grid.max() == pytest.approx(1.0)
    assert saliency.layer_count == 2
    assert saliency.aggregation == "readout_row"
    assert saliency.target_class == "sitting"


def test_mean_rows_aggregation_available(finetuned, pixels):
    saliency = legrad_saliency(finetuned, pixels, 0, aggregation="mean_rows")
    assert saliency.array.shape == (4, 4)
    assert np.all((saliency.array >= 0) & (saliency.array <= 1))


def test_deterministic(finetuned, pixels):
    first = legrad_saliency(finetuned, pixels, 2)
    second = legrad_saliency(finetuned, pixels, 2)
    assert first.grid == second.grid


def test_zero_head_gives_degenerate_map(finetuned, pixels):
    with torch.no_grad():
        finetuned.head.weight.zero_()
        finetuned.head.bias.zero_()
    saliency = legrad_saliency(finetuned, pixels, 1)
    assert saliency.degenerate
    assert not saliency.array.any()


def test_unknown_target_class(finetuned, pixels):
    with pytest.raises(ValueError):
        legrad_saliency(finetuned, pixels, "jumping", class_order=LABELS)
    with pytest.raises(ValueError):
        legrad_saliency(finetuned, pixels, 3)


def test_scratch_models_have_no_saliency(pixels):
    model = build_model(ModelConfig(family="fnn_base", input_shape=(3, 32, 32), hidden=[8]))
    with pytest.raises(UnsupportedOperationError):
        legrad_saliency(model, pixels, 0)


def test_deletion_bounds(finetuned, pixels):
    saliency = legrad_saliency(finetuned, pixels, 0)
    empty = deletion_check(finetuned, pixels, saliency, k=0, target_class=0)
    assert empty.top_k_drop == 0.0 and empty.random_drop == 0.0
    # Masking every patch is the same deletion whichever order is used
    full = deletion_check(finetuned, pixels, saliency, k=16, target_class=0)
    assert full.top_k_drop == pytest.approx(full.random_drop, abs=1e-5)
    assert len(full.random_drops) == 20


def test_deletion_argument_checks(finetuned, pixels):
    saliency = legrad_saliency(finetuned, pixels, 0)
    with pytest.raises(ValueError, match="20"):
        deletion_check(finetuned, pixels, saliency, k=2, target_class=0, trials=5)
    with pytest.raises(ValueError):
        deletion_check(finetuned, pixels, saliency, k=17, target_class=0)


def test_deletion_is_seeded(finetuned, pixels):
    saliency = legrad_saliency(finetuned, pixels, 0)
    a = deletion_check(finetuned, pixels, saliency, k=3, target_class=0, seed=7, mask_mode="blur")
    b = deletion_check(finetuned, pixels, saliency, k=3, target_class=0, seed=7, mask_mode="blur")
    assert a.random_drops == b.random_drops
    assert a.mask_mode == "blur"


def test_overlays_written(tmp_path, finetuned, pixels):
    image = torch.randint(0, 256, (3, 32, 32), dtype=torch.uint8)
    maps = {label: legrad_saliency(finetuned, pixels, label, class_order=LABELS) for label in LABELS}
    overlay = render_overlay(image, maps["standing"], tmp_path / "overlay.png", prov={"seed": 0})
    grid = render_class_grid(image, maps, tmp_path / "classes.png")
    assert overlay.exists() and grid.exists()
    data = json.loads(overlay.with_suffix(".json").read_text())
    assert data["target_class"] == "standing"
    assert data["provenance"] == {"seed": 0}
    assert set(json.loads(grid.with_suffix(".json").read_text())["maps"]) == set(LABELS)
