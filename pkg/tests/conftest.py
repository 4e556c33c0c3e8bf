import os

import pytest
import torch

from config import Config
from models.backbones import handle_from_model
from tests.helpers import CANONICAL, CharTokenizer, make_manifest, write_images


def pytest_collection_modifyitems(config, items):
    if os.getenv("HAR_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set HAR_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def small_manifest():
    return make_manifest({"walking_running": 10, "sitting": 10, "standing": 10})


@pytest.fixture
def canonical_manifest():
    return make_manifest(CANONICAL, width=640, height=480)


@pytest.fixture
def image_cache(tmp_path, small_manifest):
    return write_images(small_manifest, tmp_path / "images")


@pytest.fixture
def isolated_config(monkeypatch, tmp_path):
    """Keep CLI overrides of the Config class and hub variables out of other tests"""
    for name in ("CACHE_DIR", "RUN_DIR", "OFFLINE", "DEVICE"):
        monkeypatch.setattr(Config, name, getattr(Config, name))
    monkeypatch.setattr(Config, "DEVICE", "cpu")
    monkeypatch.setenv("HF_HUB_CACHE", str(tmp_path / "hub"))
    monkeypatch.setenv("HF_HUB_OFFLINE", "1")
    return Config


@pytest.fixture
def tiny_vit():
    from transformers import AutoModel, ViTConfig

    config = ViTConfig(
        image_size=32,
        patch_size=8,
        num_channels=3,
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=4,
        intermediate_size=64,
    )
    torch.manual_seed(0)
    model = AutoModel.from_config(config, attn_implementation="eager")
    return handle_from_model("vit", model, weights_id="tiny-vit")


@pytest.fixture
def tiny_clip():
    from transformers import AutoModel, CLIPConfig

    config = CLIPConfig(
        text_config={
            "vocab_size": 64,
            "hidden_size": 32,
            "num_hidden_layers": 2,
            "num_attention_heads": 4,
            "intermediate_size": 64,
            "max_position_embeddings": 16,
        },
        vision_config={
            "image_size": 32,
            "patch_size": 8,
            "hidden_size": 32,
            "num_hidden_layers": 2,
            "num_attention_heads": 4,
            "intermediate_size": 64,
        },
        projection_dim=16,
    )
    torch.manual_seed(0)
    model = AutoModel.from_config(config, attn_implementation="eager")
    return handle_from_model("clip", model, tokenizer=CharTokenizer(), weights_id="tiny-clip")
