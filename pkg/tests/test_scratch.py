import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F

from models.scratch import (
    ModelConfig,
    ModelConfigError,
    NonFiniteActivationError,
    build_embedding_mlp,
    build_feature_mlp,
    build_model,
    count_parameters,
    default_model_config,
    forward,
    set_mode,
)


def test_cnn_base_shapes_and_parameters():
    model = build_model(default_model_config("cnn_base", (3, 16, 16), 3, seed=0))
    # conv 3->32, 32->64, 64->128, FC 128*2*2 -> 256, FC 256 -> 3
    expected = (3 * 32 * 9 + 32) + (32 * 64 * 9 + 64) + (64 * 128 * 9 + 128) + (512 * 256 + 256) + (256 * 3 + 3)
    assert count_parameters(model) == expected
    assert forward(model, torch.rand(4, 3, 16, 16)).shape == (4, 3)


def test_cnn_gen_adds_batch_norm_and_dropout():
    base = build_model(default_model_config("cnn_base", (3, 16, 16), 3))
    model = build_model(default_model_config("cnn_gen", (3, 16, 16), 3))

    def count(net, kind):
        return sum(1 for m in net.modules() if isinstance(m, kind))

    assert (count(model, nn.BatchNorm2d), count(model, nn.Dropout)) == (3, 4)
    assert (count(base, nn.BatchNorm2d), count(base, nn.Dropout)) == (0, 0)
    assert count(model, nn.Conv2d) == count(base, nn.Conv2d) == 3
    assert model.config.batch_norm


@torch.no_grad()
def test_cnn_flatten_width_at_224():
    model = build_model(default_model_config("cnn_base", (3, 224, 224), 3))
    flatten = next(i for i, m in enumerate(model.layers) if isinstance(m, nn.Flatten))
    features = model.layers[:flatten](torch.rand(1, 3, 224, 224))
    assert features.shape == (1, 128, 28, 28)
    assert model.layers[flatten + 1].in_features == 100352


def test_cnn_rejects_indivisible_resolution():
    with pytest.raises(ModelConfigError, match="divisible"):
        build_model(default_model_config("cnn_base", (3, 20, 20), 3))


def test_fnn_without_hidden_layers_is_affine():
    model = build_model(ModelConfig(family="fnn_base", input_shape=(2,), hidden=[], num_classes=2))
    assert count_parameters(model) == 6
    linear = model.layers[1]
    x = torch.tensor([[1.0, 2.0]])
    assert torch.allclose(forward(model, x), x @ linear.weight.T + linear.bias)


def test_same_seed_same_weights():
    a = build_model(default_model_config("fnn_base", (3, 8, 8), 3, seed=4))
    b = build_model(default_model_config("fnn_base", (3, 8, 8), 3, seed=4))
    c = build_model(default_model_config("fnn_base", (3, 8, 8), 3, seed=5))
    for (name, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert torch.equal(pa, pb), name
    assert not torch.equal(a.layers[1].weight, c.layers[1].weight)


def test_wrong_input_shape_names_expectation():
    model = build_model(default_model_config("cnn_base", (3, 16, 16), 3))
    with pytest.raises(ModelConfigError, match=r"\(B, 3, 16, 16\)"):
        forward(model, torch.rand(2, 3, 8, 8))


def test_embedding_and_feature_mlp_widths():
    assert forward(set_mode(build_embedding_mlp(16, 3), "eval"), torch.rand(5, 16)).shape == (5, 3)
    feature = set_mode(build_feature_mlp(3), "eval")
    assert forward(feature, torch.rand(5, 3) * 2 - 1).shape == (5, 3)
    with pytest.raises(ModelConfigError, match="cosine"):
        forward(feature, torch.full((2, 3), 1.5))


def test_dropout_only_active_in_train_mode():
    model = build_model(default_model_config("cnn_gen", (3, 16, 16), 3))
    x = torch.rand(4, 3, 16, 16)
    set_mode(model, "eval")
    assert torch.equal(forward(model, x), forward(model, x))
    set_mode(model, "train")
    torch.manual_seed(1)
    a = forward(model, x)
    torch.manual_seed(2)
    assert not torch.equal(a, forward(model, x))


def test_non_finite_activation_reports_layer():
    model = build_model(ModelConfig(family="fnn_base", input_shape=(2,), hidden=[3], num_classes=2))
    with torch.no_grad():
        model.layers[1].weight.fill_(float("inf"))
    with pytest.raises(NonFiniteActivationError) as info:
        forward(model, torch.ones(1, 2))
    assert info.value.layer_index == 1


def test_invalid_config_values():
    with pytest.raises(ValueError):
        ModelConfig(family="fnn_base", input_shape=(3, 0, 4))
    with pytest.raises(ValueError):
        ModelConfig(family="cnn_gen", input_shape=(3, 8, 8), conv_dropout=1.0)
    with pytest.raises(ValueError):
        ModelConfig(family="fnn_base", input_shape=(2,), num_classes=1)


GRADCHECK_MODELS = {
    "cnn_base": lambda: build_model(ModelConfig(family="cnn_base", input_shape=(3, 8, 8), conv_channels=[2, 3, 4], hidden=[5], seed=2)),
    "cnn_gen": lambda: build_model(ModelConfig(family="cnn_gen", input_shape=(3, 8, 8), conv_channels=[2, 3, 4], hidden=[5], seed=2)),
    "fnn_base": lambda: build_model(ModelConfig(family="fnn_base", input_shape=(3, 4, 4), hidden=[6], seed=2)),
    "embedding_mlp": lambda: build_embedding_mlp(5, 3, hidden=[4], seed=2),
    "feature_mlp": lambda: build_feature_mlp(3, hidden=[4], seed=2),
}


@pytest.mark.parametrize("family", list(GRADCHECK_MODELS))
def test_input_gradients_pass_gradcheck(family):
    model = set_mode(GRADCHECK_MODELS[family]().double(), "eval")
    shape = model.config.input_shape
    generator = torch.Generator().manual_seed(4)
    x = (torch.rand((2, *shape), generator=generator, dtype=torch.float64) * 1.8 - 0.9).requires_grad_()
    assert torch.autograd.gradcheck(lambda inputs: forward(model, inputs), (x,), eps=1e-6, atol=1e-6, rtol=1e-4)


def _overfit_losses(family):
    torch.manual_seed(0)
    model = build_model(default_model_config(family, (3, 8, 8), 3, seed=0))
    generator = torch.Generator().manual_seed(1)
    x = torch.rand(12, 3, 8, 8, generator=generator)
    y = torch.arange(12) % 3
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-2)
    losses = []
    for _ in range(300):
        set_mode(model, "train")
        optimizer.zero_grad()
        loss = F.cross_entropy(forward(model, x), y)
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
    set_mode(model, "eval")
    with torch.no_grad():
        accuracy = (forward(model, x).argmax(dim=1) == y).float().mean().item()
    return losses, accuracy


@pytest.mark.parametrize("family", ["cnn_base", "cnn_gen", "fnn_base"])
def test_overfits_twelve_images_reproducibly(family):
    first, accuracy = _overfit_losses(family)
    second, _ = _overfit_losses(family)
    assert accuracy == 1.0
    assert first == second


@pytest.mark.parametrize("family", list(GRADCHECK_MODELS))
def test_parameter_gradients_match_finite_differences(family):
    model = set_mode(GRADCHECK_MODELS[family]().double(), "eval")
    generator = torch.Generator().manual_seed(5)
    x = torch.rand((6, *model.config.input_shape), generator=generator, dtype=torch.float64) * 1.8 - 0.9
    y = torch.arange(6) % model.config.num_classes
    model.zero_grad()
    F.cross_entropy(forward(model, x), y).backward()
    eps = 1e-6
    for name, param in model.named_parameters():
        flat = param.data.view(-1)
        for i in sorted({0, flat.numel() // 2, flat.numel() - 1}):
            original = flat[i].item()
            with torch.no_grad():
                flat[i] = original + eps
                up = F.cross_entropy(model(x), y).item()
                flat[i] = original - eps
                down = F.cross_entropy(model(x), y).item()
                flat[i] = original
            numeric = (up - down) / (2 * eps)
            assert param.grad.view(-1)[i].item() == pytest.approx(numeric, rel=1e-4, abs=1e-7), f"{name}[{i}]"


@pytest.mark.parametrize("family", list(GRADCHECK_MODELS))
def test_eval_output_does_not_depend_on_batch(family):
    model = set_mode(GRADCHECK_MODELS[family](), "eval")
    generator = torch.Generator().manual_seed(6)
    x = torch.rand((4, *model.config.input_shape), generator=generator) * 1.8 - 0.9
    with torch.no_grad():
        batched = forward(model, x)
        single = torch.cat([forward(model, x[i : i + 1]) for i in range(4)])
    assert torch.allclose(single, batched, atol=1e-6, rtol=0)
