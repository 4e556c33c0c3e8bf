import logging
from typing import List, Literal, Optional, Sequence, Tuple

import torch
import torch.nn as nn
from pydantic import BaseModel, Field, field_validator, model_validator

logger = logging.getLogger(__name__)

Family = Literal["fnn_base", "cnn_base", "cnn_gen", "embedding_mlp", "feature_mlp"]

DEFAULT_CONV_CHANNELS = [32, 64, 128]
DEFAULT_CNN_HIDDEN = [256]
DEFAULT_FNN_HIDDEN = [512, 128]
DEFAULT_EMBEDDING_HIDDEN = [256, 64]
DEFAULT_FEATURE_HIDDEN = [16]
COSINE_TOLERANCE = 1e-6


class ModelConfigError(ValueError):
    """Architecture and input shape do not agree"""


class NonFiniteActivationError(RuntimeError):
    def __init__(self, layer_index: int, layer_name: str = ""):
        self.layer_index = layer_index
        super().__init__(f"Non-finite activation after layer {layer_index} {layer_name}".strip())


class ModelConfig(BaseModel):
    family: Family
    input_shape: Tuple[int, ...]
    num_classes: int = Field(3, ge=2)
    hidden: List[int] = Field(default_factory=list)
    conv_channels: List[int] = Field(default_factory=lambda: list(DEFAULT_CONV_CHANNELS))
    conv_dropout: float = 0.25
    fc_dropout: float = 0.5
    batch_norm: bool = False
    seed: int = 0

    @field_validator("hidden", "conv_channels")
    @classmethod
    def _positive_widths(cls, value):
        if any(w <= 0 for w in value):
            raise ValueError(f"layer widths must be positive, got {value}")
        return value

    @field_validator("conv_dropout", "fc_dropout")
    @classmethod
    def _dropout_range(cls, value):
        if not 0.0 <= value < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {value}")
        return value

    @model_validator(mode="after")
    def _positive_shape(self):
        if not self.input_shape or any(d <= 0 for d in self.input_shape):
            raise ValueError(f"input_shape must be positive, got {self.input_shape}")
        return self


class ScratchNet(nn.Module):
    """Feed-forward stack described entirely by its ModelConfig"""

    def __init__(self, config: ModelConfig, layers: nn.Sequential):
        super().__init__()
        self.config = config
        self.layers = layers

    def check_input(self, x: torch.Tensor):
        expected = tuple(self.config.input_shape)
        if x.ndim != len(expected) + 1 or tuple(x.shape[1:]) != expected or x.shape[0] < 1:
            raise ModelConfigError(f"{self.config.family} expects batches of shape (B, {', '.join(map(str, expected))}), got {tuple(x.shape)}")
        if self.config.family == "feature_mlp" and (x.abs() > 1 + COSINE_TOLERANCE).any():
            raise ModelConfigError("feature_mlp expects cosine scores in [-1, 1]")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        return self.layers(x)


def _init_weights(model: nn.Module, seed: int):
    """He-uniform weights for ReLU layers, zero biases; seeded without touching the global RNG"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        for module in model.modules():
            if isinstance(module, (nn.Conv2d, nn.Linear)):
                nn.init.kaiming_uniform_(module.weight, nonlinearity="relu")
                if module.bias is not None:
                    nn.init.zeros_(module.bias)


def _finish(config: ModelConfig, layers: List[nn.Module]) -> ScratchNet:
    model = ScratchNet(config, nn.Sequential(*layers))
    _init_weights(model, config.seed)
    logger.info(f"✅ Built {config.family} with {count_parameters(model):,} parameters")
    return model


def build_cnn(config: ModelConfig, generalised: bool = False) -> ScratchNet:
    """3 x (conv3x3 -> [BN] -> ReLU -> maxpool2 -> [dropout]) -> flatten -> FC -> ReLU -> [dropout] -> FC(C)"""
    if len(config.input_shape) != 3:
        raise ModelConfigError(f"CNN input must be (channels, height, width), got {config.input_shape}")
    channels, height, width = config.input_shape
    factor = 2 ** len(config.conv_channels)
    if height % factor or width % factor:
        raise ModelConfigError(
            f"Spatial dims {height}x{width} must be divisible by {factor} ({len(config.conv_channels)} 2x2 poolings)"
        )
    hidden = config.hidden or list(DEFAULT_CNN_HIDDEN)
    config = config.model_copy(update={"family": "cnn_gen" if generalised else "cnn_base", "batch_norm": generalised, "hidden": hidden})

    layers: List[nn.Module] = []
    in_ch = channels
    for out_ch in config.conv_channels:
        layers.append(nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1))
        if generalised:
            layers.append(nn.BatchNorm2d(out_ch))
        layers += [nn.ReLU(), nn.MaxPool2d(2)]
        if generalised:
            layers.append(nn.Dropout(config.conv_dropout))
        in_ch = out_ch

    flat = in_ch * (height // factor) * (width // factor)
    layers += [nn.Flatten(), nn.Linear(flat, hidden[0]), nn.ReLU()]
    if generalised:
        layers.append(nn.Dropout(config.fc_dropout))
    layers.append(nn.Linear(hidden[0], config.num_classes))
    return _finish(config, layers)


def build_fnn(config: ModelConfig) -> ScratchNet:
    """flatten -> (FC -> ReLU) x k -> FC(C)"""
    in_dim = 1
    for d in config.input_shape:
        in_dim *= d
    if not config.hidden:
        logger.info("ℹ️ FNN without hidden layers: logits are an affine map of the pixels")
    layers: List[nn.Module] = [nn.Flatten()]
    for width in config.hidden:
        layers += [nn.Linear(in_dim, width), nn.ReLU()]
        in_dim = width
    layers.append(nn.Linear(in_dim, config.num_classes))
    return _finish(config.model_copy(update={"family": "fnn_base"}), layers)


def _mlp_layers(in_dim: int, hidden: Sequence[int], num_classes: int, dropout: float) -> List[nn.Module]:
    # BatchNorm without affine terms: the learnable parameters are exactly the linear layers
    layers: List[nn.Module] = []
    for width in hidden:
        layers += [nn.Linear(in_dim, width), nn.BatchNorm1d(width, affine=False), nn.ReLU(), nn.Dropout(dropout)]
        in_dim = width
    layers.append(nn.Linear(in_dim, num_classes))
    return layers


def build_embedding_mlp(d: int, num_classes: int, hidden: Optional[List[int]] = None, dropout: float = 0.5, seed: int = 0) -> ScratchNet:
    """MLP on raw image embeddings: d -> hidden stack (Linear, BN, ReLU, dropout) -> C logits"""
    if d < 1:
        raise ModelConfigError(f"embedding dimension must be >= 1, got {d}")
    hidden = list(DEFAULT_EMBEDDING_HIDDEN if hidden is None else hidden)
    config = ModelConfig(family="embedding_mlp", input_shape=(d,), num_classes=num_classes, hidden=hidden, fc_dropout=dropout, batch_norm=True, seed=seed)
    return _finish(config, _mlp_layers(d, hidden, num_classes, dropout))


def build_feature_mlp(num_classes: int, hidden: Optional[List[int]] = None, dropout: float = 0.25, seed: int = 0) -> ScratchNet:
    """MLP on the C cosine scores of each image; input width is exactly C"""
    if num_classes < 2:
        raise ModelConfigError(f"feature_mlp needs at least 2 classes, got {num_classes}")
    hidden = list(DEFAULT_FEATURE_HIDDEN if hidden is None else hidden)
    config = ModelConfig(family="feature_mlp", input_shape=(num_classes,), num_classes=num_classes, hidden=hidden, fc_dropout=dropout, batch_norm=True, seed=seed)
    return _finish(config, _mlp_layers(num_classes, hidden, num_classes, dropout))


def build_model(config: ModelConfig) -> ScratchNet:
    if config.family in ("cnn_base", "cnn_gen"):
        return build_cnn(config, generalised=config.family == "cnn_gen")
    if config.family == "fnn_base":
        return build_fnn(config)
    if config.family == "embedding_mlp":
        return build_embedding_mlp(config.input_shape[0], config.num_classes, config.hidden, config.fc_dropout, config.seed)
    return build_feature_mlp(config.num_classes, config.hidden, config.fc_dropout, config.seed)


def default_model_config(family: str, input_shape: Tuple[int, ...], num_classes: int, seed: int = 0) -> ModelConfig:
    hidden = {
        "cnn_base": DEFAULT_CNN_HIDDEN,
        "cnn_gen": DEFAULT_CNN_HIDDEN,
        "fnn_base": DEFAULT_FNN_HIDDEN,
        "embedding_mlp": DEFAULT_EMBEDDING_HIDDEN,
        "feature_mlp": DEFAULT_FEATURE_HIDDEN,
    }[family]
    return ModelConfig(family=family, input_shape=tuple(input_shape), num_classes=num_classes, hidden=list(hidden), seed=seed)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def set_mode(model: nn.Module, mode: str) -> nn.Module:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode}")
    return model.train(mode == "train")


def forward(model: nn.Module, batch: torch.Tensor) -> torch.Tensor:
    """Logits for a batch, checking every intermediate activation for NaN/inf"""
    if isinstance(model, ScratchNet):
        model.check_input(batch)
        x = batch
        for index, layer in enumerate(model.layers):
            x = layer(x)
            if not torch.isfinite(x).all():
                raise NonFiniteActivationError(index, type(layer).__name__)
        return x
    logits = model(batch).logits
    if not torch.isfinite(logits).all():
        raise NonFiniteActivationError(-1, "head")
    return logits
