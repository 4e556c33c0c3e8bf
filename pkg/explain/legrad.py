"""
Gradient-of-attention saliency for the fine-tuned transformer backbones.

For each layer we take d(target logit)/d(attention map), clip negative
contributions, average over heads, pool the readout token's row (or all
query rows when the backbone has no class token), then average over
layers and min-max normalise onto the patch grid.
"""
import logging
import math
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch
import torchvision.transforms.v2.functional as TF
from PIL import Image
from pydantic import BaseModel, Field

from models.backbones import FinetuneModel, UnsupportedOperationError
from utils.artifacts import write_json

logger = logging.getLogger(__name__)

Aggregation = Literal["readout_row", "mean_rows"]


class SaliencyMap(BaseModel):
    grid: List[List[float]]
    target_class: str
    normalization: Literal["minmax"] = "minmax"
    layer_count: int
    aggregation: Aggregation
    degenerate: bool = False

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.grid, dtype=np.float64)

    @property
    def patch_grid(self) -> int:
        return len(self.grid)


class DeletionResult(BaseModel):
    k: int
    top_k_drop: float
    random_drop: float
    random_drops: List[float] = Field(default_factory=list)
    trials: int
    mask_mode: str


def _check_model(model) -> FinetuneModel:
    if not isinstance(model, FinetuneModel):
        raise UnsupportedOperationError(f"{type(model).__name__} exposes no attention maps; saliency needs a fine-tuned transformer")
    return model


def _target_index(target_class: Union[int, str], class_order: Optional[Sequence[str]], num_classes: int) -> int:
    if isinstance(target_class, str):
        if not class_order or target_class not in class_order:
            raise ValueError(f"Unknown target class '{target_class}' for class order {class_order}")
        return list(class_order).index(target_class)
    if not 0 <= target_class < num_classes:
        raise ValueError(f"Target class index {target_class} out of range for {num_classes} classes")
    return int(target_class)


def legrad_saliency(
    model: FinetuneModel,
    pixel_values: torch.Tensor,
    target_class: Union[int, str],
    class_order: Optional[Sequence[str]] = None,
    aggregation: Optional[Aggregation] = None,
) -> SaliencyMap:
    """P x P saliency for one preprocessed image (3 x R x R)"""
    model = _check_model(model)
    model.eval()
    aggregation = aggregation or ("readout_row" if model.has_class_token else "mean_rows")
    if aggregation == "readout_row" and not model.has_class_token:
        raise UnsupportedOperationError(f"{model.kind} has no readout token; use mean_rows aggregation")
    target = _target_index(target_class, class_order, model.num_classes)
    device = next(model.parameters()).device

    batch = pixel_values.unsqueeze(0).to(device) if pixel_values.ndim == 3 else pixel_values.to(device)
    with torch.enable_grad():
        output = model(batch, output_attentions=True)
        attentions = output.attentions
        if not attentions:
            raise UnsupportedOperationError(f"{model.kind} backbone returned no attention maps")
        logit = output.logits[0, target]
        grads = torch.autograd.grad(logit, attentions, allow_unused=True)

    prefix = 1 if model.has_class_token else 0
    per_layer = []
    for attention, grad in zip(attentions, grads):
        if grad is None:
            grad = torch.zeros_like(attention)
        g = grad[0].clamp(min=0).mean(dim=0).double()
        if aggregation == "readout_row":
            per_layer.append(g[0, prefix:])
        else:
            per_layer.append(g[prefix:, prefix:].mean(dim=0))
    scores = torch.stack(per_layer).mean(dim=0).cpu().numpy()

    side = int(math.isqrt(scores.size))
    expected = model.resolution // model.patch_size
    if side * side != scores.size or (pixel_values.shape[-1] == model.resolution and side != expected):
        raise UnsupportedOperationError(f"{scores.size} patch tokens do not form the expected {expected}x{expected} grid")
    grid = scores.reshape(side, side)

    low, high = float(grid.min()), float(grid.max())
    degenerate = not high > low
    if degenerate:
        logger.warning(f"⚠️ Saliency for class {target} is constant; returning an all-zero map")
        grid = np.zeros_like(grid)
    else:
        grid = (grid - low) / (high - low)

    label = class_order[target] if class_order else str(target)
    return SaliencyMap(
        grid=grid.tolist(),
        target_class=label,
        layer_count=len(per_layer),
        aggregation=aggregation,
        degenerate=degenerate,
    )


def _patch_mask(side: int, patches: Sequence[int], resolution: int) -> torch.Tensor:
    mask = torch.zeros(side * side, dtype=torch.bool)
    mask[list(patches)] = True
    cell = resolution // side
    return mask.reshape(side, side).repeat_interleave(cell, 0).repeat_interleave(cell, 1)


@torch.no_grad()
def _target_logit(model: FinetuneModel, pixels: torch.Tensor, target: int) -> float:
    device = next(model.parameters()).device
    return float(model(pixels.unsqueeze(0).to(device)).logits[0, target])


def deletion_check(
    model: FinetuneModel,
    pixel_values: torch.Tensor,
    saliency: SaliencyMap,
    k: int,
    target_class: Union[int, str],
    class_order: Optional[Sequence[str]] = None,
    fill: Sequence[float] = (0.0, 0.0, 0.0),
    mask_mode: Literal["mean", "blur"] = "mean",
    trials: int = 20,
    seed: int = 0,
) -> DeletionResult:
    """Target-logit drop when masking the k most salient patches vs k random patches

    fill is the replacement colour in model-input (normalised) space.
    """
    model = _check_model(model)
    model.eval()
    side = saliency.patch_grid
    total = side * side
    if not 0 <= k <= total:
        raise ValueError(f"k must be in [0, {total}], got {k}")
    if trials < 20:
        raise ValueError(f"deletion_check needs at least 20 random trials, got {trials}")
    if k == 0:
        return DeletionResult(k=0, top_k_drop=0.0, random_drop=0.0, random_drops=[0.0] * trials, trials=trials, mask_mode=mask_mode)

    target = _target_index(target_class, class_order, model.num_classes)
    resolution = pixel_values.shape[-1]
    if mask_mode == "blur":
        replacement = TF.gaussian_blur(pixel_values, kernel_size=[31, 31], sigma=[8.0, 8.0])
    else:
        replacement = torch.as_tensor(fill, dtype=pixel_values.dtype).view(3, 1, 1).expand_as(pixel_values)

    def masked_drop(patches) -> float:
        mask = _patch_mask(side, patches, resolution)
        masked = torch.where(mask, replacement, pixel_values)
        return base - _target_logit(model, masked, target)

    base = _target_logit(model, pixel_values, target)
    order = np.argsort(-saliency.array.reshape(-1), kind="stable")
    top_drop = masked_drop(order[:k].tolist())
    rng = np.random.default_rng(seed)
    random_drops = [masked_drop(rng.choice(total, size=k, replace=False).tolist()) for _ in range(trials)]
    result = DeletionResult(
        k=k,
        top_k_drop=top_drop,
        random_drop=float(np.mean(random_drops)),
        random_drops=random_drops,
        trials=trials,
        mask_mode=mask_mode,
    )
    logger.debug(f"Deletion k={k}: top-k drop {result.top_k_drop:.4f}, random drop {result.random_drop:.4f}")
    return result


def _as_array(image) -> np.ndarray:
    if isinstance(image, torch.Tensor):
        array = image.permute(1, 2, 0).cpu().numpy()
        return array / 255.0 if image.dtype == torch.uint8 else np.clip(array, 0.0, 1.0)
    return np.asarray(image.convert("RGB"), dtype=np.float64) / 255.0


def _upsample(saliency: SaliencyMap, size) -> np.ndarray:
    grid = Image.fromarray(saliency.array.astype(np.float32))
    return np.asarray(grid.resize(size, Image.BILINEAR), dtype=np.float64)


def render_overlay(image, saliency: SaliencyMap, path, prov: Optional[dict] = None) -> Path:
    """Image with the heatmap at alpha 0.5 (PNG), raw grid alongside (JSON)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = _as_array(image)
    heat = _upsample(saliency, (base.shape[1], base.shape[0]))
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(base)
    ax.imshow(heat, cmap="jet", alpha=0.5, vmin=0.0, vmax=1.0)
    ax.set_title(saliency.target_class)
    ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    write_json(path.with_suffix(".json"), saliency.model_dump(), prov)
    return path


def render_class_grid(image, maps: Dict[str, SaliencyMap], path, prov: Optional[dict] = None) -> Path:
    """Original image followed by one overlay per class"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = _as_array(image)
    fig, axes = plt.subplots(1, len(maps) + 1, figsize=(3.2 * (len(maps) + 1), 3.4))
    axes[0].imshow(base)
    axes[0].set_title("original")
    for ax, (label, saliency) in zip(axes[1:], maps.items()):
        ax.imshow(base)
        ax.imshow(_upsample(saliency, (base.shape[1], base.shape[0])), cmap="jet", alpha=0.5, vmin=0.0, vmax=1.0)
        ax.set_title(label)
    for ax in axes:
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    write_json(path.with_suffix(".json"), {"maps": {label: m.model_dump() for label, m in maps.items()}}, prov)
    return path
