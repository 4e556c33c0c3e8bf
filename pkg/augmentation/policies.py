"""
Named, seedable augmentation policies.

Every policy is an ordered list of ops with flat, named parameters
("vertical_flip.p", "color_jitter.brightness", ...). A seed fixes every
random draw, so (policy, image, seed) always maps to the same pixels.
Images are float tensors in [0, 1], channels first (3 x H x W).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import torch
import torch.nn.functional as F
import torchvision.transforms.v2.functional as TF
from PIL import Image
from pydantic import BaseModel, Field, model_validator
from torchvision.transforms import InterpolationMode

from config import EXTRA_POLICY_NAMES, POLICY_NAMES

logger = logging.getLogger(__name__)

MAX_CROP_ATTEMPTS = 10

OP_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "horizontal_flip": {"p": 0.5},
    "vertical_flip": {"p": 0.5},
    "rotation": {"p": 1.0, "max_degrees": 15.0},
    "color_jitter": {"p": 1.0, "brightness": 0.4, "contrast": 0.4, "saturation": 0.4, "hue": 0.1},
    "gaussian_blur": {"p": 1.0, "kernel_size": 3, "sigma": [0.1, 2.0]},
    "grayscale": {"p": 1.0},
    "random_resized_crop": {"p": 1.0, "scale": [0.6, 1.0], "ratio": [3 / 4, 4 / 3]},
    "perspective": {"p": 0.5, "distortion_scale": 0.5},
}

# Composite order is geometric first, then photometric
POLICY_STEPS: Dict[str, List[str]] = {
    "baseline": [],
    "horizontal_flip": ["horizontal_flip"],
    "vertical_flip": ["vertical_flip"],
    "rotation_15": ["rotation"],
    "color_jitter": ["color_jitter"],
    "gaussian_blur": ["gaussian_blur"],
    "grayscale": ["grayscale"],
    "random_resized_crop": ["random_resized_crop"],
    "perspective": ["perspective"],
    "all_combined": ["random_resized_crop", "perspective", "vertical_flip", "color_jitter", "gaussian_blur"],
    "geometric_combined": ["random_resized_crop", "perspective", "vertical_flip"],
}

GEOMETRIC_OPS = {"horizontal_flip", "vertical_flip", "rotation", "random_resized_crop", "perspective"}


class UnknownPolicyError(ValueError):
    """Policy name not in the registry"""


class AugmentationPolicy(BaseModel):
    name: str
    order: List[str] = Field(default_factory=list)
    parameters: Dict[str, Any] = Field(default_factory=dict)
    resolution: int = Field(224, ge=1)

    @model_validator(mode="after")
    def _check_ranges(self):
        for key, value in self.parameters.items():
            op, _, param = key.partition(".")
            if op not in OP_DEFAULTS or param not in OP_DEFAULTS[op]:
                raise ValueError(f"unknown policy parameter '{key}'")
            if param == "p" and not 0.0 <= value <= 1.0:
                raise ValueError(f"{key} must be a probability, got {value}")
            if param == "max_degrees" and not 0.0 <= value <= 180.0:
                raise ValueError(f"{key} must be within [0, 180] degrees")
            if param in ("brightness", "contrast", "saturation") and not 0.0 <= value < 1.0:
                raise ValueError(f"{key} must be within [0, 1)")
            if param == "hue" and not 0.0 <= value <= 0.5:
                raise ValueError(f"{key} must be within [0, 0.5]")
            if param == "distortion_scale" and not 0.0 <= value <= 1.0:
                raise ValueError(f"{key} must be within [0, 1]")
            if param == "kernel_size" and (int(value) < 1 or int(value) % 2 == 0):
                raise ValueError(f"{key} must be a positive odd integer")
            if param == "sigma" and not 0.0 < value[0] <= value[1]:
                raise ValueError(f"{key} must be an increasing positive range")
            if param == "scale" and not 0.0 < value[0] <= value[1] <= 1.0:
                raise ValueError(f"{key} must be an increasing range within (0, 1]")
            if param == "ratio" and not 0.0 < value[0] <= value[1]:
                raise ValueError(f"{key} must be an increasing positive range")
        return self

    def param(self, op: str, name: str):
        return self.parameters[f"{op}.{name}"]

    def to_json_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "parameters": dict(self.parameters), "order": list(self.order)}


@dataclass
class AugmentedImage:
    pixels: torch.Tensor
    metadata: Dict[str, Any] = field(default_factory=dict)


def policy_names(include_extra: bool = False) -> List[str]:
    return list(POLICY_NAMES) + (list(EXTRA_POLICY_NAMES) if include_extra else [])


def make_policy(name: str, resolution: int = 224, overrides: Optional[Dict[str, Any]] = None) -> AugmentationPolicy:
    """Fully parameterised policy with the documented defaults, optionally overridden"""
    if name not in POLICY_STEPS:
        raise UnknownPolicyError(f"Unknown augmentation policy '{name}'. Valid names: {policy_names(True)}")
    order = list(POLICY_STEPS[name])
    parameters = {f"{op}.{key}": value for op in order for key, value in OP_DEFAULTS[op].items()}
    for key, value in (overrides or {}).items():
        if key not in parameters:
            raise UnknownPolicyError(f"Policy '{name}' has no parameter '{key}'")
        parameters[key] = value
    return AugmentationPolicy(name=name, order=order, parameters=parameters, resolution=resolution)


def to_tensor_image(image) -> torch.Tensor:
    """PIL image, H x W x 3 uint8 array or 3 x H x W tensor -> float 3 x H x W in [0, 1]"""
    if isinstance(image, Image.Image):
        image = np.asarray(image.convert("RGB"))
    if isinstance(image, np.ndarray):
        if image.ndim != 3 or image.shape[-1] != 3:
            raise ValueError(f"Expected an H x W x 3 array, got shape {image.shape}")
        image = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1)
    if not isinstance(image, torch.Tensor) or image.ndim != 3 or image.shape[0] != 3:
        raise ValueError("Expected a 3 x H x W tensor image")
    if image.dtype == torch.uint8:
        image = image.float() / 255.0
    return image.float()


class _Draws:
    def __init__(self, seed: int):
        self.generator = torch.Generator().manual_seed(seed)

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * torch.rand(1, generator=self.generator, dtype=torch.float64).item()

    def randint(self, low: int, high: int) -> int:
        return int(torch.randint(low, high, (1,), generator=self.generator).item())


def _reflect_warp(image: torch.Tensor, warp) -> torch.Tensor:
    """Apply a warp on a reflection-padded copy and crop back, so no constant fill enters the frame"""
    _, h, w = image.shape
    pad = max(1, min(h, w) // 2)
    pad = min(pad, h - 1, w - 1) if min(h, w) > 1 else 0
    if pad == 0:
        return warp(image, 0)
    padded = F.pad(image[None], (pad, pad, pad, pad), mode="reflect")[0]
    warped = warp(padded, pad)
    return warped[:, pad : pad + h, pad : pad + w]


def _random_resized_crop(policy, image, draws, meta):
    _, h, w = image.shape
    area = h * w
    scale = policy.param("random_resized_crop", "scale")
    ratio = policy.param("random_resized_crop", "ratio")
    log_ratio = (math.log(ratio[0]), math.log(ratio[1]))
    box = None
    for attempt in range(MAX_CROP_ATTEMPTS):
        target_area = area * draws.uniform(scale[0], scale[1])
        aspect = math.exp(draws.uniform(*log_ratio))
        cw = int(round(math.sqrt(target_area * aspect)))
        ch = int(round(math.sqrt(target_area / aspect)))
        if 0 < cw <= w and 0 < ch <= h and cw * ch >= 1:
            box = (draws.randint(0, h - ch + 1), draws.randint(0, w - cw + 1), ch, cw)
            break
    meta["crop_fallback"] = box is None
    if box is None:
        side = min(h, w)
        box = ((h - side) // 2, (w - side) // 2, side, side)
        logger.debug(f"Crop draw degenerate {MAX_CROP_ATTEMPTS} times, using center crop")
    meta["crop_box"] = list(box)
    top, left, ch, cw = box
    return TF.resized_crop(
        image, top, left, ch, cw, [policy.resolution, policy.resolution],
        interpolation=InterpolationMode.BILINEAR, antialias=True,
    )


def _perspective(policy, image, draws, meta):
    _, h, w = image.shape
    distortion = policy.param("perspective", "distortion_scale")
    half_h, half_w = h // 2, w // 2
    dx, dy = int(distortion * half_w) + 1, int(distortion * half_h) + 1
    start = [[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]]
    end = [
        [draws.randint(0, dx), draws.randint(0, dy)],
        [w - 1 - draws.randint(0, dx), draws.randint(0, dy)],
        [w - 1 - draws.randint(0, dx), h - 1 - draws.randint(0, dy)],
        [draws.randint(0, dx), h - 1 - draws.randint(0, dy)],
    ]
    meta["perspective_endpoints"] = end

    def warp(img, pad):
        shift = lambda pts: [[x + pad, y + pad] for x, y in pts]
        return TF.perspective(img, shift(start), shift(end), interpolation=InterpolationMode.BILINEAR)

    return _reflect_warp(image, warp)


def _rotation(policy, image, draws, meta):
    limit = policy.param("rotation", "max_degrees")
    angle = draws.uniform(-limit, limit)
    meta["rotation_degrees"] = angle
    return _reflect_warp(image, lambda img, pad: TF.rotate(img, angle, interpolation=InterpolationMode.BILINEAR))


def _color_jitter(policy, image, draws, meta):
    factors = {}
    for name in ("brightness", "contrast", "saturation"):
        spread = policy.param("color_jitter", name)
        factors[name] = draws.uniform(max(0.0, 1 - spread), 1 + spread)
    hue = policy.param("color_jitter", "hue")
    factors["hue"] = draws.uniform(-hue, hue)
    meta["jitter"] = factors
    # Fixed order: brightness, contrast, saturation, hue
    image = TF.adjust_brightness(image, factors["brightness"])
    image = TF.adjust_contrast(image, factors["contrast"])
    image = TF.adjust_saturation(image, factors["saturation"])
    return TF.adjust_hue(image, factors["hue"])


def _gaussian_blur(policy, image, draws, meta):
    low, high = policy.param("gaussian_blur", "sigma")
    sigma = draws.uniform(low, high)
    k = int(policy.param("gaussian_blur", "kernel_size"))
    meta["blur_sigma"] = sigma
    return TF.gaussian_blur(image, kernel_size=[k, k], sigma=[sigma, sigma])


_OPS = {
    "horizontal_flip": lambda policy, image, draws, meta: TF.horizontal_flip(image),
    "vertical_flip": lambda policy, image, draws, meta: TF.vertical_flip(image),
    "rotation": _rotation,
    "color_jitter": _color_jitter,
    "gaussian_blur": _gaussian_blur,
    "grayscale": lambda policy, image, draws, meta: TF.rgb_to_grayscale(image, num_output_channels=3),
    "random_resized_crop": _random_resized_crop,
    "perspective": _perspective,
}


def apply_policy(policy: AugmentationPolicy, image, seed: int) -> AugmentedImage:
    """Run the policy's ops in order; the output is resolution x resolution"""
    pixels = to_tensor_image(image)
    if pixels.shape[1] == 0 or pixels.shape[2] == 0:
        raise ValueError("Cannot augment an empty image")

    draws = _Draws(seed)
    meta: Dict[str, Any] = {"policy": policy.name, "order": list(policy.order), "seed": seed, "applied": []}
    for op in policy.order:
        if draws.uniform(0.0, 1.0) >= policy.param(op, "p"):
            continue
        pixels = _OPS[op](policy, pixels, draws, meta)
        meta["applied"].append(op)

    size = [policy.resolution, policy.resolution]
    if list(pixels.shape[1:]) != size:
        pixels = TF.resize(pixels, size, interpolation=InterpolationMode.BILINEAR, antialias=True)
    return AugmentedImage(pixels=pixels.clamp(0.0, 1.0).contiguous(), metadata=meta)
