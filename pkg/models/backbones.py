"""
Pretrained ViT / CLIP / SigLIP2 encoders.

A BackboneHandle bundles the loaded model with the metadata read from its
weights (embedding width, patch size, published preprocessing). From a
handle we can extract frozen image/text embeddings, or attach a C-way head
and fine-tune the whole vision tower.
"""
import copy
import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torchvision.transforms.v2.functional as TF
from filelock import FileLock
from huggingface_hub import snapshot_download
from huggingface_hub.errors import LocalEntryNotFoundError
from PIL import Image, UnidentifiedImageError
from tqdm import tqdm

from config import BACKBONE_KINDS, DEFAULT_WEIGHTS, Config
from dataset.downloader import cache_path
from dataset.manifest import ImageRecord
from models.embeddings import EmbeddingError, EmbeddingMatrix
from models.scratch import ModelConfigError

logger = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
WEIGHT_PATTERNS = ("*.safetensors", "*.bin")
PROMPT_TOKENS = {"walking_running": ["walking"], "sitting": ["sitting"], "standing": ["standing"]}
MAX_POOL_TOKENS = {"walking_running": ["walking", "running"]}
DEFAULT_TEMPLATE = "a photo of a person {label}"


class BackboneUnavailableError(RuntimeError):
    """Weights are neither cached nor fetchable"""


class ChecksumMismatchError(RuntimeError):
    """A cached weight file does not hash to its recorded digest"""


class UnsupportedOperationError(RuntimeError):
    """The backbone kind cannot perform this operation"""


@dataclass(frozen=True)
class Preprocessing:
    resolution: int
    mean: Tuple[float, float, float]
    std: Tuple[float, float, float]
    resize_mode: str = "shortest_edge_center_crop"  # or "squash"


SCRATCH_PREPROCESSING = Preprocessing(resolution=224, mean=IMAGENET_MEAN, std=IMAGENET_STD)


@dataclass
class BackboneHandle:
    kind: str
    weights_id: str
    embedding_dim: int
    feature_dim: int
    patch_size: int
    preprocessing: Preprocessing
    has_class_token: bool
    model: nn.Module = field(repr=False)
    tokenizer: Any = field(default=None, repr=False)

    @property
    def grid_size(self) -> int:
        return self.preprocessing.resolution // self.patch_size

    def metadata(self) -> dict:
        return {
            "kind": self.kind,
            "weights_id": self.weights_id,
            "embedding_dim": self.embedding_dim,
            "feature_dim": self.feature_dim,
            "patch_size": self.patch_size,
            "resolution": self.preprocessing.resolution,
            "resize_mode": self.preprocessing.resize_mode,
            "mean": list(self.preprocessing.mean),
            "std": list(self.preprocessing.std),
            "hub_offline": os.getenv("HF_HUB_OFFLINE", "0"),
            "hub_cache": os.getenv("HF_HUB_CACHE", ""),
        }


def _vision_config(model_config):
    return getattr(model_config, "vision_config", model_config)


def preprocessing_from_processor(image_processor, resolution: int) -> Preprocessing:
    mode = "shortest_edge_center_crop" if getattr(image_processor, "do_center_crop", False) else "squash"
    return Preprocessing(
        resolution=resolution,
        mean=tuple(float(m) for m in image_processor.image_mean),
        std=tuple(float(s) for s in image_processor.image_std),
        resize_mode=mode,
    )


def handle_from_model(kind: str, model: nn.Module, preprocessing: Optional[Preprocessing] = None, tokenizer=None, weights_id: str = "local") -> BackboneHandle:
    """Read embedding width and patch geometry from the model config and check they fit together"""
    if kind not in BACKBONE_KINDS:
        raise ValueError(f"Unknown backbone kind '{kind}', valid kinds: {list(BACKBONE_KINDS)}")
    vision = _vision_config(model.config)
    resolution = int(vision.image_size)
    patch_size = int(vision.patch_size)
    preprocessing = preprocessing or Preprocessing(resolution=resolution, mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5))
    if preprocessing.resolution % patch_size:
        raise ModelConfigError(f"Patch size {patch_size} does not divide resolution {preprocessing.resolution}")
    embedding_dim = int(getattr(model.config, "projection_dim", None) or vision.hidden_size) if kind != "vit" else int(vision.hidden_size)
    model.eval()
    return BackboneHandle(
        kind=kind,
        weights_id=weights_id,
        embedding_dim=embedding_dim,
        feature_dim=int(vision.hidden_size),
        patch_size=patch_size,
        preprocessing=preprocessing,
        has_class_token=kind != "siglip2",
        model=model,
        tokenizer=tokenizer,
    )


def verify_checksums(weights_dir: Path):
    """Hub blobs are named by their SHA-256; local folders may carry a checksums.json"""
    expected = {}
    manifest = weights_dir / "checksums.json"
    if manifest.exists():
        expected = json.loads(manifest.read_text(encoding="utf-8"))
    for pattern in WEIGHT_PATTERNS:
        for path in sorted(weights_dir.glob(pattern)):
            blob = Path(os.path.realpath(path))
            digest = expected.get(path.name)
            if digest is None and re.fullmatch(r"[0-9a-f]{64}", blob.name):
                digest = blob.name
            if digest is None:
                continue
            sha = hashlib.sha256()
            with open(blob, "rb") as f:
                for chunk in iter(lambda: f.read(1 << 20), b""):
                    sha.update(chunk)
            if sha.hexdigest() != digest:
                raise ChecksumMismatchError(f"Checksum mismatch for {path} (expected {digest[:12]}…, got {sha.hexdigest()[:12]}…)")
            logger.debug(f"✅ Checksum ok: {path.name}")


def resolve_weights(weights_source: str, cache_dir: Optional[Path] = None, offline: Optional[bool] = None) -> Path:
    """Local directory as-is, otherwise a hub snapshot (one concurrent download per weights id)"""
    local = Path(weights_source)
    if local.is_dir():
        return local
    cache_dir = Path(cache_dir or Config.hub_cache_dir())
    offline = Config.OFFLINE if offline is None else offline
    lock_dir = cache_dir / ".har-locks"
    lock_dir.mkdir(parents=True, exist_ok=True)
    with FileLock(str(lock_dir / (weights_source.replace("/", "--") + ".lock"))):
        try:
            path = snapshot_download(
                repo_id=weights_source,
                cache_dir=str(cache_dir),
                local_files_only=offline,
                allow_patterns=["*.json", "*.safetensors", "*.txt", "*.model"],
            )
        except LocalEntryNotFoundError as e:
            raise BackboneUnavailableError(f"Weights '{weights_source}' are not in the cache at {cache_dir} (offline={offline})") from e
    return Path(path)


def load_backbone(kind: str, weights_source: Optional[str] = None, cache_dir=None, offline: Optional[bool] = None) -> BackboneHandle:
    from transformers import AutoImageProcessor, AutoModel, AutoTokenizer

    if kind not in BACKBONE_KINDS:
        raise ValueError(f"Unknown backbone kind '{kind}', valid kinds: {list(BACKBONE_KINDS)}")
    weights_source = weights_source or DEFAULT_WEIGHTS[kind]
    logger.info(f"🔄 Loading {kind} backbone from {weights_source}")
    try:
        weights_dir = resolve_weights(weights_source, cache_dir, offline)
        verify_checksums(weights_dir)
        # Eager attention returns the attention maps that saliency needs
        model = AutoModel.from_pretrained(str(weights_dir), attn_implementation="eager")
        image_processor = AutoImageProcessor.from_pretrained(str(weights_dir))
        tokenizer = AutoTokenizer.from_pretrained(str(weights_dir)) if kind != "vit" else None
    except Exception as e:
        logger.error(f"❌ Failed to load {kind} backbone: {e}")
        raise
    resolution = int(_vision_config(model.config).image_size)
    handle = handle_from_model(kind, model, preprocessing_from_processor(image_processor, resolution), tokenizer, weights_source)
    logger.info(f"✅ Loaded {kind}: d={handle.embedding_dim}, patch={handle.patch_size}, resolution={resolution}")
    return handle


def open_rgb(image) -> Image.Image:
    if isinstance(image, (str, Path)):
        with Image.open(image) as img:
            img.load()
            image = img.copy()
    if image.mode != "RGB":
        logger.warning(f"⚠️ Converting {image.mode} image to RGB")
        image = image.convert("RGB")
    return image


def resize_crop(image, spec: Preprocessing) -> torch.Tensor:
    """Deterministic resize (+ center crop) to spec.resolution; uint8 3 x R x R"""
    image = open_rgb(image)
    r = spec.resolution
    if spec.resize_mode == "squash":
        image = image.resize((r, r), Image.BICUBIC)
    else:
        w, h = image.size
        scale = r / min(w, h)
        image = image.resize((max(r, round(w * scale)), max(r, round(h * scale))), Image.BICUBIC)
    pixels = torch.from_numpy(np.asarray(image, dtype=np.uint8).copy()).permute(2, 0, 1)
    return TF.center_crop(pixels, [r, r])


def normalize(pixels: torch.Tensor, spec: Preprocessing) -> torch.Tensor:
    if pixels.dtype == torch.uint8:
        pixels = pixels.float() / 255.0
    return TF.normalize(pixels, list(spec.mean), list(spec.std))


def preprocess(image, handle_or_spec) -> torch.Tensor:
    spec = handle_or_spec.preprocessing if isinstance(handle_or_spec, BackboneHandle) else handle_or_spec
    return normalize(resize_crop(image, spec), spec)


def _pooled(output) -> torch.Tensor:
    return output if isinstance(output, torch.Tensor) else output.pooler_output


def image_features(handle: BackboneHandle, pixel_values: torch.Tensor) -> torch.Tensor:
    if handle.kind == "vit":
        return handle.model(pixel_values=pixel_values).last_hidden_state[:, 0]
    return _pooled(handle.model.get_image_features(pixel_values=pixel_values))


@torch.no_grad()
def embed_images(handle: BackboneHandle, records: Sequence[ImageRecord], cache_dir=None, batch_size: int = 32) -> EmbeddingMatrix:
    """N x d image embeddings in input order; any undecodable image fails the whole call"""
    cache_dir = cache_dir or Config.image_cache_dir()
    tensors, failed = [], []
    for record in records:
        try:
            tensors.append(preprocess(cache_path(record, cache_dir), handle))
        except (OSError, UnidentifiedImageError, ValueError) as e:
            logger.error(f"❌ Cannot decode {record.image_id}: {e}")
            failed.append(record.image_id)
    if failed:
        raise EmbeddingError(f"Failed to decode images: {failed}")

    handle.model.eval()
    device = next(handle.model.parameters()).device
    rows = []
    for start in tqdm(range(0, len(tensors), batch_size), desc=f"{handle.kind} images", disable=len(tensors) <= batch_size):
        batch = torch.stack(tensors[start : start + batch_size]).to(device)
        rows.append(image_features(handle, batch).float().cpu())
    values = torch.cat(rows).numpy() if rows else np.zeros((0, handle.embedding_dim), dtype=np.float32)
    return EmbeddingMatrix(values=values, source="image", row_keys=[r.image_id for r in records])


@torch.no_grad()
def embed_texts(handle: BackboneHandle, prompts: Sequence[str]) -> EmbeddingMatrix:
    if handle.kind == "vit":
        raise UnsupportedOperationError("ViT has no text encoder; embed_texts needs clip or siglip2")
    if not prompts:
        raise ValueError("prompts must be non-empty")
    # SigLIP text towers were trained on max-length padding
    padding = "max_length" if handle.kind == "siglip2" else True
    tokens = handle.tokenizer(list(prompts), padding=padding, truncation=True, return_tensors="pt")
    device = next(handle.model.parameters()).device
    tokens = {k: v.to(device) for k, v in tokens.items()}
    values = _pooled(handle.model.get_text_features(**tokens)).float().cpu().numpy()
    return EmbeddingMatrix(values=values, source="text", row_keys=list(prompts))


def class_prompts(class_order: Sequence[str], template: Optional[str] = None, walking_variant: str = "single") -> Tuple[List[str], List[str]]:
    """Prompt strings and the class each one belongs to"""
    prompts, owners = [], []
    for label in class_order:
        tokens = MAX_POOL_TOKENS.get(label, PROMPT_TOKENS[label]) if walking_variant == "max_pool" else PROMPT_TOKENS[label]
        for token in tokens:
            prompts.append(template.format(label=token) if template else token)
            owners.append(label)
    return prompts, owners


@dataclass
class FinetuneOutput:
    logits: torch.Tensor
    attentions: Optional[Tuple[torch.Tensor, ...]] = None


class FinetuneModel(nn.Module):
    """Vision tower with its projection replaced by a C-way linear head"""

    def __init__(self, handle: BackboneHandle, num_classes: int, seed: int = 0, freeze_backbone: bool = False):
        super().__init__()
        if num_classes < 2:
            raise ModelConfigError(f"num_classes must be >= 2, got {num_classes}")
        self.kind = handle.kind
        self.weights_id = handle.weights_id
        self.num_classes = num_classes
        self.has_class_token = handle.has_class_token
        self.patch_size = handle.patch_size
        self.resolution = handle.preprocessing.resolution
        tower = handle.model if handle.kind == "vit" else handle.model.vision_model
        self.backbone = copy.deepcopy(tower)
        self.head = nn.Linear(handle.feature_dim, num_classes)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            nn.init.normal_(self.head.weight, std=0.02)
            nn.init.zeros_(self.head.bias)
        for p in self.backbone.parameters():
            p.requires_grad = not freeze_backbone

    def describe(self) -> dict:
        return {"kind": self.kind, "weights_id": self.weights_id, "num_classes": self.num_classes}

    def forward(self, pixel_values: torch.Tensor, output_attentions: bool = False) -> FinetuneOutput:
        out = self.backbone(pixel_values=pixel_values, output_attentions=output_attentions)
        if self.kind == "vit":
            features = out.last_hidden_state[:, 0]
        else:
            features = out.pooler_output
        return FinetuneOutput(logits=self.head(features), attentions=out.attentions if output_attentions else None)


def attach_head(handle: BackboneHandle, num_classes: int, seed: int = 0, freeze_backbone: bool = False) -> FinetuneModel:
    model = FinetuneModel(handle, num_classes, seed=seed, freeze_backbone=freeze_backbone)
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    logger.info(f"✅ Attached {num_classes}-way head to {handle.kind} ({trainable:,} trainable parameters)")
    return model
