import hashlib
import json
import os
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, Field, field_validator, model_validator

load_dotenv()

CONFIG_FILE = "har_config.json"
CODE_VERSION = "1.0.0"

LABELS = ("walking_running", "sitting", "standing")
BINARY_LABELS = ("sitting", "standing")

SCRATCH_FAMILIES = ("fnn_base", "cnn_base", "cnn_gen")
EMBEDDING_FAMILIES = ("clip_em", "clip_cs")
FINETUNE_FAMILIES = ("clip_ic", "vit", "siglip2")
FAMILIES = SCRATCH_FAMILIES + EMBEDDING_FAMILIES + FINETUNE_FAMILIES

BACKBONE_KINDS = ("vit", "clip", "siglip2")
DEFAULT_WEIGHTS = {
    "vit": "google/vit-base-patch16-224-in21k",
    "clip": "openai/clip-vit-base-patch16",
    "siglip2": "google/siglip2-base-patch16-224",
}

POLICY_NAMES = (
    "baseline",
    "horizontal_flip",
    "vertical_flip",
    "rotation_15",
    "color_jitter",
    "gaussian_blur",
    "grayscale",
    "random_resized_crop",
    "perspective",
    "all_combined",
)
EXTRA_POLICY_NAMES = ("geometric_combined",)


def _env_flag(name: str, default: str = "False") -> bool:
    return os.getenv(name, default).lower() in ("1", "true", "yes")


class Config:
    # Environment
    OFFLINE = _env_flag("HAR_OFFLINE")
    CACHE_DIR = os.path.expanduser(os.getenv("HAR_CACHE_DIR", "~/.cache/har"))
    RUN_DIR = os.getenv("HAR_RUN_DIR", "runs")
    DOWNLOAD_WORKERS = int(os.getenv("HAR_DOWNLOAD_WORKERS", "8"))
    DEVICE = os.getenv("HAR_DEVICE", "auto")

    # Application Configuration
    DEBUG = _env_flag("DEBUG")

    @classmethod
    def image_cache_dir(cls) -> Path:
        return Path(cls.CACHE_DIR) / "images"

    @classmethod
    def hub_cache_dir(cls) -> Path:
        return Path(os.getenv("HF_HUB_CACHE", str(Path(cls.CACHE_DIR) / "hub")))

    @classmethod
    def apply_environment(cls):
        """Export the hub variables derived from our own settings"""
        os.environ.setdefault("HF_HUB_CACHE", str(Path(cls.CACHE_DIR) / "hub"))
        if cls.OFFLINE:
            os.environ["HF_HUB_OFFLINE"] = "1"

    @classmethod
    def validate_config(cls):
        """Validate that all required configuration values are properly set"""
        errors = []

        if not cls.CACHE_DIR:
            errors.append("HAR_CACHE_DIR is not properly configured")

        if not cls.RUN_DIR:
            errors.append("HAR_RUN_DIR is not properly configured")

        if cls.DOWNLOAD_WORKERS <= 0:
            errors.append("HAR_DOWNLOAD_WORKERS must be a positive integer")

        if cls.DEVICE not in ("auto", "cpu", "cuda"):
            errors.append(f"HAR_DEVICE '{cls.DEVICE}' is not one of auto, cpu, cuda")

        return errors

    @classmethod
    def get_config_summary(cls):
        """Get a summary of the current configuration, recorded in run metadata"""
        return {
            "offline": cls.OFFLINE,
            "cache_dir": cls.CACHE_DIR,
            "hub_cache_dir": str(cls.hub_cache_dir()),
            "run_dir": cls.RUN_DIR,
            "download_workers": cls.DOWNLOAD_WORKERS,
            "device": cls.DEVICE,
            "debug": cls.DEBUG,
        }

    @classmethod
    def update_config(cls, overrides: Dict[str, object]):
        """Apply CLI overrides on top of the environment defaults"""
        if overrides.get("cache_dir"):
            cls.CACHE_DIR = os.path.expanduser(str(overrides["cache_dir"]))
        if overrides.get("run_dir"):
            cls.RUN_DIR = str(overrides["run_dir"])
        if overrides.get("offline") is not None:
            cls.OFFLINE = bool(overrides["offline"])
        if overrides.get("device"):
            cls.DEVICE = str(overrides["device"])

    @classmethod
    def load_experiment_config(cls, path: Optional[str] = None) -> "ExperimentConfig":
        """Load the experiment configuration file, falling back to defaults"""
        config_path = Path(path or CONFIG_FILE)
        if not config_path.exists():
            if path:
                raise FileNotFoundError(f"Config file not found: {config_path}")
            return ExperimentConfig()
        with open(config_path, "r", encoding="utf-8") as f:
            return ExperimentConfig.model_validate(json.load(f))

    @classmethod
    def save_experiment_config(cls, config: "ExperimentConfig", path: Optional[str] = None):
        with open(path or CONFIG_FILE, "w", encoding="utf-8") as f:
            f.write(config.model_dump_json(indent=2))


class SplitSpec(BaseModel):
    ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 42

    @field_validator("ratios")
    @classmethod
    def _ratios_sum_to_one(cls, value):
        if any(r <= 0 for r in value):
            raise ValueError(f"ratios must be positive, got {value}")
        if abs(sum(value) - 1.0) > 1e-9:
            raise ValueError(f"ratios must sum to 1, got {sum(value)}")
        return value


class TrainConfig(BaseModel):
    lr: float = Field(1e-3, gt=0)
    weight_decay: float = Field(1e-4, ge=0)
    batch_size: int = Field(32, ge=1)
    max_epochs: int = Field(50, ge=1)
    patience: int = Field(5, ge=1)
    early_stopping_metric: Literal["f1_macro", "accuracy"] = "f1_macro"
    augmentation: str = "baseline"
    seed: int = 42
    resolution: int = Field(224, ge=8)
    deterministic: bool = True
    freeze_backbone: bool = False
    device: str = "auto"

    @field_validator("augmentation")
    @classmethod
    def _known_policy(cls, value):
        if value not in POLICY_NAMES + EXTRA_POLICY_NAMES:
            raise ValueError(f"unknown augmentation policy '{value}'")
        return value


def default_train_config(family: str, seed: int = 42) -> TrainConfig:
    """Per-family defaults: fine-tuning uses a smaller learning rate"""
    if family in FINETUNE_FAMILIES:
        return TrainConfig(lr=1e-5, seed=seed, deterministic=False)
    if family == "cnn_gen":
        return TrainConfig(augmentation="geometric_combined", seed=seed)
    return TrainConfig(seed=seed)


class PromptConfig(BaseModel):
    template: Optional[str] = None
    walking_variant: Literal["single", "max_pool"] = "single"


class ExperimentConfig(BaseModel):
    manifest_path: str = "data/manifest.jsonl"
    annotation_source: Optional[str] = None
    labels_path: Optional[str] = None
    split: SplitSpec = Field(default_factory=SplitSpec)
    task: Literal["multiclass", "binary"] = "multiclass"
    families: List[str] = Field(default_factory=lambda: list(FAMILIES))
    train: Dict[str, TrainConfig] = Field(default_factory=dict)
    backbones: Dict[str, str] = Field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    sweep_policies: List[str] = Field(default_factory=lambda: list(POLICY_NAMES))
    prompts: PromptConfig = Field(default_factory=PromptConfig)
    repeats: int = Field(5, ge=2)
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _check_references(self):
        unknown = [f for f in self.families if f not in FAMILIES]
        unknown += [f for f in self.train if f not in FAMILIES]
        if unknown:
            raise ValueError(f"unknown model families: {unknown}; valid: {list(FAMILIES)}")
        bad_policies = [p for p in self.sweep_policies if p not in POLICY_NAMES + EXTRA_POLICY_NAMES]
        if bad_policies:
            raise ValueError(f"unknown augmentation policies: {bad_policies}")
        bad_kinds = [k for k in self.backbones if k not in BACKBONE_KINDS]
        if bad_kinds:
            raise ValueError(f"unknown backbone kinds: {bad_kinds}")
        return self

    def train_config(self, family: str) -> TrainConfig:
        """Training config for a family; the split seed is inherited unless overridden"""
        if family in self.train:
            return self.train[family]
        return default_train_config(family, seed=self.split.seed)

    @property
    def class_order(self) -> Tuple[str, ...]:
        return BINARY_LABELS if self.task == "binary" else LABELS

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
