import logging
from typing import Dict, Mapping, Optional, Sequence, Union

import numpy as np
import torch
from torch.utils.data import Dataset

from augmentation.policies import AugmentationPolicy, apply_policy, make_policy
from config import Config, TrainConfig
from dataset.downloader import cache_path
from dataset.manifest import DatasetManifest
from dataset.splits import SplitAssignment
from models.backbones import SCRATCH_PREPROCESSING, Preprocessing, normalize, resize_crop
from models.embeddings import EmbeddingMatrix, SimilarityMatrix
from utils.seeding import derive_seed

logger = logging.getLogger(__name__)


class ImageSource:
    """Cached images, decoded once and resized/cropped to the training resolution (uint8)"""

    def __init__(self, manifest: DatasetManifest, cache_dir=None, preprocessing: Preprocessing = SCRATCH_PREPROCESSING):
        self.records = manifest.by_id
        self.cache_dir = cache_dir or Config.image_cache_dir()
        self.preprocessing = preprocessing
        self.labels = {r.image_id: r.label for r in manifest.records}
        self._pixels: Dict[str, torch.Tensor] = {}

    def pixels(self, image_id: str) -> torch.Tensor:
        if image_id not in self._pixels:
            self._pixels[image_id] = resize_crop(cache_path(self.records[image_id], self.cache_dir), self.preprocessing)
        return self._pixels[image_id]

    def path(self, image_id: str):
        return cache_path(self.records[image_id], self.cache_dir)


class TensorSource:
    """Precomputed feature rows (embeddings or cosine scores) keyed by image id"""

    def __init__(self, features: Union[EmbeddingMatrix, SimilarityMatrix, Mapping[str, np.ndarray]], labels: Mapping[str, str]):
        rows = features.row_map() if hasattr(features, "row_map") else dict(features)
        self.features = {key: torch.as_tensor(np.asarray(value), dtype=torch.float32) for key, value in rows.items()}
        self.labels = dict(labels)
        dims = {tuple(v.shape) for v in self.features.values()}
        if len(dims) > 1:
            raise ValueError(f"Feature rows have inconsistent shapes: {sorted(dims)}")
        self.feature_shape = dims.pop() if dims else (0,)

    def row(self, image_id: str) -> torch.Tensor:
        try:
            return self.features[image_id]
        except KeyError:
            raise KeyError(f"No feature row for image {image_id}") from None


class SplitDataset(Dataset):
    """One split of the data; the policy (training split only) is seeded per (seed, image_id, epoch)"""

    def __init__(
        self,
        source: Union[ImageSource, TensorSource],
        ids: Sequence[str],
        class_order: Sequence[str],
        policy: Optional[AugmentationPolicy] = None,
        seed: int = 0,
    ):
        self.source = source
        self.ids = list(ids)
        self.class_order = list(class_order)
        self.policy = policy
        self.seed = seed
        self.epoch = 0
        missing = [i for i in self.ids if source.labels.get(i) not in self.class_order]
        if missing:
            raise ValueError(f"Images without a label in {self.class_order}: {missing[:5]}")

    def set_epoch(self, epoch: int):
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.ids)

    def target(self, index: int) -> int:
        return self.class_order.index(self.source.labels[self.ids[index]])

    def __getitem__(self, index: int):
        image_id = self.ids[index]
        if isinstance(self.source, TensorSource):
            return self.source.row(image_id), self.target(index)
        pixels = self.source.pixels(image_id)
        if self.policy is not None:
            pixels = apply_policy(self.policy, pixels, derive_seed(self.seed, image_id, self.epoch)).pixels
        return normalize(pixels, self.source.preprocessing), self.target(index)


def build_datasets(
    source: Union[ImageSource, TensorSource],
    splits: SplitAssignment,
    cfg: TrainConfig,
    class_order: Sequence[str],
) -> Dict[str, SplitDataset]:
    """train/val/test datasets restricted to images whose label is in class_order"""
    datasets = {}
    for name in ("train", "val", "test"):
        ids = [i for i in splits.ids(name) if source.labels.get(i) in class_order]
        policy = None
        if name == "train" and isinstance(source, ImageSource):
            policy = make_policy(cfg.augmentation, resolution=source.preprocessing.resolution)
        datasets[name] = SplitDataset(source, ids, class_order, policy=policy, seed=cfg.seed)
    logger.info("📊 Split sizes: " + ", ".join(f"{k}={len(v)}" for k, v in datasets.items()))
    return datasets