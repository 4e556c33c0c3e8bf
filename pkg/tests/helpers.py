import numpy as np
import torch
from PIL import Image

from config import LABELS
from dataset.downloader import cache_path
from dataset.manifest import DatasetManifest, build_manifest
from evaluation.metrics import evaluate_labels

CANONICAL = {"walking_running": 98, "sitting": 95, "standing": 92}
CLASS_COLOURS = {"walking_running": (200, 40, 40), "sitting": (40, 200, 40), "standing": (40, 40, 200)}


def make_rows(counts, width=40, height=32, ext="png"):
    rows = []
    next_id = 1
    for label in LABELS:
        for _ in range(counts.get(label, 0)):
            rows.append(
                {
                    "image_id": str(next_id),
                    "url": f"http://images.test/{next_id}.{ext}",
                    "file_name": f"{next_id:012d}.{ext}",
                    "width": width,
                    "height": height,
                    "label": label,
                }
            )
            next_id += 1
    return rows


def make_manifest(counts, width=40, height=32) -> DatasetManifest:
    return build_manifest(make_rows(counts, width, height), dimension_range=None)


def write_images(manifest: DatasetManifest, cache_dir, seed: int = 0):
    """One noisy, class-coloured PNG per record so tiny models have something to learn"""
    cache_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for record in manifest.records:
        base = np.array(CLASS_COLOURS[record.label], dtype=np.int16)
        noise = rng.integers(-30, 31, size=(record.height, record.width, 3))
        pixels = np.clip(base + noise, 0, 255).astype(np.uint8)
        Image.fromarray(pixels).save(cache_path(record, cache_dir))
    return cache_dir


class CharTokenizer:
    """Character-level stand-in for a hub tokenizer (same call signature)"""

    def __init__(self, vocab_size: int = 64, max_length: int = 16):
        self.vocab_size = vocab_size
        self.max_length = max_length

    def __call__(self, texts, padding=True, truncation=True, return_tensors="pt"):
        ids = [[1 + ord(c) % (self.vocab_size - 2) for c in text][: self.max_length] for text in texts]
        width = self.max_length if padding == "max_length" else max(len(i) for i in ids)
        input_ids = torch.zeros((len(ids), width), dtype=torch.long)
        attention_mask = torch.zeros((len(ids), width), dtype=torch.long)
        for row, tokens in enumerate(ids):
            input_ids[row, : len(tokens)] = torch.tensor(tokens)
            attention_mask[row, : len(tokens)] = 1
        return {"input_ids": input_ids, "attention_mask": attention_mask}


def report_with_accuracy(correct: int, total: int = 10):
    """Metric report whose accuracy is correct / total; mistakes shift to the next class"""
    y_true = [LABELS[i % 3] for i in range(total)]
    y_pred = [t if i < correct else LABELS[(LABELS.index(t) + 1) % 3] for i, t in enumerate(y_true)]
    return evaluate_labels(y_true, y_pred, LABELS)
