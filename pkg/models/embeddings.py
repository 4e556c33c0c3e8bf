import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from utils.artifacts import MissingArtifactError

logger = logging.getLogger(__name__)

MAGIC = b"EMB1"
HEADER = struct.Struct("<IIB")
SOURCE_TAGS = {"image": 0, "text": 1}
COSINE_TOLERANCE = 1e-6


class EmbeddingError(ValueError):
    """Embedding matrix violates its contract"""


@dataclass
class EmbeddingMatrix:
    values: np.ndarray
    source: str
    row_keys: List[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise EmbeddingError(f"Embeddings must be N x d, got shape {self.values.shape}")
        if self.source not in SOURCE_TAGS:
            raise EmbeddingError(f"Unknown embedding source '{self.source}'")
        if len(self.row_keys) != self.values.shape[0]:
            raise EmbeddingError(f"{len(self.row_keys)} row keys for {self.values.shape[0]} rows")
        if not np.isfinite(self.values).all():
            raise EmbeddingError("Embeddings contain non-finite values")
        zero = np.flatnonzero(np.linalg.norm(self.values, axis=1) == 0)
        if zero.size:
            raise EmbeddingError(f"Zero-norm {self.source} row: {self.row_keys[zero[0]]}")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def row_map(self) -> Dict[str, np.ndarray]:
        return {key: self.values[i] for i, key in enumerate(self.row_keys)}


@dataclass
class SimilarityMatrix:
    values: np.ndarray
    class_order: List[str]
    row_keys: List[str]

    def row_map(self) -> Dict[str, np.ndarray]:
        return {key: self.values[i] for i, key in enumerate(self.row_keys)}


def _unit_rows(matrix: EmbeddingMatrix) -> np.ndarray:
    values = matrix.values.astype(np.float64)
    return values / np.linalg.norm(values, axis=1)[:, None]


def similarity_features(imgs: EmbeddingMatrix, texts: EmbeddingMatrix, class_order: Sequence[str] = None) -> SimilarityMatrix:
    """Cosine similarity of every image row with every text row, N x C, clipped to [-1, 1]"""
    if imgs.dim != texts.dim:
        raise EmbeddingError(f"Image dim {imgs.dim} != text dim {texts.dim}")
    class_order = list(class_order or texts.row_keys)
    if len(class_order) != texts.rows:
        raise EmbeddingError(f"{texts.rows} text rows for {len(class_order)} classes")
    scores = np.clip(_unit_rows(imgs) @ _unit_rows(texts).T, -1.0, 1.0)
    return SimilarityMatrix(values=scores, class_order=class_order, row_keys=list(imgs.row_keys))


def pooled_similarity(imgs: EmbeddingMatrix, texts: EmbeddingMatrix, prompt_classes: Sequence[str], class_order: Sequence[str]) -> SimilarityMatrix:
    """Max-pool prompt-level cosine scores into one column per class"""
    prompt_level = similarity_features(imgs, texts, class_order=list(prompt_classes))
    columns = []
    for label in class_order:
        idx = [i for i, c in enumerate(prompt_classes) if c == label]
        if not idx:
            raise EmbeddingError(f"No prompt for class {label}")
        columns.append(prompt_level.values[:, idx].max(axis=1))
    return SimilarityMatrix(values=np.stack(columns, axis=1), class_order=list(class_order), row_keys=list(imgs.row_keys))


def zero_shot_predict(similarity: SimilarityMatrix) -> List[str]:
    return [similarity.class_order[i] for i in similarity.values.argmax(axis=1)]


def write_embeddings(matrix: EmbeddingMatrix, path) -> Path:
    """EMB1: magic, u32 N, u32 d, u8 source tag, N*d little-endian float32, UTF-8 JSON trailer"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trailer = json.dumps({"row_keys": matrix.row_keys}, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(HEADER.pack(matrix.rows, matrix.dim, SOURCE_TAGS[matrix.source]))
        f.write(matrix.values.astype("<f4").tobytes(order="C"))
        f.write(trailer)
    logger.info(f"💾 Wrote {matrix.rows}x{matrix.dim} {matrix.source} embeddings to {path}")
    return path


def read_embeddings(path) -> EmbeddingMatrix:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"Missing embeddings (run `embed` first): {path}")
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise EmbeddingError(f"{path} is not an EMB1 file")
    n, d, tag = HEADER.unpack_from(data, 4)
    start = 4 + HEADER.size
    end = start + n * d * 4
    if len(data) < end:
        raise EmbeddingError(f"{path} is truncated")
    values = np.frombuffer(data[start:end], dtype="<f4").reshape(n, d).astype(np.float32)
    trailer = json.loads(data[end:].decode("utf-8"))
    source = {v: k for k, v in SOURCE_TAGS.items()}[tag]
    return EmbeddingMatrix(values=values, source=source, row_keys=list(trailer["row_keys"]))
