import csv
import json
import logging
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Tuple

from pydantic import BaseModel, Field

from config import LABELS

logger = logging.getLogger(__name__)

Label = Literal["walking_running", "sitting", "standing"]

CANONICAL_COUNTS = {"walking_running": 98, "sitting": 95, "standing": 92}
CANONICAL_RANGES = ((300, 640), (240, 640))

_LABEL_ALIASES = {
    "walking_running": "walking_running",
    "walking/running": "walking_running",
    "walking-running": "walking_running",
    "walking running": "walking_running",
    "walking": "walking_running",
    "running": "walking_running",
    "sitting": "sitting",
    "standing": "standing",
}


class ManifestError(ValueError):
    """Rejected annotation source"""


class ImageRecord(BaseModel):
    image_id: str
    url: str
    file_name: str
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    label: Label

    @property
    def extension(self) -> str:
        return Path(self.file_name).suffix.lstrip(".").lower() or "jpg"

    @property
    def aspect_ratio(self) -> float:
        return self.width / self.height


def id_sort_key(image_id: str):
    """Numeric ids sort numerically, anything else lexicographically after them"""
    return (0, int(image_id), "") if image_id.isdigit() else (1, 0, image_id)


def normalize_label(raw) -> Optional[str]:
    if raw is None:
        return None
    return _LABEL_ALIASES.get(str(raw).strip().lower())


class DatasetManifest(BaseModel):
    records: List[ImageRecord] = Field(default_factory=list)

    @property
    def class_counts(self) -> Dict[str, int]:
        counts = Counter(r.label for r in self.records)
        return {label: counts.get(label, 0) for label in LABELS}

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> List[str]:
        return [r.image_id for r in self.records]

    @property
    def by_id(self) -> Dict[str, ImageRecord]:
        return {r.image_id: r for r in self.records}

    def subset(self, labels: Sequence[str]) -> "DatasetManifest":
        """Records whose label is in `labels`, order preserved (the binary task uses sitting and standing)"""
        keep = set(labels)
        return DatasetManifest(records=[r for r in self.records if r.label in keep])

    def write_jsonl(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for record in self.records:
                f.write(json.dumps(record.model_dump(), sort_keys=True, ensure_ascii=False) + "\n")
        logger.info(f"✅ Wrote manifest with {len(self.records)} records to {path}")
        return path

    @classmethod
    def read_jsonl(cls, path) -> "DatasetManifest":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Manifest not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            rows = [json.loads(line) for line in f if line.strip()]
        return build_manifest(rows, dimension_range=None)


def build_manifest(
    source: Iterable[Mapping],
    dimension_range: Optional[Tuple[Tuple[int, int], Tuple[int, int]]] = CANONICAL_RANGES,
) -> DatasetManifest:
    """Validate annotation rows and return a manifest ordered by ascending image_id.

    Each row needs image_id, url, file_name, width, height and exactly one label.
    `dimension_range` is ((min_w, max_w), (min_h, max_h)); None skips the range check.
    """
    records: Dict[str, ImageRecord] = {}
    for row in source:
        image_id = str(row.get("image_id", row.get("id", ""))).strip()
        if not image_id:
            raise ManifestError(f"Record without image_id: {dict(row)}")
        if image_id in records:
            raise ManifestError(f"Duplicate image_id: {image_id}")

        raw_label = row.get("label")
        if isinstance(raw_label, (list, tuple)):
            if len(raw_label) != 1:
                raise ManifestError(f"Image {image_id} must carry exactly one label, got {raw_label}")
            raw_label = raw_label[0]
        label = normalize_label(raw_label)
        if label is None:
            raise ManifestError(f"Image {image_id} has missing or unknown label {raw_label!r}")

        try:
            record = ImageRecord(
                image_id=image_id,
                url=str(row.get("url", row.get("coco_url", ""))),
                file_name=str(row.get("file_name", f"{image_id}.jpg")),
                width=int(row["width"]),
                height=int(row["height"]),
                label=label,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError(f"Invalid record for image {image_id}: {e}") from e

        if dimension_range is not None:
            (min_w, max_w), (min_h, max_h) = dimension_range
            if not (min_w <= record.width <= max_w and min_h <= record.height <= max_h):
                raise ManifestError(
                    f"Image {image_id} is {record.width}x{record.height}, outside "
                    f"width [{min_w}, {max_w}] / height [{min_h}, {max_h}]"
                )
        records[image_id] = record

    ordered = [records[key] for key in sorted(records, key=id_sort_key)]
    manifest = DatasetManifest(records=ordered)
    logger.info(f"📊 Manifest built: {len(manifest)} images, counts {manifest.class_counts}")
    if len(manifest) == sum(CANONICAL_COUNTS.values()) and manifest.class_counts != CANONICAL_COUNTS:
        logger.warning(f"⚠️ Class counts {manifest.class_counts} differ from the canonical {CANONICAL_COUNTS}")
    return manifest


def load_annotation_source(path, labels_path=None) -> List[Dict]:
    """Read a curated JSONL list, or join a COCO instances file with a curated label CSV"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Annotation source not found: {path}")

    if path.suffix == ".jsonl":
        with open(path, "r", encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]

    if labels_path is None:
        raise ManifestError("A COCO instances file needs a curated label CSV (image_id,label)")
    with open(labels_path, "r", encoding="utf-8", newline="") as f:
        curated = {str(row["image_id"]).strip(): row["label"] for row in csv.DictReader(f)}

    with open(path, "r", encoding="utf-8") as f:
        coco = json.load(f)
    images = {str(img["id"]): img for img in coco.get("images", [])}

    missing = sorted(set(curated) - set(images), key=id_sort_key)
    if missing:
        raise ManifestError(f"Curated ids not present in {path.name}: {missing[:10]}")

    rows = []
    for image_id, label in curated.items():
        img = images[image_id]
        rows.append(
            {
                "image_id": image_id,
                "url": img.get("coco_url") or img.get("flickr_url", ""),
                "file_name": img["file_name"],
                "width": img["width"],
                "height": img["height"],
                "label": label,
            }
        )
    logger.info(f"🔄 Joined {len(rows)} curated labels with COCO image entries")
    return rows
