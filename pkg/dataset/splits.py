import json
import logging
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from config import LABELS
from dataset.manifest import DatasetManifest, id_sort_key
from utils import artifacts

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")
GENERATOR_NAME = "numpy.MT19937"


class SplitError(ValueError):
    """Invalid split request"""


class SplitAssignment(BaseModel):
    seed: int
    ratios: Tuple[float, float, float]
    generator_name: str = GENERATOR_NAME
    membership: Dict[str, str] = Field(default_factory=dict)
    warnings: List[str] = Field(default_factory=list)

    def ids(self, split: str) -> List[str]:
        return sorted((i for i, s in self.membership.items() if s == split), key=id_sort_key)

    def counts(self, manifest: DatasetManifest) -> Dict[str, Dict[str, int]]:
        """Per-class split counts, e.g. {"sitting": {"train": 76, "val": 10, "test": 9}}"""
        table = {}
        for record in manifest.records:
            row = table.setdefault(record.label, {name: 0 for name in SPLIT_NAMES})
            row[self.membership[record.image_id]] += 1
        return table

    def totals(self) -> Dict[str, int]:
        return {name: sum(1 for s in self.membership.values() if s == name) for name in SPLIT_NAMES}

    def to_json_dict(self) -> Dict:
        membership = {key: self.membership[key] for key in sorted(self.membership, key=id_sort_key)}
        return {
            "seed": self.seed,
            "ratios": list(self.ratios),
            "generator_name": self.generator_name,
            "membership": membership,
        }

    def write_json(self, path, prov: Optional[Dict] = None) -> Path:
        data = self.to_json_dict()
        data["warnings"] = self.warnings
        return artifacts.write_json(path, data, prov)

    @classmethod
    def read_json(cls, path) -> "SplitAssignment":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Split file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return cls(
            seed=data["seed"],
            ratios=tuple(data["ratios"]),
            generator_name=data.get("generator_name", GENERATOR_NAME),
            membership=data["membership"],
        )


def allocate(n: int, ratios: Sequence[float]) -> List[int]:
    """Largest-remainder apportionment of n items; ties go to the earlier split (train > val > test)"""
    exact = [Fraction(r).limit_denominator(10**9) * n for r in ratios]
    counts = [int(q) for q in exact]  # floor, quotas are non-negative
    leftover = n - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def stratified_split(manifest: DatasetManifest, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 42) -> SplitAssignment:
    """Shuffle each class with a seeded MT19937 permutation, then cut by largest-remainder quotas"""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != len(SPLIT_NAMES):
        raise SplitError(f"Expected {len(SPLIT_NAMES)} ratios, got {len(ratios)}")
    if any(r <= 0 for r in ratios):
        raise SplitError(f"Ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"Ratios must sum to 1, got {sum(ratios)}")

    rng = np.random.Generator(np.random.MT19937(seed))
    membership: Dict[str, str] = {}
    warnings = []
    by_label: Dict[str, List[str]] = {}
    for record in manifest.records:
        by_label.setdefault(record.label, []).append(record.image_id)

    for label in LABELS:
        ids = sorted(by_label.get(label, []), key=id_sort_key)
        if not ids:
            continue
        if len(ids) < len(SPLIT_NAMES):
            message = f"class {label} has {len(ids)} images, fewer than {len(SPLIT_NAMES)} splits"
            logger.warning(f"⚠️ {message}")
            warnings.append(message)
        shuffled = [ids[i] for i in rng.permutation(len(ids))]
        start = 0
        for name, count in zip(SPLIT_NAMES, allocate(len(ids), ratios)):
            for image_id in shuffled[start : start + count]:
                membership[image_id] = name
            start += count

    assignment = SplitAssignment(seed=seed, ratios=ratios, membership=membership, warnings=warnings)
    logger.info(f"📊 Split (seed {seed}): {assignment.totals()}")
    return assignment
