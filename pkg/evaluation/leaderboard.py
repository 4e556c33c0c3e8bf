import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
from pydantic import BaseModel

from training.repeats import RunResult

logger = logging.getLogger(__name__)

METRICS = ("accuracy", "precision_macro", "recall_macro", "f1_macro")
DISPLAY_NAMES = {
    "clip_ic": "CLIP_IC",
    "clip_cs": "CLIP_CS",
    "clip_em": "CLIP_EM",
    "siglip2": "SigLIP2",
    "vit": "ViT",
    "cnn_gen": "CNN_gen",
    "cnn_base": "CNN_base",
    "fnn_base": "FNN_base",
}


class LeaderboardError(ValueError):
    """Results cannot be ranked together"""


class LeaderboardRow(BaseModel):
    family: str
    repeats: int
    partial: bool
    mean: Dict[str, float]
    sigma: Dict[str, float]


class Leaderboard(BaseModel):
    rows: List[LeaderboardRow]

    @property
    def families(self) -> List[str]:
        return [r.family for r in self.rows]

    def to_frame(self) -> pd.DataFrame:
        records = []
        for rank, row in enumerate(self.rows, start=1):
            record = {"rank": rank, "family": row.family, "repeats": row.repeats, "partial": row.partial}
            for metric in METRICS:
                record[f"{metric}_mean"] = row.mean[metric]
                record[f"{metric}_sigma"] = row.sigma[metric]
            records.append(record)
        return pd.DataFrame(records)

    def to_csv(self, path, prov: Optional[Dict[str, Any]] = None) -> Path:
        """One row per family; provenance, when given, is repeated as trailing columns"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = self.to_frame()
        if prov:
            frame = frame.assign(**prov)
        frame.to_csv(path, index=False, float_format="%.6f")
        logger.info(f"💾 Leaderboard written to {path}")
        return path

    def to_markdown(self) -> str:
        header = "| Model | Accuracy | Precision | Recall | F1 |"
        lines = [header, "|---|---|---|---|---|"]
        for row in self.rows:
            name = DISPLAY_NAMES.get(row.family, row.family) + (" (partial)" if row.partial else "")
            cells = [f"{row.mean[m]:.3f} ± {row.sigma[m]:.3f}" for m in METRICS]
            lines.append(f"| {name} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"


def build_leaderboard(results: Sequence[RunResult]) -> Leaderboard:
    """Rank by mean accuracy, then mean F1, then family name"""
    if not results:
        raise LeaderboardError("No results to rank")
    seen = set()
    for result in results:
        if result.family in seen:
            raise LeaderboardError(f"Duplicate family in results: {result.family}")
        seen.add(result.family)
        missing = [m for m in METRICS if m not in result.mean]
        if missing:
            raise LeaderboardError(f"{result.family} is missing metrics {missing}")

    ranked = sorted(results, key=lambda r: (-r.mean["accuracy"], -r.mean["f1_macro"], r.family))
    rows = [
        LeaderboardRow(
            family=r.family,
            repeats=r.repeats,
            partial=r.partial,
            mean={m: r.mean[m] for m in METRICS},
            sigma={m: r.sigma.get(m, 0.0) for m in METRICS},
        )
        for r in ranked
    ]
    logger.info(f"📊 Leaderboard: {' > '.join(r.family for r in rows)}")
    return Leaderboard(rows=rows)
