import logging
from pathlib import Path
from typing import Dict, List, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from PIL import Image
from pydantic import BaseModel, Field

from config import LABELS
from dataset.downloader import cache_path
from dataset.manifest import DatasetManifest
from utils.artifacts import write_json

logger = logging.getLogger(__name__)


class EdaError(ValueError):
    """EDA requested on an empty dataset"""


class GroupStats(BaseModel):
    label: str
    count: int
    percent: float
    width_mean: float
    width_std: float
    height_mean: float
    height_std: float
    aspect_mean: float
    aspect_std: float
    width_range: List[int]
    height_range: List[int]
    single_sample: bool = False


class EdaReport(BaseModel):
    classes: List[GroupStats] = Field(default_factory=list)
    overall: GroupStats

    def by_label(self) -> Dict[str, GroupStats]:
        return {row.label: row for row in self.classes}

    def to_frame(self) -> pd.DataFrame:
        rows = [row.model_dump() for row in self.classes + [self.overall]]
        return pd.DataFrame(rows).set_index("label")

    def to_markdown(self) -> str:
        lines = [
            "| Label | Count | % of Total | Width (mean ± σ, px) | Height (mean ± σ, px) | Aspect Ratio (mean ± σ) |",
            "|---|---:|---:|---:|---:|---:|",
        ]
        for row in self.classes + [self.overall]:
            lines.append(
                f"| {row.label} | {row.count} | {row.percent:.1f}% | {row.width_mean:.1f} ± {row.width_std:.1f} "
                f"| {row.height_mean:.1f} ± {row.height_std:.1f} | {row.aspect_mean:.2f} ± {row.aspect_std:.2f} |"
            )
        return "\n".join(lines) + "\n"


def manifest_frame(manifest: DatasetManifest) -> pd.DataFrame:
    frame = pd.DataFrame([r.model_dump() for r in manifest.records])
    frame["aspect"] = frame["width"] / frame["height"]
    return frame


def _group_stats(label: str, group: pd.DataFrame, total: int) -> GroupStats:
    n = len(group)

    def std(col):
        # Sample standard deviation; a single image has no spread
        return float(group[col].std(ddof=1)) if n > 1 else 0.0

    return GroupStats(
        label=label,
        count=n,
        percent=100.0 * n / total,
        width_mean=float(group["width"].mean()),
        width_std=std("width"),
        height_mean=float(group["height"].mean()),
        height_std=std("height"),
        aspect_mean=float(group["aspect"].mean()),
        aspect_std=std("aspect"),
        width_range=[int(group["width"].min()), int(group["width"].max())],
        height_range=[int(group["height"].min()), int(group["height"].max())],
        single_sample=n == 1,
    )


def compute_eda(manifest: DatasetManifest) -> EdaReport:
    """Per-class and overall count, share, and width/height/aspect (width/height) mean and sample σ"""
    if len(manifest) == 0:
        raise EdaError("empty dataset")

    frame = manifest_frame(manifest)
    total = len(frame)
    classes = []
    for label in LABELS:
        group = frame[frame["label"] == label]
        if len(group) == 0:
            continue
        stats = _group_stats(label, group, total)
        if stats.single_sample:
            logger.warning(f"⚠️ Class {label} has a single image; σ reported as 0")
        classes.append(stats)

    report = EdaReport(classes=classes, overall=_group_stats("overall", frame, total))
    logger.info(
        f"📊 EDA: {total} images, width {report.overall.width_mean:.1f} ± {report.overall.width_std:.1f}, "
        f"height {report.overall.height_mean:.1f} ± {report.overall.height_std:.1f}"
    )
    return report


def plot_eda(manifest: DatasetManifest, out_dir, prov: Optional[dict] = None) -> List[Path]:
    """Scatter, box plots, aspect histogram and overlaid histograms, each with its data table"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = manifest_frame(manifest)
    written = []

    fig, ax = plt.subplots(figsize=(5, 4))
    for label in LABELS:
        group = frame[frame["label"] == label]
        ax.scatter(group["width"], group["height"], s=12, alpha=0.7, label=label)
    ax.set_xlabel("width (px)")
    ax.set_ylabel("height (px)")
    ax.set_title("Width vs height")
    ax.legend()
    written.append(_save(fig, out_dir / "eda_scatter.png"))
    write_json(
        out_dir / "eda_scatter.json",
        {"points": frame[["image_id", "label", "width", "height"]].to_dict(orient="records")},
        prov,
    )

    present = [label for label in LABELS if (frame["label"] == label).any()]
    fig, axes = plt.subplots(1, 2, figsize=(8, 4))
    for ax, col in zip(axes, ("width", "height")):
        ax.boxplot([frame.loc[frame["label"] == label, col] for label in present])
        ax.set_xticks(range(1, len(present) + 1), present)
        ax.set_title(f"{col} by activity")
        ax.tick_params(axis="x", rotation=20)
    written.append(_save(fig, out_dir / "eda_box.png"))
    quartiles = {
        label: {
            col: [float(q) for q in np.percentile(frame.loc[frame["label"] == label, col], [0, 25, 50, 75, 100])]
            for col in ("width", "height")
        }
        for label in present
    }
    write_json(out_dir / "eda_box.json", {"quartiles": quartiles}, prov)

    fig, ax = plt.subplots(figsize=(5, 4))
    counts, edges, _ = ax.hist(frame["aspect"], bins=20)
    ax.set_xlabel("aspect ratio (width / height)")
    ax.set_title("Aspect ratio distribution")
    written.append(_save(fig, out_dir / "eda_aspect.png"))
    write_json(out_dir / "eda_aspect.json", {"counts": counts.tolist(), "edges": edges.tolist()}, prov)

    fig, ax = plt.subplots(figsize=(5, 4))
    bins = np.linspace(min(frame["width"].min(), frame["height"].min()), max(frame["width"].max(), frame["height"].max()), 25)
    w_counts, _, _ = ax.hist(frame["width"], bins=bins, alpha=0.5, label="width")
    h_counts, _, _ = ax.hist(frame["height"], bins=bins, alpha=0.5, label="height")
    ax.set_xlabel("pixels")
    ax.set_title("Height and width distributions")
    ax.legend()
    written.append(_save(fig, out_dir / "eda_overlay.png"))
    write_json(
        out_dir / "eda_overlay.json",
        {"edges": bins.tolist(), "width_counts": w_counts.tolist(), "height_counts": h_counts.tolist()},
        prov,
    )
    return written


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def dataset_mean_color(manifest: DatasetManifest, cache_dir) -> List[float]:
    """Mean RGB in [0, 1] over every cached image (the fill colour for deletion masking)"""
    if len(manifest) == 0:
        raise EdaError("empty dataset")
    sums = np.zeros(3, dtype=np.float64)
    pixels = 0
    for record in manifest.records:
        with Image.open(cache_path(record, cache_dir)) as img:
            array = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
        sums += array.reshape(-1, 3).sum(axis=0)
        pixels += array.shape[0] * array.shape[1]
    return (sums / pixels).tolist()
