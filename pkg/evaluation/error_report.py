import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
from PIL import Image
from pydantic import BaseModel, Field

from dataset.downloader import cache_path
from dataset.manifest import DatasetManifest
from utils.artifacts import write_json

logger = logging.getLogger(__name__)

NO_ERRORS_NOTE = "no misclassifications"


class ErrorReport(BaseModel):
    galleries: Dict[str, List[Dict[str, Any]]] = Field(default_factory=dict)
    notes: Dict[str, str] = Field(default_factory=dict)
    misclassified_by_all: List[str] = Field(default_factory=list)

    def size(self, family: str) -> int:
        return len(self.galleries.get(family, []))


def collect_errors(predictions: Dict[str, Sequence[Dict[str, Any]]]) -> ErrorReport:
    """Misclassified test images per family, plus the images every family got wrong"""
    report = ErrorReport()
    wrong_sets = []
    for family, records in predictions.items():
        wrong = [dict(r) for r in records if r["true"] != r["pred"]]
        wrong.sort(key=lambda r: -r["confidence"])
        report.galleries[family] = wrong
        if not wrong:
            report.notes[family] = NO_ERRORS_NOTE
        wrong_sets.append({r["image_id"] for r in wrong})
        logger.info(f"📊 {family}: {len(wrong)}/{len(records)} test images misclassified")
    if wrong_sets:
        common = set.intersection(*wrong_sets)
        order = [r["image_id"] for r in next(iter(predictions.values()))]
        report.misclassified_by_all = [i for i in order if i in common]
    return report


def _thumbnail(path, size: int = 160):
    with Image.open(path) as img:
        img = img.convert("RGB")
        img.thumbnail((size, size))
        return img.copy()


def render_gallery(family: str, items: Sequence[Dict[str, Any]], manifest: DatasetManifest, cache_dir, path, columns: int = 5) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = manifest.by_id
    rows = max(1, -(-len(items) // columns))
    fig, axes = plt.subplots(rows, columns, figsize=(2.6 * columns, 2.8 * rows), squeeze=False)
    for ax in axes.flat:
        ax.axis("off")
    if not items:
        axes[0][0].text(0.0, 0.5, f"{family}: {NO_ERRORS_NOTE}", fontsize=12)
    for ax, item in zip(axes.flat, items):
        ax.imshow(_thumbnail(cache_path(records[item["image_id"]], cache_dir)))
        ax.set_title(f"{item['true']} → {item['pred']}\n({item['confidence']:.2f})", fontsize=8)
    fig.suptitle(family)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def render_overview(report: ErrorReport, manifest: DatasetManifest, cache_dir, path, per_family: int = 6) -> Path:
    """One row per family with its most confident mistakes"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = manifest.by_id
    families = list(report.galleries)
    fig, axes = plt.subplots(max(1, len(families)), per_family, figsize=(2.2 * per_family, 2.4 * max(1, len(families))), squeeze=False)
    for ax in axes.flat:
        ax.axis("off")
    for row, family in enumerate(families):
        axes[row][0].set_ylabel(family)
        items = report.galleries[family][:per_family]
        if not items:
            axes[row][0].text(0.0, 0.5, f"{family}: {NO_ERRORS_NOTE}", fontsize=9)
        for col, item in enumerate(items):
            ax = axes[row][col]
            ax.imshow(_thumbnail(cache_path(records[item["image_id"]], cache_dir), 120))
            ax.set_title(f"{family}\n{item['true']} → {item['pred']}", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def report_errors(
    predictions: Dict[str, Sequence[Dict[str, Any]]],
    manifest: DatasetManifest,
    cache_dir,
    out_dir,
    prov: Optional[dict] = None,
) -> ErrorReport:
    """Galleries (PNG) per family, an overview figure and errors.json with the cross-model table"""
    out_dir = Path(out_dir)
    report = collect_errors(predictions)
    for family, items in report.galleries.items():
        render_gallery(family, items, manifest, cache_dir, out_dir / f"errors_{family}.png")
    if report.galleries:
        render_overview(report, manifest, cache_dir, out_dir / "errors_overview.png")
    write_json(out_dir / "errors.json", report.model_dump(), prov)
    logger.info(f"✅ Error report: {len(report.misclassified_by_all)} images misclassified by every model")
    return report
