import logging
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import torch
from torch.utils.data import DataLoader

from config import LABELS
from evaluation.leaderboard import Leaderboard
from evaluation.metrics import MetricReport, evaluate_labels
from evaluation.reference_results import CLIP_IC_MIN_ACCURACY, EXPECTED_RANKINGS, REFERENCE_RESULTS
from models.scratch import forward
from training.data import SplitDataset
from utils.artifacts import write_json

logger = logging.getLogger(__name__)


class Evaluator:
    def __init__(self, class_order: Sequence[str] = LABELS, batch_size: int = 32, device: Optional[torch.device] = None):
        self.class_order = list(class_order)
        self.batch_size = batch_size
        self.device = device or torch.device("cpu")

    @torch.no_grad()
    def predict(self, model, dataset: SplitDataset) -> List[Dict[str, Any]]:
        """One record per image: {image_id, true, pred, confidence, is_correct}"""
        model.eval()
        model.to(self.device)
        records = []
        loader = DataLoader(dataset, batch_size=self.batch_size, shuffle=False, num_workers=0)
        offset = 0
        for inputs, targets in loader:
            probs = torch.softmax(forward(model, inputs.to(self.device)).float(), dim=1).cpu()
            confidence, pred = probs.max(dim=1)
            for j in range(targets.shape[0]):
                true_label = self.class_order[int(targets[j])]
                pred_label = self.class_order[int(pred[j])]
                records.append(
                    {
                        "image_id": dataset.ids[offset + j],
                        "true": true_label,
                        "pred": pred_label,
                        "confidence": round(float(confidence[j]), 6),
                        "is_correct": true_label == pred_label,
                    }
                )
            offset += targets.shape[0]
        return records

    def run_evaluation(self, model, dataset: SplitDataset, progress_callback: Optional[Callable] = None) -> Dict[str, Any]:
        """Predict a split and compute the metric report"""
        start_time = time.time()
        logger.info(f"🧪 Evaluating {type(model).__name__} on {len(dataset)} images...")
        try:
            predictions = self.predict(model, dataset)
        except Exception as e:
            logger.error(f"❌ Evaluation failed: {e}")
            raise

        if progress_callback:
            for i, record in enumerate(predictions):
                status = "✅ PASS" if record["is_correct"] else "❌ FAIL"
                progress_callback(i + 1, len(predictions), record["image_id"], status, record)

        report = self.calculate_metrics(predictions)
        metrics = self.class_breakdown(predictions)
        metrics["execution_time"] = time.time() - start_time
        logger.info(f"📊 Evaluation complete: {metrics['correct']}/{metrics['total']} correct (accuracy {report.accuracy:.3f})")
        return {"predictions": predictions, "report": report, "metrics": metrics}

    def calculate_metrics(self, predictions: List[Dict[str, Any]], average: str = "macro") -> MetricReport:
        return evaluate_labels([p["true"] for p in predictions], [p["pred"] for p in predictions], self.class_order, average=average)

    def class_breakdown(self, predictions: List[Dict[str, Any]]) -> Dict[str, Any]:
        total = len(predictions)
        correct = sum(1 for p in predictions if p["is_correct"])
        breakdown = {}
        for label in self.class_order:
            class_results = [p for p in predictions if p["true"] == label]
            class_total = len(class_results)
            class_correct = sum(1 for p in class_results if p["is_correct"])
            breakdown[label] = {
                "total": class_total,
                "correct": class_correct,
                "accuracy": class_correct / class_total if class_total > 0 else 0,
            }
        return {"total": total, "correct": correct, "incorrect": total - correct, "class_breakdown": breakdown}

    def compare_to_reference(self, leaderboard: Leaderboard, tolerance: float = 0.1, reference: Optional[Dict] = None) -> Dict[str, Any]:
        """Check mean test accuracy per family against the reference table, plus the expected orderings"""
        reference = reference or REFERENCE_RESULTS
        by_family = {row.family: row for row in leaderboard.rows}
        results = {}
        for family, row in by_family.items():
            if family not in reference:
                continue
            expected, _ = reference[family]["accuracy"]
            observed = row.mean["accuracy"]
            results[family] = {
                "expected": expected,
                "observed": observed,
                "difference": observed - expected,
                "within_tolerance": abs(observed - expected) <= tolerance,
            }

        rankings = []
        for better, worse in EXPECTED_RANKINGS:
            if better in by_family and worse in by_family:
                holds = by_family[better].mean["accuracy"] > by_family[worse].mean["accuracy"]
                rankings.append({"better": better, "worse": worse, "holds": holds})

        floor = None
        if "clip_ic" in by_family:
            floor = by_family["clip_ic"].mean["accuracy"] >= CLIP_IC_MIN_ACCURACY

        passed = sum(1 for r in results.values() if r["within_tolerance"])
        summary = {
            "tolerance": tolerance,
            "families": results,
            "rankings": rankings,
            "clip_ic_floor": floor,
            "pass_rate": passed / len(results) if results else 0.0,
        }
        for r in rankings:
            if not r["holds"]:
                logger.warning(f"⚠️ Expected {r['better']} > {r['worse']} does not hold")
        logger.info(f"📊 Reference comparison: {passed}/{len(results)} families within ±{tolerance}")
        return summary


def plot_confusion(report: MetricReport, path, title: str = "", prov: Optional[dict] = None) -> Path:
    """Confusion matrix heatmap (PNG) with its counts alongside as JSON"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cm = report.confusion
    fig, ax = plt.subplots(figsize=(4.5, 4))
    ax.imshow(cm.as_array(), cmap="Blues")
    ticks = range(len(cm.class_order))
    ax.set_xticks(list(ticks))
    ax.set_xticklabels(cm.class_order, rotation=30, ha="right")
    ax.set_yticks(list(ticks))
    ax.set_yticklabels(cm.class_order)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i, row in enumerate(cm.counts):
        for j, value in enumerate(row):
            ax.text(j, i, str(value), ha="center", va="center")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    write_json(path.with_suffix(".json"), {"class_order": cm.class_order, "confusion": cm.counts}, prov)
    return path
