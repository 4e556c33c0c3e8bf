import logging
from typing import Dict, List, Literal, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)

Label = Union[str, int]


class MetricsError(ValueError):
    """Bad labels or an empty confusion matrix"""


class ConfusionMatrix(BaseModel):
    counts: List[List[int]]
    class_order: List[str]

    @property
    def total(self) -> int:
        return int(sum(sum(row) for row in self.counts))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)


class MetricReport(BaseModel):
    accuracy: float
    precision: float
    recall: float
    f1: float
    average: Literal["macro", "weighted"] = "macro"
    per_class: Dict[str, Dict[str, float]] = Field(default_factory=dict)
    zero_division: List[str] = Field(default_factory=list)
    confusion: ConfusionMatrix

    def as_dict(self) -> Dict[str, float]:
        return {
            "accuracy": self.accuracy,
            f"precision_{self.average}": self.precision,
            f"recall_{self.average}": self.recall,
            f"f1_{self.average}": self.f1,
        }

    def metric(self, name: str) -> float:
        values = self.as_dict()
        if name not in values:
            raise MetricsError(f"Unknown metric '{name}', available: {list(values)}")
        return values[name]

    def to_json_dict(self) -> Dict:
        """metrics.json layout"""
        data = dict(self.as_dict())
        data.update(
            {
                "confusion": self.confusion.counts,
                "class_order": self.confusion.class_order,
                "per_class": self.per_class,
                "zero_division": self.zero_division,
            }
        )
        return data


def _index(label: Label, class_order: Sequence[str], position: int) -> int:
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
        if 0 <= label < len(class_order):
            return int(label)
    elif label in class_order:
        return class_order.index(label)
    raise MetricsError(f"Unknown label {label!r} at index {position}; class order is {list(class_order)}")


def confusion(y_true: Sequence[Label], y_pred: Sequence[Label], class_order: Sequence[str]) -> ConfusionMatrix:
    """Rows are true classes, columns predicted. Labels may be names or indices into class_order."""
    if len(y_true) != len(y_pred):
        raise MetricsError(f"y_true has {len(y_true)} labels but y_pred has {len(y_pred)}")
    if len(y_true) == 0:
        raise MetricsError("Cannot build a confusion matrix from zero samples")
    size = len(class_order)
    counts = np.zeros((size, size), dtype=np.int64)
    for i, (t, p) in enumerate(zip(y_true, y_pred)):
        counts[_index(t, class_order, i), _index(p, class_order, i)] += 1
    return ConfusionMatrix(counts=counts.tolist(), class_order=list(class_order))


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def metrics_from_confusion(cm: ConfusionMatrix, average: Literal["macro", "weighted"] = "macro") -> MetricReport:
    """Per-class P/R/F1 with 0 for undefined ratios (flagged), averaged macro or by support"""
    counts = cm.as_array()
    total = int(counts.sum())
    if total == 0:
        raise MetricsError("Empty confusion matrix")
    if average not in ("macro", "weighted"):
        raise MetricsError(f"average must be 'macro' or 'weighted', got {average}")

    per_class, flags = {}, []
    for c, label in enumerate(cm.class_order):
        tp = int(counts[c, c])
        fp = int(counts[:, c].sum()) - tp
        fn = int(counts[c, :].sum()) - tp
        if tp + fp == 0:
            flags.append(f"precision:{label}")
        if tp + fn == 0:
            flags.append(f"recall:{label}")
        if 2 * tp + fp + fn == 0:
            flags.append(f"f1:{label}")
        per_class[label] = {
            "precision": _ratio(tp, tp + fp),
            "recall": _ratio(tp, tp + fn),
            "f1": _ratio(2 * tp, 2 * tp + fp + fn),
            "support": tp + fn,
        }

    if average == "macro":
        weights = [1.0 / len(cm.class_order)] * len(cm.class_order)
    else:
        weights = [per_class[label]["support"] / total for label in cm.class_order]

    def averaged(key):
        return float(sum(w * per_class[label][key] for w, label in zip(weights, cm.class_order)))

    if flags:
        logger.debug(f"⚠️ Zero-division in {flags}, reported as 0")
    return MetricReport(
        accuracy=float(np.trace(counts)) / total,
        precision=averaged("precision"),
        recall=averaged("recall"),
        f1=averaged("f1"),
        average=average,
        per_class=per_class,
        zero_division=flags,
        confusion=cm,
    )


def evaluate_labels(y_true: Sequence[Label], y_pred: Sequence[Label], class_order: Sequence[str], average="macro") -> MetricReport:
    return metrics_from_confusion(confusion(y_true, y_pred, class_order), average=average)
