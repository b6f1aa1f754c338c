"""
Classifier metrics (accuracy, macro precision / recall, F1) and certified
robustness accuracy.
"""

from typing import List, Sequence

import numpy as np
from pydantic import BaseModel, Field

from utils.errors import DimensionMismatchError
from utils.verdict import Verdict, VerdictCode


class ConfusionCounts(BaseModel):
    """One-vs-rest counts per class"""
    num_classes: int = Field(..., ge=1)
    total: int = Field(..., ge=0)
    tp: List[int]
    tn: List[int]
    fp: List[int]
    fn: List[int]


class ClassMetrics(BaseModel):
    precision: float
    recall: float


class MetricsReport(BaseModel):
    accuracy: float = Field(..., ge=0.0, le=1.0)
    precision_macro: float = Field(..., ge=0.0, le=1.0)
    recall_macro: float = Field(..., ge=0.0, le=1.0)
    f1: float = Field(..., ge=0.0, le=1.0)
    per_class: List[ClassMetrics] = Field(default_factory=list)


def confusion(preds: Sequence[int], labels: Sequence[int], num_classes: int) -> ConfusionCounts:
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if preds.shape != labels.shape:
        raise DimensionMismatchError(f"{preds.size} predictions for {labels.size} labels")
    for name, values in (("prediction", preds), ("label", labels)):
        if values.size and (values.min() < 0 or values.max() >= num_classes):
            raise ValueError(f"{name} class outside [0, {num_classes})")
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (labels, preds), 1)
    tp = np.diag(matrix)
    fp = matrix.sum(axis=0) - tp
    fn = matrix.sum(axis=1) - tp
    total = int(preds.size)
    tn = total - tp - fp - fn
    return ConfusionCounts(num_classes=num_classes, total=total, tp=tp.tolist(), tn=tn.tolist(),
                           fp=fp.tolist(), fn=fn.tolist())


def _ratio(num: int, den: int) -> float:
    # absent classes (0/0) count as 0 in the macro average
    return num / den if den else 0.0


def compute_metrics(cc: ConfusionCounts) -> MetricsReport:
    if cc.total == 0:
        raise ValueError("metrics need at least one prediction")
    per_class = [
        ClassMetrics(precision=_ratio(tp, tp + fp), recall=_ratio(tp, tp + fn))
        for tp, fp, fn in zip(cc.tp, cc.fp, cc.fn)
    ]
    precision = float(np.mean([c.precision for c in per_class]))
    recall = float(np.mean([c.recall for c in per_class]))
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return MetricsReport(
        accuracy=sum(cc.tp) / cc.total,
        precision_macro=precision,
        recall_macro=recall,
        f1=f1,
        per_class=per_class,
    )


def cra(verdicts: Sequence[Verdict]) -> float:
    """Certified robustness accuracy: share of code-1 verdicts (codes 0 and 2 both count against)"""
    if not verdicts:
        raise ValueError("CRA needs at least one verdict")
    return sum(1 for v in verdicts if v.code == VerdictCode.ROBUST) / len(verdicts)
