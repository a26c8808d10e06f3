"""Accuracy, Macro-F1 and seed aggregation."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty input")
    return pred, truth


def accuracy(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(pred == truth))


def confusion_matrix(pred, truth, num_classes: int) -> np.ndarray:
    """``cm[i, j]`` counts items of true class ``i`` predicted as ``j``."""
    pred, truth = _pair(pred, truth)
    if max(pred.max(), truth.max()) >= num_classes or min(pred.min(), truth.min()) < 0:
        raise ValueError(f"labels must lie in [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    return cm


def per_class_prf(cm: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    tp = np.diag(cm).astype(np.float64)
    pred_pos = cm.sum(axis=0).astype(np.float64)
    true_pos = cm.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, pred_pos, out=np.zeros_like(tp), where=pred_pos > 0)
    recall = np.divide(tp, true_pos, out=np.zeros_like(tp), where=true_pos > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return precision, recall, f1


def macro_f1(pred, truth, num_classes: int, warn: bool = True) -> float:
    """Unweighted mean of per-class F1 over all ``num_classes`` classes.

    A class absent from both ``pred`` and ``truth`` counts as F1 = 0.
    """
    cm = confusion_matrix(pred, truth, num_classes)
    _, _, f1 = per_class_prf(cm)
    if warn:
        absent = np.flatnonzero((cm.sum(axis=0) == 0) & (cm.sum(axis=1) == 0))
        if absent.size:
            warnings.warn(f"classes {absent.tolist()} absent from pred and truth; scored F1=0", stacklevel=2)
    return float(f1.mean())


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    confusion: list[list[int]]
    seed: int
    split: str
    config: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return asdict(self)


def evaluate(pred, truth, num_classes: int, seed: int = 0, split: str = "test", config: dict | None = None) -> EvalReport:
    cm = confusion_matrix(pred, truth, num_classes)
    p, r, f1 = per_class_prf(cm)
    return EvalReport(
        accuracy=accuracy(pred, truth),
        macro_f1=float(f1.mean()),
        precision=p.tolist(),
        recall=r.tolist(),
        f1=f1.tolist(),
        confusion=cm.tolist(),
        seed=seed,
        split=split,
        config=dict(config or {}),
    )


def aggregate(reports: Sequence[EvalReport]) -> dict[str, tuple[float, float]]:
    """Mean and sample standard deviation (ddof=1; 0 for one report) per metric."""
    if not reports:
        raise ValueError("no reports to aggregate")
    first = reports[0]
    for r in reports[1:]:
        if r.split != first.split or r.config != first.config:
            raise ValueError("cannot aggregate reports from different splits or configs")
    out = {}
    for key in ("accuracy", "macro_f1"):
        vals = np.array([getattr(r, key) for r in reports])
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        out[key] = (float(vals.mean()), std)
    return out
