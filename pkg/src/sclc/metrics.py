"""Confusion matrix and per-class precision/recall/F1 reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np


def confusion_matrix(y_true, y_pred, k: int) -> np.ndarray:
    """``cm[t, p]`` counts samples of true class ``t`` predicted as ``p``."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("label arrays differ in length")
    for name, arr in (("true", y_true), ("predicted", y_pred)):
        bad = arr[(arr < 0) | (arr >= k)]
        if bad.size:
            raise ValueError(f"{name} label {int(bad[0])} outside [0, {k})")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _div(num, den):
    den = np.asarray(den, dtype=np.float64)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


@dataclass
class ClassificationReport:
    class_names: list[str]
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float

    def macro(self) -> tuple[float, float, float]:
        return (float(self.precision.mean()), float(self.recall.mean()), float(self.f1.mean()))

    def weighted(self) -> tuple[float, float, float]:
        total = self.support.sum()
        if total == 0:
            return (0.0, 0.0, 0.0)
        w = self.support / total
        return tuple(float((w * v).sum()) for v in (self.precision, self.recall, self.f1))

    def rows(self):
        """``(label, precision, recall, f1, support)`` rows incl. the two averages."""
        for i, name in enumerate(self.class_names):
            yield name, self.precision[i], self.recall[i], self.f1[i], int(self.support[i])
        total = int(self.support.sum())
        yield ("macro avg", *self.macro(), total)
        yield ("weighted avg", *self.weighted(), total)

    def to_text(self) -> str:
        width = max([len(n) for n in self.class_names] + [len("weighted avg")])
        lines = [f"{'':<{width}}  precision  recall  f1-score  support"]
        rows = list(self.rows())
        for i, (name, p, r, f, s) in enumerate(rows):
            if i == len(self.class_names):
                lines.append("")
            lines.append(f"{name:<{width}}  {p:9.2f}  {r:6.2f}  {f:8.2f}  {s:7d}")
        lines.append(f"\n{'accuracy':<{width}}  {self.accuracy:9.4f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "precision", "recall", "f1", "support"])
        for name, p, r, f, s in self.rows():
            w.writerow([name, f"{p:.6f}", f"{r:.6f}", f"{f:.6f}", s])
        w.writerow(["accuracy", "", "", f"{self.accuracy:.6f}", int(self.support.sum())])
        return buf.getvalue()


def report(cm, class_names=None) -> ClassificationReport:
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError("confusion matrix must be square")
    k = cm.shape[0]
    names = list(class_names) if class_names is not None else [str(i) for i in range(k)]
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    support = cm.sum(axis=1)
    precision = _div(tp, predicted)
    recall = _div(tp, support)
    f1 = _div(2 * precision * recall, precision + recall)
    total = cm.sum()
    accuracy = float(tp.sum() / total) if total else 0.0
    return ClassificationReport(names, precision, recall, f1, support.astype(np.int64), accuracy)


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def side_by_side(left: ClassificationReport, right: ClassificationReport,
                 titles=("without cost-sensitive", "with cost-sensitive")) -> str:
    """Two reports in one table, one column group per report."""
    a, b = list(left.rows()), list(right.rows())
    width = max(len(r[0]) for r in a)
    head = f"{'':<{width}}  {titles[0]:^26}  {titles[1]:^26}"
    sub = f"{'':<{width}}  " + "  ".join(["precision  recall  f1   "] * 2)
    lines = [head, sub.rstrip()]
    for i, (ra, rb) in enumerate(zip(a, b)):
        if i == len(left.class_names):
            lines.append("")
        lines.append(f"{ra[0]:<{width}}  {ra[1]:9.2f}  {ra[2]:6.2f}  {ra[3]:4.2f}   "
                     f"{rb[1]:9.2f}  {rb[2]:6.2f}  {rb[3]:4.2f}")
    lines.append(f"\n{'accuracy':<{width}}  {left.accuracy:9.4f}{'':17}{right.accuracy:9.4f}")
    return "\n".join(lines) + "\n"
