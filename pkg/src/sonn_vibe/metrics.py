"""Confusion matrices and per-class sensitivity / precision / F1.

Matrix rows are ground truth, columns are predictions. For class c:
TP = cm[c][c], FN = row sum - TP, FP = column sum - TP, and

    Sen = TP / (TP + FN),  Ppr = TP / (TP + FP),  F1 = 2*Ppr*Sen / (Ppr + Sen)

with any zero denominator mapping the metric to 0.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .signal import CLASS_ABBREV


def confusion(preds, labels, n_classes: int = 4) -> np.ndarray:
    """Count matrix with rows = ground truth, columns = prediction."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError("preds and labels must have identical length")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


@dataclass(frozen=True)
class EvalReport:
    """Confusion matrix plus per-class Sen/Ppr/F1 and overall accuracy."""

    confusion: np.ndarray
    sensitivity: np.ndarray
    precision: np.ndarray
    f1: np.ndarray
    accuracy: float

    @property
    def n_classes(self) -> int:
        return self.confusion.shape[0]

    def macro_f1(self) -> float:
        return float(self.f1.mean())


def per_class(cm: np.ndarray) -> EvalReport:
    """Per-class metrics from a confusion matrix; empty classes score 0."""
    cm = np.asarray(cm, dtype=np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {cm.shape}")
    if (cm < 0).any():
        raise ValueError("confusion matrix counts must be non-negative")
    tp = np.diag(cm).astype(np.float64)
    fn = cm.sum(axis=1) - tp
    fp = cm.sum(axis=0) - tp

    def safe_div(num, den):
        out = np.zeros_like(num, dtype=np.float64)
        np.divide(num, den, out=out, where=den > 0)
        return out

    sen = safe_div(tp, tp + fn)
    ppr = safe_div(tp, tp + fp)
    f1 = safe_div(2.0 * ppr * sen, ppr + sen)
    total = cm.sum()
    acc = float(tp.sum() / total) if total > 0 else 0.0
    return EvalReport(confusion=cm, sensitivity=sen, precision=ppr, f1=f1, accuracy=acc)


@dataclass(frozen=True)
class MetricSummary:
    """Arithmetic means of metrics across several evaluation reports."""

    sensitivity: np.ndarray
    precision: np.ndarray
    f1: np.ndarray
    accuracy: float

    def macro_f1(self) -> float:
        return float(self.f1.mean())


def mean_of_reports(reports: list[EvalReport]) -> MetricSummary:
    if not reports:
        raise ValueError("need at least one report to average")
    return MetricSummary(
        sensitivity=np.mean([r.sensitivity for r in reports], axis=0),
        precision=np.mean([r.precision for r in reports], axis=0),
        f1=np.mean([r.f1 for r in reports], axis=0),
        accuracy=float(np.mean([r.accuracy for r in reports])),
    )


def report_table(report: EvalReport | MetricSummary,
                 class_names: tuple[str, ...] = CLASS_ABBREV) -> str:
    """Aligned text table: one row per class with Sen, Ppr, F1 columns."""
    out = io.StringIO()
    width = max(len(n) for n in class_names) + 2
    out.write(f"{'class':<{width}}{'Sen':>8}{'Ppr':>8}{'F1':>8}\n")
    for c, name in enumerate(class_names):
        out.write(f"{name:<{width}}{report.sensitivity[c]:>8.4f}"
                  f"{report.precision[c]:>8.4f}{report.f1[c]:>8.4f}\n")
    out.write(f"{'accuracy':<{width}}{report.accuracy:>8.4f}\n")
    if isinstance(report, EvalReport):
        out.write("\nconfusion (rows = truth, cols = prediction):\n")
        header = " ".join(f"{n:>6}" for n in class_names)
        out.write(f"{'':<{width}}{header}\n")
        for c, name in enumerate(class_names):
            row = " ".join(f"{v:>6d}" for v in report.confusion[c])
            out.write(f"{name:<{width}}{row}\n")
    return out.getvalue()


def report_csv(report: EvalReport | MetricSummary,
               class_names: tuple[str, ...] = CLASS_ABBREV) -> str:
    """CSV rendering: class,sen,ppr,f1 rows plus a trailing accuracy row."""
    lines = ["class,sen,ppr,f1"]
    for c, name in enumerate(class_names):
        lines.append(f"{name},{report.sensitivity[c]:.6f},"
                     f"{report.precision[c]:.6f},{report.f1[c]:.6f}")
    lines.append(f"accuracy,{report.accuracy:.6f},,")
    return "\n".join(lines) + "\n"
