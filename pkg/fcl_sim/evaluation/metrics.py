"""
Balanced multiclass metrics: per-class recall and precision from a confusion matrix.
"""
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from sklearn.metrics import confusion_matrix

from fcl_sim.data import Dataset
from fcl_sim.exceptions import ShapeError, ValidationError
from fcl_sim.numeric_core import ModelParams, forward

AGGREGATION_MODES = ("local", "federated")


@dataclass
class Metrics:
    """
    Parameters
    ----------
    per_class_recall, per_class_precision : np.ndarray
        TP / (TP + FN) and TP / (TP + FP); 0 where the denominator is 0.
    classes_present : np.ndarray
        Boolean mask of classes with at least one true sample.
    mean_recall, mean_precision : float
        Means over the present classes only.
    confusion : np.ndarray, optional
        Rows are true classes, columns predictions.
    """

    per_class_recall: np.ndarray
    per_class_precision: np.ndarray
    classes_present: np.ndarray
    mean_recall: float
    mean_precision: float
    confusion: Optional[np.ndarray] = None

    @property
    def n_classes(self) -> int:
        return self.per_class_recall.shape[0]


def _safe_ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    out = np.zeros(numerator.shape, dtype=np.float64)
    np.divide(numerator, denominator, out=out, where=denominator > 0)
    return out


def metrics_from_confusion(confusion: np.ndarray) -> Metrics:
    confusion = np.asarray(confusion, dtype=np.int64)
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1]:
        raise ShapeError(f"confusion matrix must be square, got {confusion.shape}")
    if confusion.sum() == 0:
        raise ValidationError("confusion matrix is empty")

    tp = np.diag(confusion).astype(np.float64)
    support = confusion.sum(axis=1)
    recall = _safe_ratio(tp, support)
    precision = _safe_ratio(tp, confusion.sum(axis=0))
    present = support > 0

    return Metrics(
        per_class_recall=recall,
        per_class_precision=precision,
        classes_present=present,
        mean_recall=float(recall[present].mean()),
        mean_precision=float(precision[present].mean()),
        confusion=confusion,
    )


def predict(model: ModelParams, samples: np.ndarray) -> np.ndarray:
    logits, _ = forward(model, samples, "classify")
    return np.argmax(logits, axis=1)


def evaluate(model: ModelParams, test_set: Dataset) -> Metrics:
    """
    Argmax predictions of the classifier on a test set, summarized as balanced metrics.
    """
    if not len(test_set):
        raise ValidationError("cannot evaluate on an empty test set")
    if model.n_classes != test_set.n_classes:
        raise ShapeError(
            f"classifier has {model.n_classes} outputs, test set has {test_set.n_classes} classes",
            layer="classifier",
        )

    predictions = predict(model, test_set.flat())
    confusion = confusion_matrix(
        test_set.labels, predictions, labels=np.arange(test_set.n_classes)
    )
    return metrics_from_confusion(confusion)


def aggregate_metrics(per_device: List[Metrics], mode: str) -> Metrics:
    """
    Combines device-level metrics.

    ``local`` averages the device-level means (each device evaluates its own
    model); ``federated`` pools the confusion matrices of a shared model and
    recomputes the class means.
    """
    if not per_device:
        raise ValidationError("aggregate_metrics needs at least one device")
    if mode not in AGGREGATION_MODES:
        raise ValidationError(f"unknown aggregation mode {mode!r}")

    if mode == "federated":
        if any(m.confusion is None for m in per_device):
            raise ValidationError("federated aggregation needs confusion matrices")
        return metrics_from_confusion(sum(m.confusion for m in per_device))

    present = np.stack([m.classes_present for m in per_device])
    counts = present.sum(axis=0)

    def class_mean(rows):
        total = np.where(present, np.stack(rows), 0.0).sum(axis=0)
        return _safe_ratio(total, counts)

    return Metrics(
        per_class_recall=class_mean([m.per_class_recall for m in per_device]),
        per_class_precision=class_mean([m.per_class_precision for m in per_device]),
        classes_present=counts > 0,
        mean_recall=float(np.mean([m.mean_recall for m in per_device])),
        mean_precision=float(np.mean([m.mean_precision for m in per_device])),
    )
