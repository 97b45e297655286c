from dataclasses import dataclass
from typing import Dict, List

import numpy as np
from numpy.typing import ArrayLike, NDArray

from core.errors import ParameterError, ShapeError
from core.model import ModelParams, forward_batch
from datasets.views import LabeledDataset


@dataclass
class EvaluationReport:
    """
    Classification accuracy summary.

    Attributes:
        accuracy: trace(confusion) / N.
        per_class_accuracy: Recall per class; 0.0 for classes without samples.
        mean_per_class_accuracy: Mean recall over classes that have samples.
        confusion: C x C counts, rows are true classes, columns predictions.
    """

    accuracy: float
    per_class_accuracy: List[float]
    mean_per_class_accuracy: float
    confusion: List[List[int]]

    @property
    def num_samples(self) -> int:
        return int(np.sum(self.confusion))

    def to_dict(self) -> Dict:
        return {
            "accuracy": self.accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "mean_per_class_accuracy": self.mean_per_class_accuracy,
            "confusion": self.confusion,
            "num_samples": self.num_samples,
        }


def predict(params: ModelParams, inputs: ArrayLike) -> NDArray[np.int64]:
    """Argmax class per row; ties go to the lowest class index."""
    _, _, p, _ = forward_batch(params, inputs)
    return np.argmax(p, axis=1).astype(np.int64)


def report_from_predictions(predictions: ArrayLike, labels: ArrayLike, num_classes: int) -> EvaluationReport:
    """
    Raises:
        ParameterError: On an empty prediction set.
        ShapeError: If predictions and labels differ in length.
    """
    pred = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if pred.shape != y.shape:
        raise ShapeError(f"{pred.size} predictions for {y.size} labels")
    if y.size == 0:
        raise ParameterError("cannot evaluate an empty dataset")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    counts = confusion.sum(axis=1)
    present = counts > 0
    recall = np.zeros(num_classes)
    recall[present] = np.diag(confusion)[present] / counts[present]
    return EvaluationReport(
        accuracy=float(np.trace(confusion) / y.size),
        per_class_accuracy=[float(r) for r in recall],
        mean_per_class_accuracy=float(recall[present].mean()),
        confusion=confusion.tolist(),
    )


def evaluate(params: ModelParams, dataset: LabeledDataset) -> EvaluationReport:
    """Evaluate `params` on a labeled dataset."""
    if dataset.size == 0:
        raise ParameterError("cannot evaluate an empty dataset")
    return report_from_predictions(predict(params, dataset.inputs), dataset.labels, dataset.num_classes)
