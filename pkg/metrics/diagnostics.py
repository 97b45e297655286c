"""
Training-dynamics diagnostics: source-knowledge forgetting and the rate of
entirely incorrect neighborhood supervision.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from core.errors import ShapeError
from core.model import ModelParams, forward_batch
from datasets.views import LabeledDataset
from memory.bank import MemoryBank

logger = logging.getLogger(__name__)


def forgetting_rate(source_correct_mask: ArrayLike, predictions: ArrayLike, labels: ArrayLike) -> float:
    """
    Error rate of the current model on the samples the source model got right.

    Returns 0.0 when the mask is empty.
    """
    mask = np.asarray(source_correct_mask, dtype=bool)
    pred = np.asarray(predictions)
    y = np.asarray(labels)
    if not mask.shape == pred.shape == y.shape:
        raise ShapeError(f"mask {mask.shape}, predictions {pred.shape} and labels {y.shape} must match")
    total = int(mask.sum())
    if total == 0:
        return 0.0
    return float(np.sum(mask & (pred != y)) / total)


def _neighbor_wrong(bank: MemoryBank, labels: ArrayLike) -> NDArray[np.bool_]:
    y = np.asarray(labels)
    if y.shape != (bank.size,):
        raise ShapeError(f"expected {bank.size} labels, got shape {y.shape}")
    neighbor_pred = np.argmax(bank.probs, axis=1)[bank.neighbor_lists]
    return neighbor_pred != y[:, None]


def incorrect_supervision_rate(bank: MemoryBank, labels: ArrayLike) -> float:
    """Fraction of samples whose every neighbor's cached argmax differs from the sample's label."""
    return float(np.mean(np.all(_neighbor_wrong(bank, labels), axis=1)))


def partial_incorrect_rate(bank: MemoryBank, labels: ArrayLike) -> float:
    """Fraction of samples with at least one neighbor whose cached argmax is wrong."""
    return float(np.mean(np.any(_neighbor_wrong(bank, labels), axis=1)))


def calibrated_incorrect_rate(
    bank: MemoryBank, labels: ArrayLike, gamma: float, online_probs: Optional[ArrayLike] = None
) -> float:
    """
    Fraction of samples whose calibrated target p_N + gamma * (p_t + p_s) has a wrong argmax.

    `online_probs` defaults to the bank's cached predictions.
    """
    y = np.asarray(labels)
    if y.shape != (bank.size,):
        raise ShapeError(f"expected {bank.size} labels, got shape {y.shape}")
    p_t = bank.probs if online_probs is None else np.asarray(online_probs, dtype=np.float64)
    p_cal = bank.neighborhood_probabilities(np.arange(bank.size)) + gamma * (p_t + bank.source_priors)
    return float(np.mean(np.argmax(p_cal, axis=1) != y))


@dataclass
class MonitorReading:
    accuracy: float
    forgetting_rate: float
    incorrect_supervision_rate: float
    partial_incorrect_rate: float
    calibrated_incorrect_rate: float


class TargetMonitor:
    """
    Owns the target labels on behalf of the adaptation driver.

    The driver only ever sees the readings, never the labels themselves.
    """

    def __init__(self, target: LabeledDataset, source_params: ModelParams):
        self._inputs = target.inputs
        self._labels = target.labels.copy()
        self._source_predictions = self._predict(source_params)
        self._source_mask = self._source_predictions == self._labels

    def _predict(self, params: ModelParams) -> NDArray[np.int64]:
        _, _, p, _ = forward_batch(params, self._inputs)
        return np.argmax(p, axis=1)

    @property
    def source_accuracy(self) -> float:
        return float(np.mean(self._source_mask))

    def prior_accuracy(self, priors: ArrayLike) -> float:
        """Argmax accuracy of (possibly corrupted) source priors."""
        return float(np.mean(np.argmax(np.asarray(priors), axis=1) == self._labels))

    def observe(self, params: ModelParams, bank: MemoryBank, gamma: float) -> MonitorReading:
        _, _, p, _ = forward_batch(params, self._inputs)
        predictions = np.argmax(p, axis=1)
        return MonitorReading(
            accuracy=float(np.mean(predictions == self._labels)),
            forgetting_rate=forgetting_rate(self._source_mask, predictions, self._labels),
            incorrect_supervision_rate=incorrect_supervision_rate(bank, self._labels),
            partial_incorrect_rate=partial_incorrect_rate(bank, self._labels),
            calibrated_incorrect_rate=calibrated_incorrect_rate(bank, self._labels, gamma, p),
        )
