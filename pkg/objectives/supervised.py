from typing import Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from core.errors import ParameterError, ShapeError
from core.simplex import validate_prob_vector

_TINY = np.finfo(np.float64).tiny


def smoothed_targets(labels: ArrayLike, num_classes: int, smoothing: float = 0.0) -> NDArray[np.float64]:
    """
    (1 - eps) * onehot(label) + eps / C, one row per label.

    Raises:
        ParameterError: If a label is outside 0..C-1 or eps is outside [0, 1).
    """
    if not 0.0 <= smoothing < 1.0:
        raise ParameterError(f"label smoothing must lie in [0, 1), got {smoothing}")
    y = np.atleast_1d(np.asarray(labels))
    if not np.issubdtype(y.dtype, np.integer):
        raise ParameterError(f"labels must be integers, got dtype {y.dtype}")
    if np.any(y < 0) or np.any(y >= num_classes):
        raise ParameterError(f"labels must lie in 0..{num_classes - 1}, got {y.min()}..{y.max()}")
    targets = np.full((y.size, num_classes), smoothing / num_classes)
    targets[np.arange(y.size), y] += 1.0 - smoothing
    return targets


def cross_entropy(p: ArrayLike, label: int, smoothing: float = 0.0) -> Tuple[float, NDArray[np.float64]]:
    """
    Label-smoothed cross-entropy of a single prediction.

    Returns:
        (loss, dL/dp).
    """
    probs = validate_prob_vector(p, "prediction")
    if probs.ndim != 1:
        raise ShapeError(f"cross_entropy expects one probability vector, got shape {probs.shape}")
    y = smoothed_targets([label], probs.size, smoothing)[0]
    safe = np.maximum(probs, _TINY)
    loss = -float(np.sum(y * np.log(safe)))
    return loss, -y / safe


def cross_entropy_batch(
    probs: ArrayLike, labels: ArrayLike, smoothing: float = 0.0
) -> Tuple[float, NDArray[np.float64]]:
    """
    Mean label-smoothed cross-entropy over a batch.

    The gradient is returned directly in logit space, (p - y) / n, which is the
    softmax-Jacobian image of the probability-space gradient.

    Returns:
        (mean loss, dL/dlogits of shape n x C).
    """
    p = np.atleast_2d(validate_prob_vector(probs, "predictions"))
    n, C = p.shape
    y = smoothed_targets(labels, C, smoothing)
    if y.shape[0] != n:
        raise ShapeError(f"got {y.shape[0]} labels for {n} predictions")
    loss = -float(np.mean(np.sum(y * np.log(np.maximum(p, _TINY)), axis=1)))
    return loss, (p - y) / n
