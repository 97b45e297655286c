"""
Baseline objectives: information maximization (entropy plus class diversity)
and attract/disperse over neighbor and background sets.
"""
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from core.errors import ParameterError, ShapeError
from core.simplex import validate_prob_vector, xlogx
from memory.bank import MemoryBank
from objectives.base import BaseObjective, BatchContext, BatchLoss, ObjectiveResult

_TINY = np.finfo(np.float64).tiny


def _batch_probs(probs: ArrayLike) -> NDArray[np.float64]:
    if np.size(probs) == 0:
        raise ParameterError("loss needs a non-empty batch")
    return np.atleast_2d(validate_prob_vector(probs, "predictions"))


def im_loss(probs: ArrayLike) -> Tuple[BatchLoss, NDArray[np.float64]]:
    """
    Mean per-sample entropy plus sum_k p_hat_k log p_hat_k.

    Returns:
        (BatchLoss with soft_term = mean entropy and div_term = -H(p_hat), dL/dp).
    """
    p = _batch_probs(probs)
    n = p.shape[0]
    p_hat = p.mean(axis=0)
    mean_entropy = float(-np.sum(xlogx(p)) / n)
    neg_marginal_entropy = float(np.sum(xlogx(p_hat)))
    grads = (-(np.log(np.maximum(p, _TINY)) + 1.0) + (np.log(np.maximum(p_hat, _TINY)) + 1.0)) / n
    return BatchLoss.compose(mean_entropy, neg_marginal_entropy, 1.0), grads


def aad_loss(
    probs: ArrayLike,
    indices: ArrayLike,
    bank: MemoryBank,
    neighbor_sets: Optional[Sequence[Sequence[int]]],
    background_sets: Sequence[Sequence[int]],
    lambda2: float,
) -> Tuple[BatchLoss, NDArray[np.float64]]:
    """
    Attract predictions to cached neighbor predictions, disperse from background ones.

    Args:
        probs: Batch predictions, n x C.
        indices: Bank indices of the batch samples.
        bank: Memory bank holding the cached probabilities (constants).
        neighbor_sets: C_i per sample; defaults to the bank's neighbor lists.
        background_sets: B_i per sample; may be empty.
        lambda2: Dispersion weight, >= 0.

    Raises:
        ParameterError: If some B_i intersects C_i or contains i, or lambda2 < 0.
    """
    if lambda2 < 0:
        raise ParameterError(f"lambda2 must be non-negative, got {lambda2}")
    p = _batch_probs(probs)
    idx = np.asarray(indices, dtype=np.int64)
    n, C = p.shape
    if idx.shape != (n,) or len(background_sets) != n:
        raise ShapeError(f"expected {n} indices and background sets")
    if neighbor_sets is None:
        attract = bank.neighborhood_probabilities(idx)
        neighbor_sets = bank.neighbor_lists[idx]
    else:
        if len(neighbor_sets) != n:
            raise ShapeError(f"expected {n} neighbor sets, got {len(neighbor_sets)}")
        attract = np.stack([bank.probs[np.asarray(c, dtype=np.int64)].sum(axis=0) for c in neighbor_sets])

    disperse = np.zeros((n, C))
    for row, (i, neighbors, background) in enumerate(zip(idx, neighbor_sets, background_sets)):
        bg = np.asarray(background, dtype=np.int64)
        if bg.size == 0:
            continue
        forbidden = set(int(j) for j in neighbors) | {int(i)}
        if forbidden.intersection(int(m) for m in bg):
            raise ParameterError(f"background set of sample {int(i)} overlaps its neighbors or itself")
        disperse[row] = bank.probs[bg].sum(axis=0)

    attraction = -float(np.mean(np.sum(p * attract, axis=1)))
    dispersion = float(np.mean(np.sum(p * disperse, axis=1)))
    grads = (-attract + lambda2 * disperse) / n
    return BatchLoss.compose(attraction, dispersion, lambda2), grads


def sample_background_sets(
    bank: MemoryBank, indices: Sequence[int], size: int, rng: np.random.Generator
) -> List[NDArray[np.int64]]:
    """Draw `size` distinct non-neighbors (excluding the sample itself) per index, uniformly."""
    if size < 0:
        raise ParameterError(f"background size must be >= 0, got {size}")
    sets = []
    for i in indices:
        if size == 0:
            sets.append(np.zeros(0, dtype=np.int64))
            continue
        allowed = np.ones(bank.size, dtype=bool)
        allowed[bank.neighbor_lists[i]] = False
        allowed[i] = False
        candidates = np.flatnonzero(allowed)
        take = min(size, candidates.size)
        sets.append(np.sort(rng.choice(candidates, size=take, replace=False)).astype(np.int64))
    return sets


class IMObjective(BaseObjective):
    """Information maximization; needs no memory bank."""

    name = "im"

    def evaluate(self, probs: NDArray[np.float64], ctx: BatchContext) -> ObjectiveResult:
        loss, grads = im_loss(probs)
        return self.finish(loss, probs, grads)


class AaDObjective(BaseObjective):
    """
    Attract/disperse with top-k bank neighbors and uniformly sampled backgrounds.

    Background sets are drawn from a generator reseeded at every epoch.
    """

    name = "aad"

    def __init__(self, lambda2: float = 1.0, background_size: int = 5):
        if lambda2 < 0:
            raise ParameterError(f"lambda2 must be non-negative, got {lambda2}")
        self.lambda2 = lambda2
        self.background_size = background_size
        self._rng = np.random.default_rng(0)

    def prepare_epoch(self, epoch: int, seed: int) -> None:
        self._rng = np.random.default_rng([seed, epoch])

    def evaluate(self, probs: NDArray[np.float64], ctx: BatchContext) -> ObjectiveResult:
        if ctx.bank is None:
            raise ParameterError("attract/disperse needs a memory bank")
        backgrounds = sample_background_sets(ctx.bank, ctx.indices, self.background_size, self._rng)
        loss, grads = aad_loss(probs, ctx.indices, ctx.bank, None, backgrounds, self.lambda2)
        return self.finish(loss, probs, grads)
