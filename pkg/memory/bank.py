"""
Per-sample cache of features, predictions and frozen source priors over the
whole target set, with exact top-k cosine retrieval.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from core.errors import InsufficientDataError, ParameterError, ShapeError, WriteOnceError
from core.model import ModelParams, forward_batch
from core.simplex import as_float_array, l2_normalize, validate_prob_vector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RefreshPolicy:
    """
    When to run a full bank refresh (features, probabilities, neighbor lists).

    A refresh fires at every mini-batch count that is a multiple of `period`.
    """

    period: int

    def __post_init__(self):
        if self.period < 1:
            raise ParameterError(f"refresh period must be >= 1, got {self.period}")

    @staticmethod
    def from_tau(tau: int, batches_per_epoch: int, tau_is_period: bool = False) -> "RefreshPolicy":
        """
        Derive the refresh period from the memory-update frequency tau.

        By default tau counts refreshes per epoch, so period = max(1, ceil(batches_per_epoch / tau));
        with `tau_is_period` the period is tau mini-batches.
        """
        if tau < 1:
            raise ParameterError(f"tau must be a positive integer, got {tau}")
        if batches_per_epoch < 1:
            raise ParameterError(f"batches_per_epoch must be >= 1, got {batches_per_epoch}")
        if tau_is_period:
            return RefreshPolicy(period=tau)
        return RefreshPolicy(period=max(1, math.ceil(batches_per_epoch / tau)))

    def should_refresh(self, batch_count: int) -> bool:
        return batch_count % self.period == 0


def rank_neighbors(similarities: NDArray[np.float64], i: int, k: int) -> NDArray[np.int64]:
    """
    Top-k indices of a similarity row, excluding `i`.

    Sorted by descending similarity; ties go to the lower index.
    """
    sims = np.array(similarities, dtype=np.float64)
    sims[i] = -np.inf
    order = np.argsort(-sims, kind="stable")
    return order[:k].astype(np.int64)


class MemoryBank:
    """
    Memory bank over N target samples.

    Attributes:
        features: N x h L2-normalized features.
        probs: N x C cached online predictions.
        neighbor_lists: N x k neighbor indices (self excluded).
        k: Effective neighborhood size, min(k_config, N - 1).
        last_full_refresh: Iteration of the most recent full refresh.
    """

    def __init__(self, features: ArrayLike, probs: ArrayLike, k: int):
        feats = as_float_array(features, "features")
        prob_arr = validate_prob_vector(probs, "bank probabilities")
        if feats.ndim != 2 or prob_arr.ndim != 2 or feats.shape[0] != prob_arr.shape[0]:
            raise ShapeError(f"features {feats.shape} and probabilities {prob_arr.shape} must have matching rows")
        n = feats.shape[0]
        if n < 2:
            raise InsufficientDataError(f"a memory bank needs at least 2 samples, got {n}")
        if k < 1:
            raise ParameterError(f"k must be a positive integer, got {k}")
        self.k_config = k
        self.k = min(k, n - 1)
        self.features = l2_normalize(feats)
        self.probs = prob_arr.copy()
        self._source_priors: Optional[NDArray[np.float64]] = None
        self.neighbor_lists = np.zeros((n, self.k), dtype=np.int64)
        self.last_full_refresh = 0
        self.rebuild_neighbors()

    @classmethod
    def initialize(cls, source_probs: ArrayLike, features: ArrayLike, k: int) -> "MemoryBank":
        """
        Build a bank from the source model's outputs on the target set.

        Priors are frozen and the cached probabilities start at the same values.
        """
        bank = cls(features, source_probs, k)
        bank.freeze_priors(source_probs)
        logger.info("Initialized memory bank: N=%d, h=%d, C=%d, k=%d", bank.size, bank.feature_dim, bank.num_classes, bank.k)
        return bank

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]

    @property
    def source_priors(self) -> NDArray[np.float64]:
        if self._source_priors is None:
            raise ParameterError("source priors have not been frozen yet")
        return self._source_priors

    def freeze_priors(self, priors: ArrayLike) -> None:
        """
        Store the source priors once.

        Raises:
            WriteOnceError: On any second call.
        """
        if self._source_priors is not None:
            raise WriteOnceError("source priors are write-once and have already been frozen")
        arr = validate_prob_vector(priors, "source priors")
        if arr.shape != self.probs.shape:
            raise ShapeError(f"priors shape {arr.shape} does not match bank {self.probs.shape}")
        frozen = arr.copy()
        frozen.setflags(write=False)
        self._source_priors = frozen

    def similarities(self, i: int) -> NDArray[np.float64]:
        # row-wise reduction: identical rows give bit-identical scores
        return np.sum(self.features * self.features[i], axis=1)

    def top_k_neighbors(self, i: int, k: int) -> NDArray[np.int64]:
        """
        Exact top-k cosine neighbors of sample i.

        Raises:
            ParameterError: If i is not a sample index or k is outside 1..N-1.
        """
        if not 0 <= i < self.size:
            raise ParameterError(f"sample index {i} outside 0..{self.size - 1}")
        if not 1 <= k <= self.size - 1:
            raise ParameterError(f"k must lie in 1..{self.size - 1}, got {k}")
        return rank_neighbors(self.similarities(i), i, k)

    def rebuild_neighbors(self) -> None:
        for i in range(self.size):
            self.neighbor_lists[i] = rank_neighbors(self.similarities(i), i, self.k)

    def neighborhood_probability(self, i: int) -> NDArray[np.float64]:
        """Unnormalized sum of the cached probabilities of i's neighbors."""
        return self.probs[self.neighbor_lists[i]].sum(axis=0)

    def neighborhood_probabilities(self, indices: Sequence[int]) -> NDArray[np.float64]:
        """Row-wise neighborhood_probability for a batch of sample indices."""
        idx = np.asarray(indices, dtype=np.int64)
        return self.probs[self.neighbor_lists[idx]].sum(axis=1)

    def update_probs(self, indices: Sequence[int], probs: ArrayLike) -> None:
        """Overwrite cached predictions for in-batch samples; neighbor lists stay."""
        arr = validate_prob_vector(probs, "online probabilities")
        idx = np.asarray(indices, dtype=np.int64)
        if arr.shape != (idx.size, self.num_classes):
            raise ShapeError(f"probabilities shape {arr.shape} does not match {idx.size} indices x {self.num_classes} classes")
        self.probs[idx] = arr

    def refresh(self, params: ModelParams, inputs: ArrayLike, iteration: int = 0) -> "MemoryBank":
        """
        Recompute features and predictions under `params` and rebuild all neighbor lists.

        Raises:
            ShapeError: If the model or inputs drifted from the bank's dimensions.
        """
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.size:
            raise ShapeError(f"refresh expects {self.size} input rows, got shape {x.shape}")
        if params.h != self.feature_dim or params.C != self.num_classes:
            raise ShapeError(
                f"model (h={params.h}, C={params.C}) does not match bank (h={self.feature_dim}, C={self.num_classes})"
            )
        z, _, p, _ = forward_batch(params, x)
        self.features = l2_normalize(z)
        self.probs = p
        self.rebuild_neighbors()
        self.last_full_refresh = iteration
        logger.debug("Refreshed memory bank at iteration %d", iteration)
        return self
