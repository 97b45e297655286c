from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from core.model import softmax_jacobian_vector_product
from memory.bank import MemoryBank

LOSS_TOL = 1e-12


@dataclass
class BatchLoss:
    """
    Scalar loss of one mini-batch and its two components.

    Attributes:
        total: soft_term + beta * div_term.
        soft_term: Primary (supervision / attraction / entropy) term.
        div_term: Secondary (diversity / dispersion) term.
        beta: Weight of the secondary term.
    """

    total: float
    soft_term: float
    div_term: float
    beta: float

    @staticmethod
    def compose(soft_term: float, div_term: float, beta: float) -> "BatchLoss":
        return BatchLoss(total=soft_term + beta * div_term, soft_term=soft_term, div_term=div_term, beta=beta)


@dataclass
class ObjectiveResult:
    """Loss plus gradients in probability space and in logit space (both n x C)."""

    loss: BatchLoss
    prob_grads: NDArray[np.float64]
    logit_grads: NDArray[np.float64]


@dataclass
class BatchContext:
    """
    Everything an objective may read besides the batch predictions.

    Attributes:
        indices: Bank indices of the batch samples.
        bank: Memory bank snapshot (cached neighbor probabilities, priors).
        gamma: Calibration strength at this iteration.
        beta: Weight of the secondary loss term at this iteration.
    """

    indices: NDArray[np.int64]
    bank: Optional[MemoryBank]
    gamma: float = 1.0
    beta: float = 1.0


class BaseObjective(ABC):
    """
    Interface of every adaptation objective.

    Concrete objectives return probability-space gradients; the conversion to
    logit gradients through the softmax Jacobian is shared here.
    """

    name: str = "objective"

    def prepare_epoch(self, epoch: int, seed: int) -> None:
        """Hook called at the start of every epoch (reseeding, caches)."""
        pass

    @abstractmethod
    def evaluate(self, probs: NDArray[np.float64], ctx: BatchContext) -> ObjectiveResult:
        """Loss and gradients for the predictions `probs` (n x C) of one batch."""
        pass

    @staticmethod
    def finish(loss: BatchLoss, probs: NDArray[np.float64], prob_grads: NDArray[np.float64]) -> ObjectiveResult:
        return ObjectiveResult(
            loss=loss,
            prob_grads=prob_grads,
            logit_grads=softmax_jacobian_vector_product(probs, prob_grads),
        )
