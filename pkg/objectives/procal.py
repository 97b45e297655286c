"""
Calibrated neighborhood supervision: calibration of neighbor aggregates with
online and source predictions, the soft supervision loss and the diversity loss.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from core.errors import ParameterError, ShapeError
from core.simplex import as_float_array, validate_prob_vector
from memory.bank import MemoryBank
from objectives.base import BaseObjective, BatchContext, BatchLoss, ObjectiveResult


@dataclass
class CalibratedTarget:
    """
    Calibrated soft target p_cal = p_N + gamma * (p_t + p_s), single or batched.

    Only p_t carries gradient; p_N and p_s are constants. The use_* flags
    record which calibration terms are present.
    """

    p_cal: NDArray[np.float64]
    p_N: NDArray[np.float64]
    p_t: NDArray[np.float64]
    p_s: NDArray[np.float64]
    gamma: float
    use_target: bool = True
    use_source: bool = True

    @property
    def q(self) -> NDArray[np.float64]:
        """Gradient-free part of the target: p_N + gamma * p_s."""
        return self.p_N + self.gamma * self.p_s if self.use_source else self.p_N.copy()

    @property
    def self_weight(self) -> float:
        """Coefficient of p inside p_cal that carries gradient."""
        return self.gamma if self.use_target else 0.0


def calibrate(
    p_N: ArrayLike,
    p_t: ArrayLike,
    p_s: ArrayLike,
    gamma: float,
    use_target: bool = True,
    use_source: bool = True,
) -> CalibratedTarget:
    """
    Fuse the neighbor aggregate with online and source predictions.

    Args:
        p_N: Unnormalized neighbor aggregate(s).
        p_t: Online prediction(s) of the current model.
        p_s: Frozen source prior(s).
        gamma: Calibration strength, >= 0.
        use_target / use_source: Switch the online / source term off (ablation).

    Raises:
        ParameterError: If gamma is negative.
        ShapeError: If the vectors do not share one shape.
    """
    if gamma < 0:
        raise ParameterError(f"gamma must be non-negative, got {gamma}")
    agg = as_float_array(p_N, "neighbor aggregate")
    online = validate_prob_vector(p_t, "online prediction")
    prior = validate_prob_vector(p_s, "source prior")
    if not agg.shape == online.shape == prior.shape:
        raise ShapeError(f"calibration inputs disagree in shape: {agg.shape}, {online.shape}, {prior.shape}")
    p_cal = agg.copy()
    if use_target:
        p_cal = p_cal + gamma * online
    if use_source:
        p_cal = p_cal + gamma * prior
    return CalibratedTarget(p_cal, agg, online, prior, float(gamma), use_target, use_source)


def soft_loss(
    target: CalibratedTarget, probs: ArrayLike, detach_self_term: bool = False
) -> Tuple[float, NDArray[np.float64]]:
    """
    Negative mean dot product between calibrated targets and predictions.

    The probability-space gradient is -(q_i + 2*gamma*p_i)/n when the online
    term carries gradient, and -p_cal_i/n when it is detached or absent.

    Returns:
        (loss, dL/dp) with dL/dp of shape n x C.
    """
    p = np.atleast_2d(validate_prob_vector(probs, "predictions"))
    p_cal = np.atleast_2d(target.p_cal)
    if p.shape != p_cal.shape:
        raise ShapeError(f"targets {p_cal.shape} and predictions {p.shape} disagree")
    n = p.shape[0]
    loss = -float(np.mean(np.sum(p_cal * p, axis=1)))
    weight = 0.0 if detach_self_term else target.self_weight
    grads = -(p_cal + weight * p) / n
    return loss, grads


def diversity_loss(probs: ArrayLike) -> Tuple[float, NDArray[np.float64]]:
    """
    Sum over samples of p_i . p_hat, with p_hat the batch mean prediction.

    Equals (1/n) * ||sum_i p_i||^2; the gradient with respect to every p_i is 2 * p_hat.

    Raises:
        ParameterError: On an empty batch.
    """
    p = np.atleast_2d(validate_prob_vector(probs, "predictions")) if np.size(probs) else np.zeros((0, 0))
    n = p.shape[0]
    if n == 0:
        raise ParameterError("diversity loss needs a non-empty batch")
    p_hat = p.mean(axis=0)
    loss = float(np.sum(p @ p_hat))
    grads = np.tile(2.0 * p_hat, (n, 1))
    return loss, grads


def procal_loss(
    probs: ArrayLike,
    indices: ArrayLike,
    bank: MemoryBank,
    gamma: float,
    beta: float,
    detach_self_term: bool = False,
    use_target_term: bool = True,
    use_source_term: bool = True,
    summed_diversity: bool = False,
) -> Tuple[BatchLoss, NDArray[np.float64], NDArray[np.float64]]:
    """
    Joint objective L_soft + beta * L_div on one mini-batch.

    Both terms are normalized by batch size unless `summed_diversity`, which
    keeps the diversity term as a plain sum over samples.

    Returns:
        (BatchLoss, dL/dp, dL/dlogits).
    """
    result = ProCalObjective(
        detach_self_term=detach_self_term,
        use_target_term=use_target_term,
        use_source_term=use_source_term,
        summed_diversity=summed_diversity,
    ).evaluate(
        np.atleast_2d(np.asarray(probs, dtype=np.float64)),
        BatchContext(indices=np.asarray(indices, dtype=np.int64), bank=bank, gamma=gamma, beta=beta),
    )
    return result.loss, result.prob_grads, result.logit_grads


class ProCalObjective(BaseObjective):
    """
    Calibrated soft supervision plus diversity.

    Attributes:
        include_soft / include_div: Drop one term for the single-loss variants; the
            diversity-only variant keeps its beta weight.
        detach_self_term: Stop gradient through the online term inside p_cal.
        use_target_term / use_source_term: Calibration ablation switches.
        summed_diversity: Keep L_div as an unnormalized sum over samples.
    """

    def __init__(
        self,
        include_soft: bool = True,
        include_div: bool = True,
        detach_self_term: bool = False,
        use_target_term: bool = True,
        use_source_term: bool = True,
        summed_diversity: bool = False,
        name: str = "procal",
    ):
        if not (include_soft or include_div):
            raise ParameterError("objective needs at least one loss term")
        self.include_soft = include_soft
        self.include_div = include_div
        self.detach_self_term = detach_self_term
        self.use_target_term = use_target_term
        self.use_source_term = use_source_term
        self.summed_diversity = summed_diversity
        self.name = name

    def evaluate(self, probs: NDArray[np.float64], ctx: BatchContext) -> ObjectiveResult:
        n, C = probs.shape
        soft_value, soft_grads = 0.0, np.zeros((n, C))
        if self.include_soft:
            if ctx.bank is None:
                raise ParameterError("soft supervision needs a memory bank")
            target = calibrate(
                ctx.bank.neighborhood_probabilities(ctx.indices),
                probs,
                ctx.bank.source_priors[ctx.indices],
                ctx.gamma,
                use_target=self.use_target_term,
                use_source=self.use_source_term,
            )
            soft_value, soft_grads = soft_loss(target, probs, detach_self_term=self.detach_self_term)

        div_value, div_grads = diversity_loss(probs)
        if not self.summed_diversity:
            div_value, div_grads = div_value / n, div_grads / n

        if not self.include_div:
            loss = BatchLoss.compose(soft_value, div_value, 0.0)
            return self.finish(loss, probs, soft_grads)
        if not self.include_soft:
            loss = BatchLoss.compose(0.0, div_value, ctx.beta)
            return self.finish(loss, probs, ctx.beta * div_grads)
        loss = BatchLoss.compose(soft_value, div_value, ctx.beta)
        return self.finish(loss, probs, soft_grads + ctx.beta * div_grads)
