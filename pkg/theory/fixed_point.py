"""
Closed-form analysis of the soft supervision loss for one sample.

With the external signal q = p_N + gamma * p_s held fixed, the loss
-(q . p + gamma * ||p||^2) has probability-space gradient -(q + 2 gamma p).
Its stationary point on the affine hull of the simplex (1^T p = 1) is

    lambda = (2 gamma + sum(q)) / C,    p* = (lambda - q) / (2 gamma).

p* may have negative entries; it is reported with a `feasible` flag and never clipped.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from core.errors import ParameterError, ShapeError
from core.simplex import as_float_array
from memory.bank import MemoryBank

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-12


@dataclass
class ExternalSignal:
    """Gradient-free part q of one sample's calibrated target."""

    q: NDArray[np.float64]
    gamma: float
    C: int


@dataclass
class FixedPoint:
    """
    Stationary point of the soft loss under the sum-to-one constraint.

    Attributes:
        p_star: C reals summing to 1; entries may be negative.
        lam: Lagrange multiplier.
        feasible: True when every entry is >= -1e-12.
    """

    p_star: NDArray[np.float64]
    lam: float
    feasible: bool


def _check_gamma(gamma: float) -> None:
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")


def build_external_signal(bank: MemoryBank, i: int, gamma: float) -> ExternalSignal:
    """q_i = neighborhood_probability(i) + gamma * source_priors[i]."""
    _check_gamma(gamma)
    if not 0 <= i < bank.size:
        raise ParameterError(f"sample index {i} outside 0..{bank.size - 1}")
    q = bank.neighborhood_probability(i) + gamma * bank.source_priors[i]
    return ExternalSignal(q=q, gamma=float(gamma), C=bank.num_classes)


def _pair(q: ArrayLike, p: ArrayLike) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    q_arr = as_float_array(q, "q")
    p_arr = as_float_array(p, "p")
    if q_arr.shape != p_arr.shape:
        raise ShapeError(f"q {q_arr.shape} and p {p_arr.shape} must have the same length")
    return q_arr, p_arr


def soft_gradient(q: ArrayLike, gamma: float, p: ArrayLike) -> NDArray[np.float64]:
    """-(q + 2 * gamma * p)."""
    q_arr, p_arr = _pair(q, p)
    return -(q_arr + 2.0 * gamma * p_arr)


def update_map(p: ArrayLike, q: ArrayLike, gamma: float, eta: float) -> NDArray[np.float64]:
    """
    One unconstrained descent step on the soft loss: p + eta * (q + 2 * gamma * p).

    Raises:
        ParameterError: If eta is negative.
    """
    if eta < 0:
        raise ParameterError(f"step size must be non-negative, got {eta}")
    q_arr, p_arr = _pair(q, p)
    return p_arr + eta * (q_arr + 2.0 * gamma * p_arr)


def fixed_point(q: ArrayLike, gamma: float, C: int) -> FixedPoint:
    """
    Closed-form stationary point.

    Raises:
        ParameterError: If gamma <= 0.
        ShapeError: If q does not have C entries.
    """
    _check_gamma(gamma)
    q_arr = as_float_array(q, "q")
    if q_arr.shape != (C,):
        raise ShapeError(f"q must have {C} entries, got shape {q_arr.shape}")
    lam = (2.0 * gamma + float(np.sum(q_arr))) / C
    p_star = (lam - q_arr) / (2.0 * gamma)
    return FixedPoint(p_star=p_star, lam=lam, feasible=bool(np.all(p_star >= -FEASIBILITY_TOL)))


def stationarity_residual(p: ArrayLike, q: ArrayLike, gamma: float) -> Tuple[float, float]:
    """
    Least-squares multiplier and distance to the stationarity condition.

    Returns:
        (lambda_hat, max_k |lambda_hat - (q_k + 2 gamma p_k)|) with lambda_hat the mean of q + 2 gamma p.
    """
    q_arr, p_arr = _pair(q, p)
    s = q_arr + 2.0 * gamma * p_arr
    lam_hat = float(np.mean(s))
    return lam_hat, float(np.max(np.abs(lam_hat - s)))


def random_signal(rng: np.random.Generator, C: int, gamma: float) -> NDArray[np.float64]:
    """Non-negative q drawn like a bank would produce: a k-neighbor sum plus a gamma-scaled prior."""
    k = int(rng.integers(1, 9))
    neighbors = rng.dirichlet(np.ones(C), size=k).sum(axis=0)
    return neighbors + gamma * rng.dirichlet(np.ones(C))


def run_fixed_point_trials(trials: int, seed: int = 0) -> List[Dict[str, object]]:
    """
    Random (q, gamma, C) draws with gamma in [0.05, 5] and C in 2..10.

    Returns:
        One row per trial: trial, C, gamma, simplex_residual, stationarity_residual,
        lambda_residual, feasible.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for trial in range(trials):
        C = int(rng.integers(2, 11))
        gamma = float(rng.uniform(0.05, 5.0))
        q = random_signal(rng, C, gamma)
        fp = fixed_point(q, gamma, C)
        lam_hat, residual = stationarity_residual(fp.p_star, q, gamma)
        rows.append(
            {
                "trial": trial,
                "C": C,
                "gamma": gamma,
                "simplex_residual": abs(float(np.sum(fp.p_star)) - 1.0),
                "stationarity_residual": residual,
                "lambda_residual": abs(fp.lam - lam_hat),
                "feasible": fp.feasible,
            }
        )
    logger.debug("Ran %d fixed-point trials", trials)
    return rows
