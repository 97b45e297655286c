"""
Numerical primitives on the probability simplex and on feature vectors.

All functions accept a single vector (1-D) or a batch of row vectors (2-D)
and work in float64 throughout.
"""
import numpy as np
from numpy.typing import ArrayLike, NDArray

from core.errors import DegenerateFeatureError, InvalidInputError

ProbVector = NDArray[np.float64]
ScoreVector = NDArray[np.float64]
FeatureVector = NDArray[np.float64]

SIMPLEX_TOL = 1e-9
NORM_EPS = 1e-12


def as_float_array(values: ArrayLike, name: str = "input") -> NDArray[np.float64]:
    """Convert to a float64 array and reject NaN/Inf."""
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def validate_prob_vector(p: ArrayLike, name: str = "probability vector") -> ProbVector:
    """
    Check the ProbVector invariants row-wise and return the array.

    Args:
        p: One vector or a batch of vectors (rows).
        name: Used in error messages.

    Raises:
        InvalidInputError: On negative entries or a row sum off by more than 1e-9.
    """
    arr = as_float_array(p, name)
    if arr.ndim not in (1, 2) or arr.shape[-1] == 0:
        raise InvalidInputError(f"{name} must be a non-empty vector or matrix, got shape {arr.shape}")
    if np.any(arr < 0.0):
        raise InvalidInputError(f"{name} has negative entries")
    sums = arr.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > SIMPLEX_TOL):
        raise InvalidInputError(f"{name} does not sum to 1 (max deviation {np.max(np.abs(sums - 1.0)):.3e})")
    return arr


def softmax(logits: ArrayLike) -> ProbVector:
    """
    Max-subtracted softmax over the last axis.

    Raises:
        InvalidInputError: If any logit is non-finite.
    """
    z = as_float_array(logits, "logits")
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def l2_normalize(v: ArrayLike) -> FeatureVector:
    """
    Scale each vector (row) to unit Euclidean norm.

    Raises:
        DegenerateFeatureError: If any vector has norm <= 1e-12.
    """
    arr = as_float_array(v, "feature vector")
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    if np.any(norms <= NORM_EPS):
        raise DegenerateFeatureError("cannot normalize a (near-)zero feature vector")
    return arr / norms


def cosine_similarity(a: ArrayLike, b: ArrayLike) -> float:
    """Cosine of the angle between two feature vectors, clipped to [-1, 1]."""
    ua = l2_normalize(a)
    ub = l2_normalize(b)
    if ua.shape != ub.shape or ua.ndim != 1:
        raise InvalidInputError(f"cosine_similarity expects two vectors of equal length, got {ua.shape} and {ub.shape}")
    return float(np.clip(np.dot(ua, ub), -1.0, 1.0))


def xlogx(p: NDArray[np.float64]) -> NDArray[np.float64]:
    """Elementwise p*log(p) with 0*log(0) := 0."""
    out = np.zeros_like(p)
    mask = p > 0.0
    out[mask] = p[mask] * np.log(p[mask])
    return out


def entropy(p: ArrayLike) -> float:
    """Shannon entropy (nats) of one probability vector."""
    arr = validate_prob_vector(p)
    if arr.ndim != 1:
        raise InvalidInputError(f"entropy expects a single vector, got shape {arr.shape}")
    return float(-np.sum(xlogx(arr)))
