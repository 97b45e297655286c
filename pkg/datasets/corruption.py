import logging
from typing import Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from core.errors import ParameterError
from core.simplex import validate_prob_vector

logger = logging.getLogger(__name__)


def corrupt_source_priors(
    priors: ArrayLike, noise_rate: float, seed: int = 0
) -> Tuple[NDArray[np.float64], NDArray[np.int64]]:
    """
    Replace a random floor(noise_rate * N) subset of priors by one-hot vectors
    on a class other than the prior's argmax.

    Args:
        priors: N x C source predictions.
        noise_rate: Fraction of samples to corrupt, in [0, 1].
        seed: Seed of the subset and class draws.

    Returns:
        (corrupted priors, sorted indices of the corrupted samples).
    """
    if not 0.0 <= noise_rate <= 1.0:
        raise ParameterError(f"noise_rate must lie in [0, 1], got {noise_rate}")
    p = validate_prob_vector(priors, "source priors")
    if p.ndim != 2:
        raise ParameterError(f"priors must be an N x C matrix, got shape {p.shape}")
    N, C = p.shape
    out = p.copy()
    count = int(np.floor(noise_rate * N))
    if count == 0:
        return out, np.zeros(0, dtype=np.int64)

    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(N, size=count, replace=False)).astype(np.int64)
    for i in chosen:
        original = int(np.argmax(p[i]))
        # uniform over the C-1 other classes
        new_class = int(rng.integers(C - 1))
        if new_class >= original:
            new_class += 1
        out[i] = 0.0
        out[i, new_class] = 1.0
    logger.info("Corrupted %d of %d source priors (noise rate %.2f)", count, N, noise_rate)
    return out, chosen
