from core.errors import ParameterError

POWER_DECAY_GAMMA = 10.0
POWER_DECAY_POWER = 0.75


def decay_schedule(iteration: int, max_iter: int, exponent: float) -> float:
    """
    (1 - iteration / max_iter) ** exponent, with 0 ** 0 taken as 1.

    Raises:
        ParameterError: If iteration is outside 0..max_iter or exponent < 0.
    """
    if exponent < 0:
        raise ParameterError(f"decay exponent must be non-negative, got {exponent}")
    if max_iter < 0 or not 0 <= iteration <= max_iter:
        raise ParameterError(f"iteration must lie in 0..{max_iter}, got {iteration}")
    if exponent == 0:
        return 1.0
    if max_iter == 0:
        return 1.0
    return (1.0 - iteration / max_iter) ** exponent


def lr_power_decay(iteration: int, max_iter: int) -> float:
    """Learning-rate multiplier (1 + 10 * iteration / max_iter) ** -0.75."""
    if max_iter <= 0:
        return 1.0
    return (1.0 + POWER_DECAY_GAMMA * iteration / max_iter) ** (-POWER_DECAY_POWER)
