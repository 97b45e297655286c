from typing import Any, Callable, Dict

from core.errors import ConfigError
from objectives.base import BaseObjective, BatchContext, BatchLoss, ObjectiveResult
from objectives.baselines import AaDObjective, IMObjective, aad_loss, im_loss, sample_background_sets
from objectives.procal import (
    CalibratedTarget,
    ProCalObjective,
    calibrate,
    diversity_loss,
    procal_loss,
    soft_loss,
)
from objectives.supervised import cross_entropy, cross_entropy_batch, smoothed_targets


def _procal(config: Any, **overrides: Any) -> ProCalObjective:
    options = dict(
        detach_self_term=config.detach_self_term,
        use_target_term=config.use_target_term,
        use_source_term=config.use_source_term,
        summed_diversity=config.summed_diversity,
    )
    options.update(overrides)
    return ProCalObjective(**options)


def _aad(config: Any) -> AaDObjective:
    size = config.background_size if config.background_size is not None else config.k
    return AaDObjective(lambda2=config.lambda2, background_size=size)


OBJECTIVES: Dict[str, Callable[[Any], BaseObjective]] = {
    "procal": lambda c: _procal(c),
    "soft_only": lambda c: _procal(c, include_div=False, name="soft_only"),
    "div_only": lambda c: _procal(c, include_soft=False, name="div_only"),
    "im": lambda c: IMObjective(),
    "aad": _aad,
}


def build_objective(config: Any) -> BaseObjective:
    """
    Instantiate the objective named by `config.objective`.

    Raises:
        ConfigError: For an unknown objective name.
    """
    if config.objective not in OBJECTIVES:
        raise ConfigError(f"unknown objective '{config.objective}', expected one of {sorted(OBJECTIVES)}")
    return OBJECTIVES[config.objective](config)


__all__ = [
    "OBJECTIVES",
    "AaDObjective",
    "BaseObjective",
    "BatchContext",
    "BatchLoss",
    "CalibratedTarget",
    "IMObjective",
    "ObjectiveResult",
    "ProCalObjective",
    "aad_loss",
    "build_objective",
    "calibrate",
    "cross_entropy",
    "cross_entropy_batch",
    "diversity_loss",
    "im_loss",
    "procal_loss",
    "sample_background_sets",
    "smoothed_targets",
    "soft_loss",
]
