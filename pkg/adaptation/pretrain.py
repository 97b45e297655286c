import logging
import math

import numpy as np

from adaptation.config import PretrainConfig
from core.errors import DivergenceError, InvalidInputError
from core.model import ModelParams, OptimizerState, backward, forward_batch, init_params, sgd_step
from datasets.views import LabeledDataset
from objectives.supervised import cross_entropy_batch

logger = logging.getLogger(__name__)


def source_loss(params: ModelParams, source: LabeledDataset, smoothing: float = 0.0) -> float:
    """Mean label-smoothed cross-entropy over the whole source set."""
    _, _, p, _ = forward_batch(params, source.inputs)
    return cross_entropy_batch(p, source.labels, smoothing)[0]


def pretrain_source(source: LabeledDataset, config: PretrainConfig) -> ModelParams:
    """
    Supervised training of the source model theta_s.

    Mini-batches are drawn from a per-epoch shuffle seeded by `config.seed`;
    the same config always yields bit-identical parameters.

    Raises:
        InsufficientDataError: If the source set misses a class or has fewer than 2C samples.
        DivergenceError: On a non-finite loss or gradient; carries the last finite parameters.
    """
    source.check_coverage()
    params = init_params(
        source.dim,
        source.num_classes,
        hidden_sizes=config.hidden_sizes,
        feature_dim=config.feature_dim,
        activation=config.activation,
        seed=config.seed,
    )
    state = OptimizerState.create(params, config.lr_base, config.lr_head, config.momentum)
    rng = np.random.default_rng(config.seed)
    n = source.size
    batches = math.ceil(n / config.batch_size)
    logger.info("Pretraining on %s: %d epochs, %d batches per epoch", source.domain or "source", config.epochs, batches)

    iteration = 0
    last_good = params.copy()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for b in range(batches):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            x = source.inputs[idx]
            try:
                _, _, p, cache = forward_batch(params, x)
                loss, logit_grads = cross_entropy_batch(p, source.labels[idx], config.label_smoothing)
                if not math.isfinite(loss):
                    raise DivergenceError(f"non-finite source loss at iteration {iteration}")
                last_good = params.copy()
                sgd_step(params, backward(params, x, logit_grads, cache), state)
            except (DivergenceError, InvalidInputError) as e:
                raise DivergenceError(f"pretraining diverged at iteration {iteration}: {e}", iteration, last_good)
            epoch_loss += loss * idx.size
            iteration += 1
        logger.debug("Pretrain epoch %d: loss %.6f", epoch, epoch_loss / n)
    return params
