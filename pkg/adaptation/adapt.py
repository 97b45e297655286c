"""
Target adaptation driver.

One loop serves every objective: the memory bank is built from the source
model, refreshed on the tau schedule and updated with in-batch predictions;
gamma and beta follow the iteration-adaptive decay. The loop only ever sees
an UnlabeledView; labels stay inside the TargetMonitor.
"""
import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
from numpy.typing import NDArray

from adaptation.config import AdaptationConfig
from adaptation.schedules import decay_schedule, lr_power_decay
from core.errors import DivergenceError, InvalidInputError, ParameterError, ShapeError
from core.model import ModelParams, OptimizerState, backward, forward_batch, sgd_step
from datasets.corruption import corrupt_source_priors
from datasets.views import LabeledDataset, UnlabeledView
from memory.bank import MemoryBank, RefreshPolicy
from metrics.diagnostics import MonitorReading, TargetMonitor
from objectives import BatchContext, build_objective

logger = logging.getLogger(__name__)

DYNAMICS_COLUMNS = [
    "iteration",
    "epoch",
    "target_accuracy",
    "forgetting_rate",
    "incorrect_supervision_rate",
    "loss_total",
    "loss_soft",
    "loss_div",
    "gamma_value",
    "beta_value",
]

BASELINE_OBJECTIVES = ("im", "aad", "soft_only", "div_only")


@dataclass
class DynamicsRow:
    """
    One evaluation point. `iteration` is the 0-based index of the last update
    before evaluation; losses are averaged over the updates since the previous row.
    """

    iteration: int
    epoch: int
    loss_total: float
    loss_soft: float
    loss_div: float
    gamma_value: float
    beta_value: float
    reading: Optional[MonitorReading] = None

    def _metric(self, name: str) -> Optional[float]:
        return None if self.reading is None else getattr(self.reading, name)

    @property
    def target_accuracy(self) -> Optional[float]:
        return self._metric("accuracy")

    @property
    def forgetting_rate(self) -> Optional[float]:
        return self._metric("forgetting_rate")

    @property
    def incorrect_supervision_rate(self) -> Optional[float]:
        return self._metric("incorrect_supervision_rate")

    def values(self) -> List[object]:
        cells: List[object] = [self.iteration, self.epoch]
        for name in DYNAMICS_COLUMNS[2:]:
            value = getattr(self, name)
            cells.append("" if value is None else repr(float(value)))
        return cells


@dataclass
class DynamicsLog:
    rows: List[DynamicsRow] = field(default_factory=list)

    def append(self, row: DynamicsRow) -> None:
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ParameterError(f"dynamics rows must have increasing iterations, got {row.iteration}")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> List[float]:
        return [getattr(row, name) for row in self.rows]

    def to_csv(self, path: str) -> str:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(DYNAMICS_COLUMNS)
            for row in self.rows:
                writer.writerow(row.values())
        return path


class _Average:
    def __init__(self):
        self.total = self.soft = self.div = 0.0
        self.count = 0

    def update(self, total: float, soft: float, div: float) -> None:
        self.total += total
        self.soft += soft
        self.div += div
        self.count += 1

    def means(self):
        c = max(self.count, 1)
        return self.total / c, self.soft / c, self.div / c


@dataclass
class AdaptationRun:
    """
    Result of one adaptation.

    Attributes:
        params: Adapted parameters theta_t.
        log: Training dynamics.
        bank: Final memory bank.
        priors: Source priors the bank was frozen with (after corruption).
        corrupted: Indices of corrupted priors.
    """

    params: ModelParams
    log: DynamicsLog
    bank: MemoryBank
    priors: NDArray[np.float64]
    corrupted: NDArray[np.int64]


def build_bank(
    theta_s: ModelParams, view: UnlabeledView, config: AdaptationConfig
) -> Tuple[MemoryBank, NDArray[np.int64]]:
    """Source features and predictions on the target set, priors optionally corrupted, then frozen."""
    z, _, p, _ = forward_batch(theta_s, view.inputs)
    priors, corrupted = p, np.zeros(0, dtype=np.int64)
    if config.noise_rate > 0:
        priors, corrupted = corrupt_source_priors(p, config.noise_rate, config.seed)
    return MemoryBank.initialize(priors, z, config.k), corrupted


def _run(
    theta_s: ModelParams,
    view: UnlabeledView,
    config: AdaptationConfig,
    monitor: Optional[TargetMonitor],
) -> AdaptationRun:
    if view.dim != theta_s.input_dim or view.num_classes != theta_s.C:
        raise ShapeError(
            f"target (d={view.dim}, C={view.num_classes}) does not match the model (d={theta_s.input_dim}, C={theta_s.C})"
        )
    if view.size < 2:
        raise ParameterError(f"adaptation needs at least 2 target samples, got {view.size}")

    params = theta_s.copy()
    bank, corrupted = build_bank(theta_s, view, config)
    priors = bank.source_priors.copy()
    objective = build_objective(config)

    n = view.size
    batches = math.ceil(n / config.batch_size)
    max_iter = config.epochs * batches
    policy = RefreshPolicy.from_tau(config.tau, batches, config.tau_is_period)
    eval_every = config.eval_every(batches)
    frozen = params.head_layers() if config.freeze_head else ()
    state = OptimizerState.create(params, config.lr_base, config.lr_head, config.momentum, frozen_layers=frozen)
    rng = np.random.default_rng(config.seed)
    log = DynamicsLog()
    average = _Average()
    logger.info(
        "Adapting with %s: N=%d, %d epochs x %d batches, refresh every %d, k=%d",
        objective.name, n, config.epochs, batches, policy.period, bank.k,
    )

    iteration = 0
    last_good = params.copy()
    for epoch in range(config.epochs):
        objective.prepare_epoch(epoch, config.seed)
        order = rng.permutation(n)
        for b in range(batches):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            gamma = config.gamma_scale * decay_schedule(iteration, max_iter, config.gamma1)
            beta = config.beta_scale * decay_schedule(iteration, max_iter, config.beta1)
            try:
                if policy.should_refresh(iteration):
                    bank.refresh(params, view.inputs, iteration)
                x = view.inputs[idx]
                _, _, p, cache = forward_batch(params, x)
                result = objective.evaluate(p, BatchContext(idx, bank, gamma, beta))
                loss = result.loss
                if not math.isfinite(loss.total):
                    raise DivergenceError(f"non-finite loss at iteration {iteration}")
                last_good = params.copy()
                lr_scale = lr_power_decay(iteration, max_iter) if config.lr_power_decay else 1.0
                sgd_step(params, backward(params, x, result.logit_grads, cache), state, lr_scale)
                bank.update_probs(idx, p)
            except (DivergenceError, InvalidInputError) as e:
                raise DivergenceError(f"adaptation diverged at iteration {iteration}: {e}", iteration, last_good)
            average.update(loss.total, loss.soft_term, loss.div_term)

            if (iteration + 1) % eval_every == 0 or iteration == max_iter - 1:
                try:
                    reading = monitor.observe(params, bank, gamma) if monitor is not None else None
                except InvalidInputError as e:
                    raise DivergenceError(f"adaptation diverged at iteration {iteration}: {e}", iteration, last_good)
                total, soft, div = average.means()
                log.append(DynamicsRow(iteration, epoch, total, soft, div, gamma, beta, reading))
                average = _Average()
                if reading is not None:
                    logger.debug(
                        "iter %d: acc %.4f, forgetting %.4f, all-wrong %.4f, any-wrong %.4f, calibrated-wrong %.4f",
                        iteration, reading.accuracy, reading.forgetting_rate, reading.incorrect_supervision_rate,
                        reading.partial_incorrect_rate, reading.calibrated_incorrect_rate,
                    )
            iteration += 1

    return AdaptationRun(params=params, log=log, bank=bank, priors=priors, corrupted=corrupted)


def adapt(
    theta_s: ModelParams,
    target: Union[LabeledDataset, UnlabeledView],
    config: AdaptationConfig,
    monitor: Optional[TargetMonitor] = None,
) -> AdaptationRun:
    """
    Adapt the source model to the target set.

    A LabeledDataset is split here: its labels go to a TargetMonitor and the
    optimization loop receives only the label-free view.

    Raises:
        ShapeError: If the target does not match the model.
        DivergenceError: On a non-finite loss or gradient.
    """
    if isinstance(target, LabeledDataset):
        if monitor is None:
            monitor = TargetMonitor(target, theta_s)
        target = target.without_labels()
    return _run(theta_s, target, config, monitor)


def adapt_baseline(
    theta_s: ModelParams,
    target: Union[LabeledDataset, UnlabeledView],
    config: AdaptationConfig,
    monitor: Optional[TargetMonitor] = None,
) -> AdaptationRun:
    """adapt() restricted to the baseline and single-loss objectives."""
    if config.objective not in BASELINE_OBJECTIVES:
        raise ParameterError(f"baseline objective must be one of {BASELINE_OBJECTIVES}, got '{config.objective}'")
    return adapt(theta_s, target, config, monitor)
