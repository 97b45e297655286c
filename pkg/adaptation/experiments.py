"""
Multi-run experiments: component ablation, source-prior noise robustness and
hyperparameter sensitivity. Each returns plain rows that `write_rows` turns into CSV.
"""
import csv
import logging
import os
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence

from tqdm import tqdm

from adaptation.adapt import adapt
from adaptation.config import AdaptationConfig, PretrainConfig
from adaptation.pretrain import pretrain_source
from core.errors import ParameterError
from core.logging_setup import is_quiet
from core.model import ModelParams
from datasets.views import LabeledDataset
from metrics.diagnostics import TargetMonitor
from metrics.evaluation import evaluate

logger = logging.getLogger(__name__)

# None marks the unadapted source model
ABLATION_VARIANTS: Dict[str, Optional[Dict[str, Any]]] = {
    "source_only": None,
    "soft_only": {"objective": "soft_only"},
    "div_only": {"objective": "div_only"},
    "joint": {"objective": "procal"},
    "joint_wo_target": {"objective": "procal", "use_target_term": False},
    "joint_wo_source": {"objective": "procal", "use_source_term": False},
    "joint_wo_both": {"objective": "procal", "use_target_term": False, "use_source_term": False},
}

INTEGER_PARAMETERS = ("k", "tau")


@dataclass
class AblationRow:
    variant: str
    seed: int
    accuracy: float


@dataclass
class RobustnessRow:
    noise_rate: float
    seed: int
    prior_accuracy: float
    final_accuracy: float


@dataclass
class SweepRow:
    parameter: str
    value: float
    seed: int
    accuracy: float


class SourceModels:
    """Pretrains once per seed and reuses the result across variants."""

    def __init__(self, source: LabeledDataset, config: PretrainConfig):
        self.source = source
        self.config = config
        self._models: Dict[int, ModelParams] = {}

    def get(self, seed: int) -> ModelParams:
        if seed not in self._models:
            self._models[seed] = pretrain_source(self.source, self.config.model_copy(update={"seed": seed}))
        return self._models[seed]


def _progress(total: int, desc: str) -> tqdm:
    return tqdm(total=total, desc=desc, disable=is_quiet())


def run_ablation_suite(
    source: LabeledDataset,
    target: LabeledDataset,
    pretrain: PretrainConfig,
    adaptation: AdaptationConfig,
    seeds: Sequence[int],
) -> List[AblationRow]:
    """Final target accuracy of every ablation variant for every seed (variant-major per seed)."""
    models = SourceModels(source, pretrain)
    rows = []
    with _progress(len(seeds) * len(ABLATION_VARIANTS), "ablation") as bar:
        for seed in seeds:
            theta_s = models.get(seed)
            for variant, overrides in ABLATION_VARIANTS.items():
                if overrides is None:
                    accuracy = evaluate(theta_s, target).accuracy
                else:
                    config = adaptation.model_copy(update={**overrides, "seed": seed})
                    accuracy = evaluate(adapt(theta_s, target, config).params, target).accuracy
                rows.append(AblationRow(variant, seed, accuracy))
                logger.info("ablation %s seed %d: accuracy %.4f", variant, seed, accuracy)
                bar.update(1)
    return rows


def run_noise_robustness(
    source: LabeledDataset,
    target: LabeledDataset,
    pretrain: PretrainConfig,
    adaptation: AdaptationConfig,
    noise_rates: Sequence[float],
    seeds: Sequence[int],
) -> List[RobustnessRow]:
    """Accuracy of the corrupted priors and of the adapted model per noise rate and seed."""
    models = SourceModels(source, pretrain)
    rows = []
    with _progress(len(seeds) * len(noise_rates), "robustness") as bar:
        for seed in seeds:
            theta_s = models.get(seed)
            monitor = TargetMonitor(target, theta_s)
            for rate in noise_rates:
                config = adaptation.model_copy(update={"noise_rate": float(rate), "seed": seed})
                run = adapt(theta_s, target, config, monitor)
                row = RobustnessRow(
                    float(rate), seed, monitor.prior_accuracy(run.priors), evaluate(run.params, target).accuracy
                )
                rows.append(row)
                logger.info(
                    "noise %.2f seed %d: prior accuracy %.4f, final accuracy %.4f",
                    rate, seed, row.prior_accuracy, row.final_accuracy,
                )
                bar.update(1)
    return rows


def run_sensitivity_sweep(
    source: LabeledDataset,
    target: LabeledDataset,
    pretrain: PretrainConfig,
    adaptation: AdaptationConfig,
    parameter: str,
    values: Sequence[float],
    seeds: Sequence[int],
) -> List[SweepRow]:
    """
    Final accuracy as one of gamma1, beta1, k or tau varies.

    Raises:
        ParameterError: For any other parameter name.
    """
    if parameter not in ("gamma1", "beta1", "k", "tau"):
        raise ParameterError(f"cannot sweep '{parameter}'; expected gamma1, beta1, k or tau")
    models = SourceModels(source, pretrain)
    rows = []
    with _progress(len(seeds) * len(values), f"sweep {parameter}") as bar:
        for seed in seeds:
            theta_s = models.get(seed)
            for value in values:
                cast = int(value) if parameter in INTEGER_PARAMETERS else float(value)
                config = AdaptationConfig.model_validate(
                    {**adaptation.model_dump(), parameter: cast, "seed": seed}
                )
                accuracy = evaluate(adapt(theta_s, target, config).params, target).accuracy
                rows.append(SweepRow(parameter, float(value), seed, accuracy))
                bar.update(1)
    return rows


def write_rows(rows: Sequence[Any], path: str) -> str:
    """Write dataclass rows as CSV, header from the field names, floats in shortest round-trip form."""
    if not rows:
        raise ParameterError("no rows to write")
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    records = [asdict(r) for r in rows]
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(list(records[0]))
        for record in records:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in record.values()])
    logger.info("Wrote %d rows to %s", len(rows), path)
    return path
