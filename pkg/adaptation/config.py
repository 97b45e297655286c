"""
Experiment configuration models.

All models reject unknown keys. A config file is one JSON document matching
ExperimentConfig; every field has a documented default.
"""
import json
import logging
import math
import os
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from core.errors import ConfigError
from datasets.feature_table import load_feature_table
from datasets.synthetic import BLOBS_ROT60_MEANS, ShiftSpec, make_gaussian_domains
from datasets.views import LabeledDataset

logger = logging.getLogger(__name__)

ObjectiveName = Literal["procal", "im", "aad", "soft_only", "div_only"]
FamilyName = Literal["office31", "office-home", "visda", "domainnet"]

# (gamma1, beta1, k, tau) per dataset family, plus VisDA's lower learning rates
FAMILY_PRESETS: Dict[str, Dict[str, Any]] = {
    "office31": {"gamma1": 0.0, "beta1": 1.0, "k": 6, "tau": 2},
    "office-home": {"gamma1": 0.0, "beta1": 0.0, "k": 6, "tau": 1},
    "visda": {"gamma1": 30.0, "beta1": 30.0, "k": 8, "tau": 10, "lr_base": 1e-4, "lr_head": 1e-3},
    "domainnet": {"gamma1": 10.0, "beta1": 5.0, "k": 2, "tau": 2},
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AdaptationConfig(_Strict):
    """
    Hyperparameters of target adaptation.

    gamma and beta at iteration t are gamma_scale * (1 - t/T)^gamma1 and
    beta_scale * (1 - t/T)^beta1 with T = epochs * batches_per_epoch.
    Both soft and diversity terms are normalized by batch size unless
    `summed_diversity` keeps the diversity term as a plain sum.
    """

    family: Optional[FamilyName] = None
    objective: ObjectiveName = "procal"
    gamma1: float = Field(0.0, ge=0)
    beta1: float = Field(1.0, ge=0)
    gamma_scale: float = Field(1.0, ge=0)
    beta_scale: float = Field(1.0, ge=0)
    k: int = Field(6, ge=1)
    tau: int = Field(2, ge=1)
    tau_is_period: bool = False
    lambda2: float = Field(1.0, ge=0)
    background_size: Optional[int] = Field(None, ge=0)
    epochs: int = Field(15, ge=0)
    batch_size: int = Field(64, ge=1)
    lr_base: float = Field(1e-3, gt=0)
    lr_head: float = Field(1e-2, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    lr_power_decay: bool = False
    seed: int = 0
    freeze_head: bool = False
    detach_self_term: bool = False
    use_target_term: bool = True
    use_source_term: bool = True
    summed_diversity: bool = False
    noise_rate: float = Field(0.0, ge=0, le=1)
    eval_interval: Optional[int] = Field(None, ge=1)

    @model_validator(mode="before")
    @classmethod
    def _apply_family(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("family"):
            preset = FAMILY_PRESETS.get(data["family"])
            if preset is not None:
                return {**preset, **data}
        return data

    @classmethod
    def for_family(cls, family: str, **overrides: Any) -> "AdaptationConfig":
        if family not in FAMILY_PRESETS:
            raise ConfigError(f"unknown dataset family '{family}', expected one of {sorted(FAMILY_PRESETS)}")
        return cls(family=family, **overrides)

    def eval_every(self, batches_per_epoch: int) -> int:
        if self.eval_interval is not None:
            return self.eval_interval
        return max(1, math.ceil(batches_per_epoch / 2))


class PretrainConfig(_Strict):
    """Supervised source training and the network architecture."""

    epochs: int = Field(50, ge=0)
    batch_size: int = Field(64, ge=1)
    lr_base: float = Field(0.05, gt=0)
    lr_head: float = Field(0.05, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    label_smoothing: float = Field(0.1, ge=0, lt=1)
    hidden_sizes: Tuple[int, ...] = (32,)
    feature_dim: int = Field(16, ge=1)
    activation: Literal["tanh", "relu", "identity"] = "tanh"
    seed: int = 0


class GeneratorSpec(_Strict):
    """
    Synthetic domain pair. The defaults follow blobs-rot60 except `class_means`,
    which are drawn at random unless given; `blobs_rot60()` is the full benchmark.
    """

    num_classes: int = Field(4, ge=2)
    dim: int = Field(3, ge=2)
    n_per_class: int = Field(150, ge=10)
    rotation_deg: float = 60.0
    translation: List[float] = Field(default_factory=lambda: [0.5, -0.3, 0.0])
    class_scale: float = Field(1.0, gt=0)
    noise_std: float = Field(0.15, ge=0)
    cluster_std: float = Field(0.2, gt=0)
    class_means: Optional[List[List[float]]] = None
    seed: int = 0

    @classmethod
    def blobs_rot60(cls, **overrides: Any) -> "GeneratorSpec":
        return cls(class_means=[list(m) for m in BLOBS_ROT60_MEANS], **overrides)

    def shift(self) -> ShiftSpec:
        return ShiftSpec(
            rotation=math.radians(self.rotation_deg),
            translation=tuple(self.translation),
            class_scale=self.class_scale,
            noise_std=self.noise_std,
        )


class DatasetSpec(_Strict):
    """Either a generator or a pair of feature tables (exactly one)."""

    generator: Optional[GeneratorSpec] = None
    source_table: Optional[str] = None
    target_table: Optional[str] = None

    @model_validator(mode="after")
    def _one_form(self) -> "DatasetSpec":
        tables = (self.source_table is not None, self.target_table is not None)
        if any(tables) and not all(tables):
            raise ValueError("source_table and target_table must be given together")
        if all(tables) and self.generator is not None:
            raise ValueError("give either generator parameters or feature tables, not both")
        if not any(tables) and self.generator is None:
            self.generator = GeneratorSpec.blobs_rot60()
        return self

    def load(self) -> Tuple[LabeledDataset, LabeledDataset]:
        """
        Raises:
            FileNotFoundError: If a feature table is missing.
        """
        if self.generator is not None:
            g = self.generator
            return make_gaussian_domains(
                g.num_classes, g.dim, g.n_per_class, g.shift(), g.seed, g.cluster_std, means=g.class_means
            )
        source = load_feature_table(self.source_table)
        target = load_feature_table(self.target_table)
        if source.num_classes != target.num_classes or source.dim != target.dim:
            raise ConfigError(
                f"feature tables disagree: source C={source.num_classes}, d={source.dim}; "
                f"target C={target.num_classes}, d={target.dim}"
            )
        return source, target


SweepParameter = Literal["gamma1", "beta1", "k", "tau"]


class SweepConfig(_Strict):
    parameter: SweepParameter
    values: List[float]


class ExperimentConfig(_Strict):
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    pretrain: PretrainConfig = Field(default_factory=PretrainConfig)
    adaptation: AdaptationConfig = Field(default_factory=AdaptationConfig)
    output_dir: str = "runs/default"
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2])
    noise_rates: List[float] = Field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6, 0.8])
    sweep: Optional[SweepConfig] = None

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Copy with every seed (generator, pretraining, adaptation, experiment list) set to `seed`."""
        dataset = self.dataset
        if dataset.generator is not None:
            dataset = dataset.model_copy(update={"generator": dataset.generator.model_copy(update={"seed": seed})})
        return self.model_copy(
            update={
                "dataset": dataset,
                "pretrain": self.pretrain.model_copy(update={"seed": seed}),
                "adaptation": self.adaptation.model_copy(update={"seed": seed}),
                "seeds": [seed],
            }
        )


def load_experiment_config(path: str) -> ExperimentConfig:
    """
    Read and validate an experiment config file.

    Raises:
        ConfigError: If the file is missing, is not JSON or fails validation.
    """
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        config = ExperimentConfig.model_validate(data)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}")
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}")
    logger.debug("Loaded config %s", path)
    return config
