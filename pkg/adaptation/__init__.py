from adaptation.acceptance import Verdict, check_ablation_ordering, check_noise_robustness
from adaptation.adapt import (
    DYNAMICS_COLUMNS,
    AdaptationRun,
    DynamicsLog,
    DynamicsRow,
    adapt,
    adapt_baseline,
)
from adaptation.config import (
    FAMILY_PRESETS,
    AdaptationConfig,
    DatasetSpec,
    ExperimentConfig,
    GeneratorSpec,
    PretrainConfig,
    SweepConfig,
    load_experiment_config,
)
from adaptation.experiments import (
    ABLATION_VARIANTS,
    AblationRow,
    RobustnessRow,
    SweepRow,
    run_ablation_suite,
    run_noise_robustness,
    run_sensitivity_sweep,
    write_rows,
)
from adaptation.pretrain import pretrain_source, source_loss
from adaptation.schedules import decay_schedule, lr_power_decay
