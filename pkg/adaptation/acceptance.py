"""
Directional acceptance checks over experiment rows.

Accuracies are fractions in [0, 1]; thresholds are in accuracy points (0.05 = 5 points).
"""
import logging
from dataclasses import dataclass
from statistics import median
from typing import Dict, List, Sequence

from adaptation.experiments import AblationRow, RobustnessRow
from core.errors import ParameterError

logger = logging.getLogger(__name__)

SOURCE_GAIN = 0.05
CALIBRATION_SLACK = 0.005
NOISE_DRIFT = 0.05
PRIOR_COLLAPSE = 0.3
HIGH_NOISE = 0.8


@dataclass
class Verdict:
    """
    Outcome of one check. `status` is "pass", "warn" or "fail"; only "fail" fails a run.
    """

    name: str
    status: str
    detail: str

    @property
    def failed(self) -> bool:
        return self.status == "fail"


def _medians(rows: Sequence[AblationRow]) -> Dict[str, float]:
    by_variant: Dict[str, List[float]] = {}
    for row in rows:
        by_variant.setdefault(row.variant, []).append(row.accuracy)
    return {variant: median(values) for variant, values in by_variant.items()}


def _require(medians: Dict[str, float], names: Sequence[str]) -> None:
    missing = [n for n in names if n not in medians]
    if missing:
        raise ParameterError(f"missing rows for {missing}")


def check_ablation_ordering(rows: Sequence[AblationRow]) -> List[Verdict]:
    """
    joint > soft_only > div_only, joint >= source_only + 5 points, and
    joint >= joint_wo_both (a shortfall up to 0.5 points only warns).
    """
    m = _medians(rows)
    _require(m, ["source_only", "soft_only", "div_only", "joint", "joint_wo_both"])
    verdicts = []

    ordered = m["joint"] > m["soft_only"] > m["div_only"]
    verdicts.append(
        Verdict(
            "joint > soft_only > div_only",
            "pass" if ordered else "fail",
            f"{m['joint']:.4f} / {m['soft_only']:.4f} / {m['div_only']:.4f}",
        )
    )
    gain = m["joint"] - m["source_only"]
    verdicts.append(
        Verdict("joint beats source_only by 5 points", "pass" if gain >= SOURCE_GAIN else "fail", f"gain {gain:+.4f}")
    )
    gap = m["joint"] - m["joint_wo_both"]
    status = "pass" if gap >= 0 else ("warn" if gap >= -CALIBRATION_SLACK else "fail")
    verdicts.append(Verdict("joint >= joint_wo_both", status, f"gap {gap:+.4f}"))
    _log(verdicts)
    return verdicts


def check_noise_robustness(rows: Sequence[RobustnessRow], high_noise: float = HIGH_NOISE) -> List[Verdict]:
    """
    Median final accuracy at the high noise rate within 5 points of the clean run,
    while the corrupted priors fall below 0.3x their clean accuracy.
    """
    final: Dict[float, List[float]] = {}
    prior: Dict[float, List[float]] = {}
    for row in rows:
        final.setdefault(row.noise_rate, []).append(row.final_accuracy)
        prior.setdefault(row.noise_rate, []).append(row.prior_accuracy)
    if 0.0 not in final or high_noise not in final:
        raise ParameterError(f"robustness rows must include noise rates 0.0 and {high_noise}")

    drift = abs(median(final[high_noise]) - median(final[0.0]))
    clean_prior, noisy_prior = median(prior[0.0]), median(prior[high_noise])
    verdicts = [
        Verdict(
            f"accuracy at noise {high_noise} within 5 points of clean",
            "pass" if drift <= NOISE_DRIFT else "fail",
            f"drift {drift:.4f}",
        ),
        Verdict(
            f"prior accuracy at noise {high_noise} below 0.3x clean",
            "pass" if noisy_prior < PRIOR_COLLAPSE * clean_prior else "fail",
            f"{noisy_prior:.4f} vs {clean_prior:.4f}",
        ),
    ]
    _log(verdicts)
    return verdicts


def _log(verdicts: Sequence[Verdict]) -> None:
    for v in verdicts:
        level = {"pass": logging.INFO, "warn": logging.WARNING, "fail": logging.ERROR}[v.status]
        logger.log(level, "%s: %s (%s)", v.name, v.status, v.detail)
