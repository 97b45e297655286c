import csv
import os
import tempfile
import unittest

from adaptation import (
    ABLATION_VARIANTS,
    AblationRow,
    AdaptationConfig,
    PretrainConfig,
    RobustnessRow,
    check_ablation_ordering,
    check_noise_robustness,
    load_experiment_config,
    pretrain_source,
    run_ablation_suite,
    run_noise_robustness,
    run_sensitivity_sweep,
    write_rows,
)
from core.errors import ParameterError
from datasets import ShiftSpec, make_gaussian_domains
from metrics import evaluate


def ablation_rows(**accuracies):
    return [AblationRow(variant, seed, acc) for variant, acc in accuracies.items() for seed in (0, 1, 2)]


class TestExperimentRuns(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.source, cls.target = make_gaussian_domains(3, 2, 15, ShiftSpec(rotation=0.4), seed=1, cluster_std=0.15)
        cls.pretrain = PretrainConfig(epochs=3, batch_size=16, hidden_sizes=(6,), feature_dim=4)
        cls.adaptation = AdaptationConfig(epochs=1, batch_size=16, k=3)

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_ablation_rows(self):
        rows = run_ablation_suite(self.source, self.target, self.pretrain, self.adaptation, seeds=[0, 1])
        self.assertEqual(len(rows), 2 * len(ABLATION_VARIANTS))
        self.assertEqual([r.variant for r in rows[:7]], list(ABLATION_VARIANTS))
        self.assertEqual([r.seed for r in rows], [0] * 7 + [1] * 7)
        self.assertTrue(all(0.0 <= r.accuracy <= 1.0 for r in rows))

    def test_ablation_is_reproducible(self):
        a = run_ablation_suite(self.source, self.target, self.pretrain, self.adaptation, seeds=[3])
        b = run_ablation_suite(self.source, self.target, self.pretrain, self.adaptation, seeds=[3])
        self.assertEqual(a, b)

    def test_noise_robustness_rows(self):
        rows = run_noise_robustness(self.source, self.target, self.pretrain, self.adaptation, [0.0, 0.8], seeds=[0])
        self.assertEqual([r.noise_rate for r in rows], [0.0, 0.8])
        theta_s = pretrain_source(self.source, self.pretrain)
        self.assertEqual(rows[0].prior_accuracy, evaluate(theta_s, self.target).accuracy)
        self.assertTrue(all(0.0 <= r.final_accuracy <= 1.0 for r in rows))

    def test_sweep(self):
        rows = run_sensitivity_sweep(self.source, self.target, self.pretrain, self.adaptation, "k", [1, 4], seeds=[0])
        self.assertEqual([(r.parameter, r.value) for r in rows], [("k", 1.0), ("k", 4.0)])
        with self.assertRaises(ParameterError):
            run_sensitivity_sweep(self.source, self.target, self.pretrain, self.adaptation, "lr_base", [0.1], [0])

    def test_write_rows(self):
        rows = [AblationRow("joint", 0, 0.75), AblationRow("soft_only", 0, 0.5)]
        path = write_rows(rows, os.path.join(self.tmp.name, "nested", "ablation.csv"))
        with open(path, newline="", encoding="utf-8") as f:
            lines = list(csv.reader(f))
        self.assertEqual(lines, [["variant", "seed", "accuracy"], ["joint", "0", "0.75"], ["soft_only", "0", "0.5"]])
        with self.assertRaises(ParameterError):
            write_rows([], path)


class TestAcceptance(unittest.TestCase):
    def test_expected_ordering_passes(self):
        rows = ablation_rows(source_only=0.6, soft_only=0.7, div_only=0.4, joint=0.75, joint_wo_both=0.74)
        verdicts = check_ablation_ordering(rows)
        self.assertEqual([v.status for v in verdicts], ["pass", "pass", "pass"])

    def test_broken_ordering_fails(self):
        rows = ablation_rows(source_only=0.6, soft_only=0.8, div_only=0.4, joint=0.62, joint_wo_both=0.7)
        statuses = [v.status for v in check_ablation_ordering(rows)]
        self.assertEqual(statuses, ["fail", "fail", "fail"])

    def test_small_calibration_shortfall_warns(self):
        rows = ablation_rows(source_only=0.6, soft_only=0.7, div_only=0.4, joint=0.75, joint_wo_both=0.753)
        verdict = check_ablation_ordering(rows)[2]
        self.assertEqual(verdict.status, "warn")
        self.assertFalse(verdict.failed)

    def test_medians_over_seeds(self):
        rows = ablation_rows(source_only=0.6, soft_only=0.7, div_only=0.4, joint_wo_both=0.7)
        rows += [AblationRow("joint", 0, 0.1), AblationRow("joint", 1, 0.8), AblationRow("joint", 2, 0.9)]
        self.assertEqual(check_ablation_ordering(rows)[0].status, "pass")

    def test_missing_variant(self):
        with self.assertRaises(ParameterError):
            check_ablation_ordering(ablation_rows(joint=0.7))

    def test_noise_robustness(self):
        rows = [RobustnessRow(0.0, s, 0.7, 0.80) for s in range(3)] + [RobustnessRow(0.8, s, 0.1, 0.78) for s in range(3)]
        self.assertEqual([v.status for v in check_noise_robustness(rows)], ["pass", "pass"])
        rows = [RobustnessRow(0.0, 0, 0.7, 0.80), RobustnessRow(0.8, 0, 0.5, 0.60)]
        self.assertEqual([v.status for v in check_noise_robustness(rows)], ["fail", "fail"])

    def test_noise_robustness_needs_both_rates(self):
        with self.assertRaises(ParameterError):
            check_noise_robustness([RobustnessRow(0.2, 0, 0.5, 0.7)])


class TestBenchmarkAcceptance(unittest.TestCase):
    """The shipped blobs-rot60 config end to end; the slowest test in the suite."""

    CONFIG = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data", "configs", "blobs_rot60.json")

    @classmethod
    def setUpClass(cls):
        cls.config = load_experiment_config(cls.CONFIG)
        cls.source, cls.target = cls.config.dataset.load()

    def test_source_only_band(self):
        for seed in self.config.seeds:
            params = pretrain_source(self.source, self.config.pretrain.model_copy(update={"seed": seed}))
            accuracy = evaluate(params, self.target).accuracy
            self.assertGreaterEqual(accuracy, 0.55)
            self.assertLessEqual(accuracy, 0.85)

    def test_ablation_verdicts_pass(self):
        rows = run_ablation_suite(self.source, self.target, self.config.pretrain, self.config.adaptation, self.config.seeds)
        verdicts = check_ablation_ordering(rows)
        self.assertEqual([v.name for v in verdicts if v.failed], [], "; ".join(v.detail for v in verdicts))

    def test_noise_robustness_verdicts_pass(self):
        rows = run_noise_robustness(
            self.source, self.target, self.config.pretrain, self.config.adaptation, [0.0, 0.8], self.config.seeds
        )
        verdicts = check_noise_robustness(rows)
        self.assertEqual([v.name for v in verdicts if v.failed], [], "; ".join(v.detail for v in verdicts))


if __name__ == "__main__":
    unittest.main()
