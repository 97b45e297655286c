import csv
import importlib
import json
import os
import tempfile
import unittest
from unittest import mock

import numpy as np
from numpy.testing import assert_array_equal
from pydantic import ValidationError

from adaptation import (
    DYNAMICS_COLUMNS,
    AdaptationConfig,
    DatasetSpec,
    DynamicsLog,
    DynamicsRow,
    ExperimentConfig,
    GeneratorSpec,
    PretrainConfig,
    adapt,
    adapt_baseline,
    decay_schedule,
    load_experiment_config,
    lr_power_decay,
    pretrain_source,
    source_loss,
)

from core.errors import ConfigError, DivergenceError, InsufficientDataError, ParameterError, ShapeError
from core.model import forward_batch, init_params
from datasets import LabeledDataset, ShiftSpec, make_gaussian_domains, write_feature_table
from metrics import evaluate
from objectives import OBJECTIVES

adapt_module = importlib.import_module("adaptation.adapt")

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data", "configs")

SMALL_PRETRAIN = PretrainConfig(epochs=5, batch_size=16, hidden_sizes=(8,), feature_dim=6)


def small_domains():
    return make_gaussian_domains(3, 2, 20, ShiftSpec(rotation=0.3), seed=0, cluster_std=0.15)


class TestAdaptationConfig(unittest.TestCase):
    def test_unknown_keys_rejected(self):
        with self.assertRaises(ValidationError):
            AdaptationConfig(gama1=1.0)
        with self.assertRaises(ValidationError):
            ExperimentConfig.model_validate({"pretrain": {"epoch": 3}})

    def test_ranges(self):
        with self.assertRaises(ValidationError):
            AdaptationConfig(k=0)
        with self.assertRaises(ValidationError):
            AdaptationConfig(momentum=1.0)
        with self.assertRaises(ValidationError):
            AdaptationConfig(noise_rate=1.5)

    def test_family_presets(self):
        visda = AdaptationConfig(family="visda")
        self.assertEqual((visda.gamma1, visda.beta1, visda.k, visda.tau), (30.0, 30.0, 8, 10))
        self.assertEqual((visda.lr_base, visda.lr_head), (1e-4, 1e-3))
        self.assertEqual(AdaptationConfig(family="visda", k=3).k, 3)
        home = AdaptationConfig.for_family("office-home", epochs=1)
        self.assertEqual((home.gamma1, home.beta1, home.k, home.tau, home.epochs), (0.0, 0.0, 6, 1, 1))

    def test_unknown_family(self):
        with self.assertRaises(ConfigError):
            AdaptationConfig.for_family("mnist")
        with self.assertRaises(ValidationError):
            AdaptationConfig(family="mnist")

    def test_eval_every(self):
        self.assertEqual(AdaptationConfig().eval_every(9), 5)
        self.assertEqual(AdaptationConfig().eval_every(1), 1)
        self.assertEqual(AdaptationConfig(eval_interval=3).eval_every(9), 3)


class TestExperimentConfig(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, text: str) -> str:
        path = os.path.join(self.tmp.name, "config.json")
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
        return path

    def test_dataset_forms(self):
        self.assertIsNotNone(DatasetSpec().generator)
        with self.assertRaises(ValidationError):
            DatasetSpec(source_table="a.csv")
        with self.assertRaises(ValidationError):
            DatasetSpec.model_validate({"generator": {}, "source_table": "a.csv", "target_table": "b.csv"})

    def test_with_seed(self):
        config = ExperimentConfig().with_seed(7)
        self.assertEqual(config.dataset.generator.seed, 7)
        self.assertEqual((config.pretrain.seed, config.adaptation.seed, config.seeds), (7, 7, [7]))
        self.assertEqual(ExperimentConfig().adaptation.seed, 0)

    def test_shipped_configs_load(self):
        config = load_experiment_config(os.path.join(CONFIG_DIR, "blobs_rot60.json"))
        self.assertEqual(config.adaptation.k, 5)
        self.assertEqual(config.dataset.generator.n_per_class, 150)
        self.assertEqual(config.dataset.generator, GeneratorSpec.blobs_rot60())
        self.assertEqual(DatasetSpec().generator, GeneratorSpec.blobs_rot60())
        sweep = load_experiment_config(os.path.join(CONFIG_DIR, "blobs_rot60_sweep_tau.json"))
        self.assertEqual(sweep.sweep.parameter, "tau")
        self.assertEqual(sweep.sweep.values, [1, 2, 5, 10])

    def test_load_errors(self):
        with self.assertRaises(ConfigError):
            load_experiment_config(os.path.join(self.tmp.name, "missing.json"))
        with self.assertRaises(ConfigError):
            load_experiment_config(self.write("{not json"))
        with self.assertRaises(ConfigError):
            load_experiment_config(self.write(json.dumps({"adaptation": {"gama1": 1.0}})))

    def test_feature_tables_must_agree(self):
        source, _ = small_domains()
        other, _ = make_gaussian_domains(2, 2, 10, ShiftSpec())
        a = write_feature_table(source, os.path.join(self.tmp.name, "a.csv"))
        b = write_feature_table(other, os.path.join(self.tmp.name, "b.csv"))
        with self.assertRaises(ConfigError):
            DatasetSpec(source_table=a, target_table=b).load()


class TestSchedules(unittest.TestCase):
    def test_decay_values(self):
        for exponent in (0, 1, 5, 10, 30):
            values = [decay_schedule(t, 100, exponent) for t in range(101)]
            self.assertEqual(values[0], 1.0)
            self.assertTrue(all(b <= a for a, b in zip(values, values[1:])))
            self.assertEqual(values[-1], 1.0 if exponent == 0 else 0.0)
        self.assertEqual(decay_schedule(50, 100, 1), 0.5)
        self.assertEqual(decay_schedule(50, 100, 5), 0.5 ** 5)

    def test_decay_errors(self):
        with self.assertRaises(ParameterError):
            decay_schedule(11, 10, 1.0)
        with self.assertRaises(ParameterError):
            decay_schedule(0, 10, -1.0)

    def test_lr_power_decay(self):
        self.assertEqual(lr_power_decay(0, 10), 1.0)
        self.assertAlmostEqual(lr_power_decay(10, 10), 11 ** -0.75, places=15)
        self.assertEqual(lr_power_decay(3, 0), 1.0)


class TestPretrain(unittest.TestCase):
    def test_separable_blobs(self):
        rng = np.random.default_rng(0)
        labels = np.repeat([0, 1], 50)
        inputs = np.where(labels[:, None] == 0, [-1.0, 0.0], [1.0, 0.0]) + 0.1 * rng.normal(size=(100, 2))
        source = LabeledDataset(inputs, labels, 2, domain="source")
        params = pretrain_source(source, PretrainConfig(epochs=50))
        self.assertGreaterEqual(evaluate(params, source).accuracy, 0.95)

    def test_deterministic(self):
        source, _ = small_domains()
        self.assertTrue(pretrain_source(source, SMALL_PRETRAIN).equals(pretrain_source(source, SMALL_PRETRAIN)))

    def test_loss_decreases(self):
        source, _ = small_domains()
        untrained = pretrain_source(source, SMALL_PRETRAIN.model_copy(update={"epochs": 0}))
        trained = pretrain_source(source, SMALL_PRETRAIN.model_copy(update={"epochs": 30}))
        self.assertLess(source_loss(trained, source), source_loss(untrained, source))

    def test_zero_epochs_is_initialization(self):
        source, _ = small_domains()
        params = pretrain_source(source, SMALL_PRETRAIN.model_copy(update={"epochs": 0}))
        expected = init_params(2, 3, hidden_sizes=(8,), feature_dim=6, seed=0)
        self.assertTrue(params.equals(expected))

    def test_missing_class(self):
        source = LabeledDataset(np.zeros((6, 2)), [0, 0, 0, 1, 1, 1], 3)
        with self.assertRaises(InsufficientDataError):
            pretrain_source(source, SMALL_PRETRAIN)


class TestAdapt(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.source, cls.target = small_domains()
        cls.theta_s = pretrain_source(cls.source, SMALL_PRETRAIN)

    def setUp(self):
        # N=60, batch 16 -> 4 batches per epoch, 8 iterations, a row every 2
        self.config = AdaptationConfig(epochs=2, batch_size=16, k=3, tau=1, gamma1=2.0, beta1=1.0)
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_zero_epochs_keeps_source_model(self):
        run = adapt(self.theta_s, self.target, self.config.model_copy(update={"epochs": 0}))
        self.assertTrue(run.params.equals(self.theta_s))
        self.assertEqual(len(run.log), 0)
        self.assertEqual(evaluate(run.params, self.target).accuracy, evaluate(self.theta_s, self.target).accuracy)

    def test_source_model_untouched(self):
        before = self.theta_s.copy()
        adapt(self.theta_s, self.target, self.config)
        self.assertTrue(self.theta_s.equals(before))

    def test_dynamics_rows(self):
        for name in OBJECTIVES:
            with self.subTest(objective=name):
                config = self.config.model_copy(update={"objective": name, "gamma_scale": 0.5, "beta_scale": 3.0})
                run = adapt(self.theta_s, self.target, config)
                self.assertEqual(run.log.column("iteration"), [1, 3, 5, 7])
                self.assertEqual(run.log.column("epoch"), [0, 0, 1, 1])
                for row in run.log.rows:
                    self.assertEqual(row.gamma_value, 0.5 * decay_schedule(row.iteration, 8, 2.0))
                    self.assertEqual(row.beta_value, 3.0 * decay_schedule(row.iteration, 8, 1.0))
                    self.assertTrue(0.0 <= row.target_accuracy <= 1.0)
                    self.assertTrue(np.isfinite(row.loss_total))

    def test_dynamics_csv(self):
        run = adapt(self.theta_s, self.target, self.config)
        path = run.log.to_csv(os.path.join(self.tmp.name, "dynamics.csv"))
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], DYNAMICS_COLUMNS)
        self.assertEqual(len(rows), 5)
        self.assertEqual(float(rows[-1][2]), run.log.rows[-1].target_accuracy)

    def test_deterministic(self):
        a = adapt(self.theta_s, self.target, self.config)
        b = adapt(self.theta_s, self.target, self.config)
        self.assertTrue(a.params.equals(b.params))
        self.assertEqual(a.log.column("loss_total"), b.log.column("loss_total"))

    def test_unlabeled_target_logs_no_metrics(self):
        run = adapt(self.theta_s, self.target.without_labels(), self.config)
        self.assertEqual(len(run.log), 4)
        self.assertIsNone(run.log.rows[0].target_accuracy)
        self.assertEqual(run.log.rows[0].values()[2], "")
        labeled = adapt(self.theta_s, self.target, self.config)
        self.assertTrue(run.params.equals(labeled.params))

    def test_priors_frozen_from_source_model(self):
        run = adapt(self.theta_s, self.target, self.config)
        _, _, p, _ = forward_batch(self.theta_s, self.target.inputs)
        assert_array_equal(run.bank.source_priors, p)
        assert_array_equal(run.priors, p)
        self.assertEqual(run.corrupted.size, 0)

    def test_noisy_priors(self):
        run = adapt(self.theta_s, self.target, self.config.model_copy(update={"noise_rate": 0.5}))
        _, _, p, _ = forward_batch(self.theta_s, self.target.inputs)
        self.assertEqual(run.corrupted.size, 30)
        changed = np.argmax(run.priors, axis=1) != np.argmax(p, axis=1)
        assert_array_equal(np.flatnonzero(changed), run.corrupted)

    def test_freeze_head(self):
        run = adapt(self.theta_s, self.target, self.config.model_copy(update={"freeze_head": True}))
        head = self.theta_s.head_layers()[0]
        assert_array_equal(run.params.layers[head].weight, self.theta_s.layers[head].weight)
        self.assertFalse(np.array_equal(run.params.layers[0].weight, self.theta_s.layers[0].weight))

    def test_every_objective_runs(self):
        for name in ("procal", "im", "aad", "soft_only", "div_only"):
            run = adapt(self.theta_s, self.target, self.config.model_copy(update={"objective": name}))
            self.assertEqual(len(run.log), 4, name)
            self.assertTrue(all(np.all(np.isfinite(a)) for a in run.params.arrays()), name)

    def test_baseline_entry_point(self):
        with self.assertRaises(ParameterError):
            adapt_baseline(self.theta_s, self.target, self.config)
        run = adapt_baseline(self.theta_s, self.target, self.config.model_copy(update={"objective": "aad"}))
        self.assertEqual(len(run.log), 4)

    def test_target_must_match_model(self):
        other = LabeledDataset(np.zeros((10, 3)), np.arange(10) % 3, 3)
        with self.assertRaises(ShapeError):
            adapt(self.theta_s, other, self.config)

    def test_divergence_carries_last_good(self):
        original = adapt_module.backward
        calls = []

        def poisoned(params, inputs, dlogits, cache=None):
            grads = original(params, inputs, dlogits, cache)
            calls.append(1)
            if len(calls) == 3:
                grads.weights[0][0, 0] = np.nan
            return grads

        with mock.patch.object(adapt_module, "backward", poisoned):
            with self.assertRaises(DivergenceError) as ctx:
                adapt(self.theta_s, self.target, self.config)
        self.assertEqual(ctx.exception.iteration, 2)
        last_good = ctx.exception.last_good
        self.assertTrue(all(np.all(np.isfinite(a)) for a in last_good.arrays()))
        self.assertFalse(last_good.equals(self.theta_s))


class TestDynamicsLog(unittest.TestCase):
    def test_iterations_increase(self):
        log = DynamicsLog()
        log.append(DynamicsRow(3, 0, 1.0, 1.0, 0.0, 1.0, 1.0))
        with self.assertRaises(ParameterError):
            log.append(DynamicsRow(3, 0, 1.0, 1.0, 0.0, 1.0, 1.0))


if __name__ == "__main__":
    unittest.main()
