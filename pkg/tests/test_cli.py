import csv
import json
import os
import tempfile
import unittest
from unittest import mock

from typer.testing import CliRunner

import run
from core.checkpoint import load_params
from core.errors import DivergenceError
from core.model import init_params
from datasets import load_feature_table


def small_config(out_dir: str, **overrides) -> dict:
    config = {
        "dataset": {"generator": {"num_classes": 3, "n_per_class": 15, "rotation_deg": 20.0}},
        "pretrain": {"epochs": 3, "batch_size": 16, "hidden_sizes": [6], "feature_dim": 4},
        "adaptation": {"epochs": 1, "batch_size": 16, "k": 3},
        "output_dir": out_dir,
        "seeds": [0],
        "noise_rates": [0.0, 0.8],
    }
    config.update(overrides)
    return config


class TestCli(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = os.path.join(self.tmp.name, "out")
        self.config = self.write_config(small_config(self.out))
        self.runner = CliRunner()

    def tearDown(self):
        self.tmp.cleanup()

    def write_config(self, data: dict, name: str = "config.json") -> str:
        path = os.path.join(self.tmp.name, name)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f)
        return path

    def invoke(self, *args: str):
        return self.runner.invoke(run.app, ["--log-level", "quiet", *args])

    def read_json(self, name: str) -> dict:
        with open(os.path.join(self.out, name), encoding="utf-8") as f:
            return json.load(f)

    def pretrained(self) -> str:
        self.assertEqual(self.invoke("pretrain", "-c", self.config).exit_code, 0)
        return os.path.join(self.out, "source.json")

    def test_pretrain_adapt_eval(self):
        result = self.invoke("pretrain", "-c", self.config)
        self.assertEqual(result.exit_code, 0, result.output)
        report = self.read_json("source_report.json")
        self.assertEqual(report["source"]["num_samples"], 45)
        self.assertGreater(report["source_loss"], 0.0)
        self.assertEqual(report["checkpoint"], os.path.join(self.out, "source.json"))
        self.assertTrue(os.path.exists(os.path.join(self.out, "run.log.jsonl")))

        result = self.invoke("adapt", "-c", self.config)
        self.assertEqual(result.exit_code, 0, result.output)
        report = self.read_json("adapt_report.json")
        for key in ("source_accuracy", "final_accuracy", "forgetting_rate", "incorrect_supervision_rate"):
            self.assertIn(key, report)
        self.assertNotIn("prior_accuracy", report)
        with open(os.path.join(self.out, "dynamics.csv"), newline="", encoding="utf-8") as f:
            self.assertEqual(next(csv.reader(f))[0], "iteration")

        result = self.invoke("eval", "-c", self.config)
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertEqual(self.read_json("eval_target.json")["accuracy"], report["final_accuracy"])

    def test_noisy_adapt_reports_prior_accuracy(self):
        self.assertEqual(self.invoke("pretrain", "-c", self.config).exit_code, 0)
        noisy = small_config(self.out, adaptation={"epochs": 1, "batch_size": 16, "k": 3, "noise_rate": 0.8})
        result = self.invoke("adapt", "-c", self.write_config(noisy, "noisy.json"))
        self.assertEqual(result.exit_code, 0, result.output)
        report = self.read_json("adapt_report.json")
        self.assertEqual(report["corrupted_priors"], 36)
        self.assertIn("prior_accuracy", report)

    def test_reruns_are_byte_identical(self):
        other = os.path.join(self.tmp.name, "again")
        self.assertEqual(self.invoke("pretrain", "-c", self.config).exit_code, 0)
        self.assertEqual(self.invoke("pretrain", "-c", self.config, "-o", other).exit_code, 0)
        with open(os.path.join(self.out, "source.json"), "rb") as a, open(os.path.join(other, "source.json"), "rb") as b:
            self.assertEqual(a.read(), b.read())

    def test_seed_override(self):
        other = os.path.join(self.tmp.name, "seed4")
        self.assertEqual(self.invoke("pretrain", "-c", self.config).exit_code, 0)
        self.assertEqual(self.invoke("pretrain", "-c", self.config, "--seed", "4", "-o", other).exit_code, 0)
        seeded = load_params(os.path.join(other, "source.json"))
        self.assertFalse(seeded.equals(load_params(os.path.join(self.out, "source.json"))))

    def test_config_errors_exit_2(self):
        result = self.invoke("pretrain", "-c", os.path.join(self.tmp.name, "missing.json"))
        self.assertEqual(result.exit_code, 2)
        bad = self.write_config({"adaptation": {"gama1": 1.0}}, "bad.json")
        self.assertEqual(self.invoke("pretrain", "-c", bad).exit_code, 2)
        self.assertEqual(self.invoke("adapt", "-c", self.config).exit_code, 2)
        self.assertEqual(self.invoke("eval", "-c", self.config, "--domain", "test").exit_code, 2)
        self.assertEqual(self.invoke("sweep", "-c", self.config).exit_code, 2)

    def test_bad_log_level_exits_2(self):
        result = self.runner.invoke(run.app, ["--log-level", "loud", "oracles", "--trials", "1"])
        self.assertEqual(result.exit_code, 2)

    def test_divergence_exits_3_with_last_good(self):
        self.assertEqual(self.invoke("pretrain", "-c", self.config).exit_code, 0)
        last_good = init_params(2, 3, hidden_sizes=(6,), feature_dim=4, seed=1)
        with mock.patch.object(run, "adapt", side_effect=DivergenceError("loss is nan", 4, last_good)):
            result = self.invoke("adapt", "-c", self.config)
        self.assertEqual(result.exit_code, 3)
        self.assertTrue(load_params(os.path.join(self.out, "last_good.json")).equals(last_good))

    def test_gen_data(self):
        result = self.invoke("gen-data", "-c", self.config)
        self.assertEqual(result.exit_code, 0, result.output)
        source = load_feature_table(os.path.join(self.out, "source.csv"))
        target = load_feature_table(os.path.join(self.out, "target.csv"))
        self.assertEqual((source.size, target.size, source.num_classes), (45, 45, 3))

    def test_tables_as_dataset(self):
        self.assertEqual(self.invoke("gen-data", "-c", self.config).exit_code, 0)
        tables = {
            "source_table": os.path.join(self.out, "source.csv"),
            "target_table": os.path.join(self.out, "target.csv"),
        }
        table_out = os.path.join(self.tmp.name, "tables")
        config = self.write_config(small_config(table_out, dataset=tables), "tables.json")
        result = self.invoke("pretrain", "-c", config)
        self.assertEqual(result.exit_code, 0, result.output)
        with open(os.path.join(table_out, "source.json"), "rb") as a, open(self.pretrained(), "rb") as b:
            self.assertEqual(a.read(), b.read())

    def test_export_features(self):
        self.pretrained()
        result = self.invoke("export-features", "-c", self.config, "--bank")
        self.assertEqual(result.exit_code, 0, result.output)
        features = load_feature_table(os.path.join(self.out, "target_features.csv"))
        self.assertEqual((features.size, features.dim), (45, 4))
        with open(os.path.join(self.out, "bank.csv"), newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        self.assertEqual(len(rows), 46)
        self.assertEqual(rows[0][:2], ["sample_id", "neighbor_ids"])

    def test_experiments(self):
        result = self.invoke("ablate", "-c", self.config)
        self.assertEqual(result.exit_code, 0, result.output)
        with open(os.path.join(self.out, "ablation.csv"), newline="", encoding="utf-8") as f:
            self.assertEqual(len(list(csv.reader(f))), 8)
        result = self.invoke("robustness", "-c", self.config)
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertTrue(os.path.exists(os.path.join(self.out, "robustness.csv")))

    def test_sweep(self):
        config = self.write_config(
            small_config(self.out, sweep={"parameter": "tau", "values": [1, 3]}), "sweep.json"
        )
        result = self.invoke("sweep", "-c", config)
        self.assertEqual(result.exit_code, 0, result.output)
        with open(os.path.join(self.out, "sweep.csv"), newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        self.assertEqual([r[1] for r in rows[1:]], ["1.0", "3.0"])

    def test_oracles(self):
        result = self.invoke("oracles", "--trials", "100")
        self.assertEqual(result.exit_code, 0, result.output)

    def test_fixed_point_check(self):
        result = self.invoke("fixed-point-check", "--trials", "200", "--out", self.out)
        self.assertEqual(result.exit_code, 0, result.output)
        with open(os.path.join(self.out, "fixed_point.csv"), newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], run.FIXED_POINT_COLUMNS)
        self.assertEqual(len(rows), 201)


if __name__ == "__main__":
    unittest.main()
