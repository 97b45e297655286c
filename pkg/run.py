"""
Command-line entry point.

Every subcommand reads an optional experiment config (blobs-rot60 defaults
when omitted), writes its artifacts into the output directory and follows one
exit-code contract: 0 ok, 1 oracle or acceptance failure, 2 configuration
error, 3 numerical divergence.
"""
import json
import logging
import os
from contextlib import contextmanager
from typing import Annotated, Iterator, List, Optional

import typer
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from adaptation import (
    ExperimentConfig,
    Verdict,
    adapt,
    check_ablation_ordering,
    check_noise_robustness,
    load_experiment_config,
    pretrain_source,
    run_ablation_suite,
    run_noise_robustness,
    run_sensitivity_sweep,
    source_loss,
    write_rows,
)
from adaptation.acceptance import HIGH_NOISE
from adaptation.adapt import build_bank
from core.checkpoint import Checkpoint, load_params
from core.errors import (
    ConfigError,
    DivergenceError,
    FeatureTableParseError,
    InsufficientDataError,
    ParameterError,
    ShapeError,
)
from core.logging_setup import attach_json_log, configure_logging
from core.model import ModelParams, forward_batch
from datasets import LabeledDataset, write_feature_table
from memory import BankDump
from metrics import TargetMonitor, evaluate
from theory.fixed_point import run_fixed_point_trials
from theory.oracles import SIMPLEX_TOL, STATIONARITY_TOL, OracleResult, run_all_oracles

logger = logging.getLogger("procal")

EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3

CONFIG_ERRORS = (
    ConfigError,
    FileNotFoundError,
    FeatureTableParseError,
    InsufficientDataError,
    ParameterError,
    ShapeError,
    ValidationError,
)

FIXED_POINT_COLUMNS = ["trial", "C", "gamma", "simplex_residual", "stationarity_residual", "feasible"]

app = typer.Typer(
    help="Source-free domain adaptation with calibrated neighborhood supervision.",
    add_completion=False,
    no_args_is_help=True,
)
console = Console()

ConfigOpt = Annotated[Optional[str], typer.Option("--config", "-c", help="Experiment config JSON.")]
CheckpointOpt = Annotated[Optional[str], typer.Option("--checkpoint", help="Model checkpoint JSON.")]
OutOpt = Annotated[Optional[str], typer.Option("--out", "-o", help="Output directory (default: config output_dir).")]
SeedOpt = Annotated[Optional[int], typer.Option("--seed", help="Override every seed in the config.")]
StrictOpt = Annotated[bool, typer.Option("--strict", help="Exit 1 when an acceptance check fails.")]


class Session:
    """Resolved config and output directory of one command."""

    def __init__(self):
        self.config: Optional[ExperimentConfig] = None
        self.out_dir: Optional[str] = None
        self._handler: Optional[logging.Handler] = None

    def open(self, config_path: Optional[str], seed: Optional[int], out: Optional[str]) -> ExperimentConfig:
        config = load_experiment_config(config_path) if config_path else ExperimentConfig()
        if seed is not None:
            config = config.with_seed(seed)
        self.config = config
        self.out_dir = out or config.output_dir
        self._handler = attach_json_log(self.out_dir)
        logger.info("Output directory: %s", self.out_dir)
        return config

    def path(self, filename: str) -> str:
        return os.path.join(self.out_dir, filename)

    def close(self) -> None:
        if self._handler is not None:
            logging.getLogger().removeHandler(self._handler)
            self._handler.close()
            self._handler = None


@contextmanager
def session() -> Iterator[Session]:
    """Map library errors onto exit codes; a divergence leaves last_good.json behind."""
    s = Session()
    try:
        yield s
    except DivergenceError as e:
        logger.error("Diverged: %s", e)
        if e.last_good is not None and s.out_dir is not None:
            path = Checkpoint("last_good", e.last_good).save(s.out_dir)
            typer.echo(f"Last finite parameters written to {path}", err=True)
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(EXIT_DIVERGENCE)
    except CONFIG_ERRORS as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(EXIT_CONFIG)
    finally:
        s.close()


def write_json(data: dict, path: str) -> str:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)
        f.write("\n")
    return path


def load_checkpoint(s: Session, checkpoint: Optional[str], default: str) -> ModelParams:
    """An explicit --checkpoint path, else the named checkpoint in the output directory."""
    if checkpoint:
        return load_params(checkpoint)
    return Checkpoint.load(default, s.out_dir).params


def print_verdicts(verdicts: List[Verdict]) -> None:
    table = Table(title="Acceptance")
    table.add_column("check")
    table.add_column("status")
    table.add_column("detail")
    colors = {"pass": "green", "warn": "yellow", "fail": "red"}
    for v in verdicts:
        table.add_row(v.name, f"[{colors[v.status]}]{v.status}[/]", v.detail)
    console.print(table)


def finish_verdicts(verdicts: List[Verdict], strict: bool) -> None:
    print_verdicts(verdicts)
    if strict and any(v.failed for v in verdicts):
        raise typer.Exit(EXIT_FAILURE)


@app.callback()
def main(
    log_level: Annotated[
        Optional[str], typer.Option("--log-level", help="quiet, info or debug (default: $PROCAL_LOG or info).")
    ] = None,
):
    try:
        configure_logging(log_level)
    except ConfigError as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(EXIT_CONFIG)


@app.command()
def pretrain(config: ConfigOpt = None, seed: SeedOpt = None, out: OutOpt = None):
    """Train the source model; writes source.json and source_report.json."""
    with session() as s:
        cfg = s.open(config, seed, out)
        source, target = cfg.dataset.load()
        params = pretrain_source(source, cfg.pretrain)
        checkpoint = Checkpoint("source", params).save(s.out_dir)
        report = evaluate(params, source)
        write_json(
            {
                "checkpoint": checkpoint,
                "source": report.to_dict(),
                "source_loss": source_loss(params, source, cfg.pretrain.label_smoothing),
                "target": evaluate(params, target).to_dict(),
            },
            s.path("source_report.json"),
        )
        typer.echo(f"Source accuracy {report.accuracy:.4f}; checkpoint {checkpoint}")


@app.command("adapt")
def adapt_command(config: ConfigOpt = None, checkpoint: CheckpointOpt = None, seed: SeedOpt = None, out: OutOpt = None):
    """Adapt a source checkpoint to the target set; writes adapted.json, dynamics.csv and adapt_report.json."""
    with session() as s:
        cfg = s.open(config, seed, out)
        theta_s = load_checkpoint(s, checkpoint, "source")
        _, target = cfg.dataset.load()
        monitor = TargetMonitor(target, theta_s)
        run = adapt(theta_s, target, cfg.adaptation, monitor)

        adapted = Checkpoint("adapted", run.params).save(s.out_dir)
        run.log.to_csv(s.path("dynamics.csv"))
        final = evaluate(run.params, target)
        reading = run.log.rows[-1].reading if run.log.rows else monitor.observe(run.params, run.bank, 0.0)
        report = {
            "objective": cfg.adaptation.objective,
            "checkpoint": adapted,
            "source_accuracy": monitor.source_accuracy,
            "final_accuracy": final.accuracy,
            "mean_per_class_accuracy": final.mean_per_class_accuracy,
            "forgetting_rate": reading.forgetting_rate,
            "incorrect_supervision_rate": reading.incorrect_supervision_rate,
            "partial_incorrect_rate": reading.partial_incorrect_rate,
            "calibrated_incorrect_rate": reading.calibrated_incorrect_rate,
            "confusion": final.confusion,
        }
        if cfg.adaptation.noise_rate > 0:
            report["noise_rate"] = cfg.adaptation.noise_rate
            report["prior_accuracy"] = monitor.prior_accuracy(run.priors)
            report["corrupted_priors"] = int(run.corrupted.size)
        write_json(report, s.path("adapt_report.json"))
        typer.echo(f"Target accuracy {monitor.source_accuracy:.4f} -> {final.accuracy:.4f}")


@app.command("eval")
def eval_command(
    config: ConfigOpt = None,
    checkpoint: CheckpointOpt = None,
    seed: SeedOpt = None,
    out: OutOpt = None,
    domain: Annotated[str, typer.Option("--domain", help="source or target.")] = "target",
):
    """Evaluate a checkpoint; writes eval_<domain>.json."""
    with session() as s:
        if domain not in ("source", "target"):
            raise ConfigError(f"--domain must be source or target, got '{domain}'")
        cfg = s.open(config, seed, out)
        params = load_checkpoint(s, checkpoint, "adapted")
        source, target = cfg.dataset.load()
        report = evaluate(params, source if domain == "source" else target)
        write_json(report.to_dict(), s.path(f"eval_{domain}.json"))
        typer.echo(f"{domain} accuracy {report.accuracy:.4f} over {report.num_samples} samples")


@app.command()
def ablate(config: ConfigOpt = None, seed: SeedOpt = None, out: OutOpt = None, strict: StrictOpt = False):
    """Component ablation over the configured seeds; writes ablation.csv."""
    with session() as s:
        cfg = s.open(config, seed, out)
        source, target = cfg.dataset.load()
        rows = run_ablation_suite(source, target, cfg.pretrain, cfg.adaptation, cfg.seeds)
        path = write_rows(rows, s.path("ablation.csv"))
        typer.echo(f"{len(rows)} ablation rows written to {path}")
        verdicts = check_ablation_ordering(rows)
    finish_verdicts(verdicts, strict)


@app.command()
def robustness(config: ConfigOpt = None, seed: SeedOpt = None, out: OutOpt = None, strict: StrictOpt = False):
    """ProCal under corrupted source priors for every configured noise rate; writes robustness.csv."""
    with session() as s:
        cfg = s.open(config, seed, out)
        source, target = cfg.dataset.load()
        rows = run_noise_robustness(source, target, cfg.pretrain, cfg.adaptation, cfg.noise_rates, cfg.seeds)
        path = write_rows(rows, s.path("robustness.csv"))
        typer.echo(f"{len(rows)} robustness rows written to {path}")
        rates = set(cfg.noise_rates)
        verdicts = check_noise_robustness(rows) if {0.0, HIGH_NOISE} <= rates else []
    if verdicts:
        finish_verdicts(verdicts, strict)
    else:
        logger.warning("Noise rates %s lack 0.0 or %s; robustness checks skipped", cfg.noise_rates, HIGH_NOISE)


@app.command()
def sweep(config: ConfigOpt = None, seed: SeedOpt = None, out: OutOpt = None):
    """Sensitivity of one hyperparameter (config `sweep` section); writes sweep.csv."""
    with session() as s:
        cfg = s.open(config, seed, out)
        if cfg.sweep is None:
            raise ConfigError("config has no 'sweep' section")
        source, target = cfg.dataset.load()
        rows = run_sensitivity_sweep(
            source, target, cfg.pretrain, cfg.adaptation, cfg.sweep.parameter, cfg.sweep.values, cfg.seeds
        )
        path = write_rows(rows, s.path("sweep.csv"))
        typer.echo(f"{len(rows)} sweep rows written to {path}")


def print_oracles(results: List[OracleResult]) -> None:
    table = Table(title="Oracles")
    for column in ("suite", "trials", "worst", "tolerance", "seconds", "status"):
        table.add_column(column)
    for r in results:
        status = "[green]pass[/]" if r.passed else "[red]FAIL[/]"
        table.add_row(r.name, str(r.trials), f"{r.worst:.3e}", f"{r.tolerance:.1e}", f"{r.seconds:.2f}", status)
    console.print(table)


@app.command()
def oracles(
    trials: Annotated[int, typer.Option("--trials", min=1, help="Fixed-point draws; other suites scale with it.")] = 10000,
    seed: Annotated[int, typer.Option("--seed")] = 0,
):
    """Gradient, closed-form gradient, fixed-point and k-NN oracles; exit 1 on any failure."""
    results = run_all_oracles(trials, seed)
    print_oracles(results)
    if not all(r.passed for r in results):
        raise typer.Exit(EXIT_FAILURE)


@app.command("fixed-point-check")
def fixed_point_check(
    trials: Annotated[int, typer.Option("--trials", min=1)] = 10000,
    seed: Annotated[int, typer.Option("--seed")] = 0,
    out: OutOpt = None,
):
    """Closed-form fixed point on random signals; writes fixed_point.csv."""
    with session() as s:
        s.open(None, None, out)
        rows = run_fixed_point_trials(trials, seed)
        path = s.path("fixed_point.csv")
        with open(path, "w", encoding="utf-8") as f:
            f.write(",".join(FIXED_POINT_COLUMNS) + "\n")
            for row in rows:
                cells = [repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in FIXED_POINT_COLUMNS]
                f.write(",".join(cells) + "\n")
    infeasible = sum(1 for r in rows if not r["feasible"])
    worst_simplex = max(r["simplex_residual"] for r in rows)
    worst_stationarity = max(r["stationarity_residual"] for r in rows)
    typer.echo(
        f"{trials} trials written to {path}; simplex {worst_simplex:.3e}, "
        f"stationarity {worst_stationarity:.3e}, {infeasible} with negative entries"
    )
    if worst_simplex > SIMPLEX_TOL or worst_stationarity > STATIONARITY_TOL:
        raise typer.Exit(EXIT_FAILURE)


@app.command("gen-data")
def gen_data(config: ConfigOpt = None, seed: SeedOpt = None, out: OutOpt = None):
    """Write the configured source and target sets as feature tables."""
    with session() as s:
        cfg = s.open(config, seed, out)
        source, target = cfg.dataset.load()
        write_feature_table(source, s.path("source.csv"))
        write_feature_table(target, s.path("target.csv"))
        typer.echo(f"Wrote {source.size} source and {target.size} target rows to {s.out_dir}")


@app.command("export-features")
def export_features(
    config: ConfigOpt = None,
    checkpoint: CheckpointOpt = None,
    seed: SeedOpt = None,
    out: OutOpt = None,
    bank: Annotated[bool, typer.Option("--bank", help="Also dump the initial memory bank.")] = False,
):
    """Target features of a checkpoint as a feature table (target_features.csv)."""
    with session() as s:
        cfg = s.open(config, seed, out)
        params = load_checkpoint(s, checkpoint, "source")
        _, target = cfg.dataset.load()
        z, _, _, _ = forward_batch(params, target.inputs)
        features = LabeledDataset(z, target.labels, target.num_classes, domain="target-features", seed=target.seed)
        path = write_feature_table(features, s.path("target_features.csv"))
        typer.echo(f"Features (h={features.dim}) written to {path}")
        if bank:
            memory, _ = build_bank(params, target.without_labels(), cfg.adaptation)
            typer.echo(f"Bank dump written to {BankDump(s.out_dir).save(memory, 'bank')}")


if __name__ == "__main__":
    app()
