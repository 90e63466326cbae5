"""``debiaslab`` command line: one subcommand per pipeline stage, plus ``run`` and ``report``."""
from __future__ import annotations

import functools
import logging
import sys
from pathlib import Path

import click

from . import pipeline
from .clicksim import SCENARIOS
from .config import ExperimentConfig, load_config
from .data import ConfigError
from .models import MODEL_KINDS

EXIT_CONFIG = 1
EXIT_STAGE = 2


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def guarded(fn):
    """Map config problems to exit 1 and anything else that breaks a stage to exit 2."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            _fail(EXIT_CONFIG, f"config: {exc}")
        except pipeline.StageError as exc:
            _fail(EXIT_STAGE, str(exc))
        except (OSError, ValueError, RuntimeError, KeyError) as exc:
            _fail(EXIT_STAGE, f"{fn.__name__.replace('_', '-')}: {exc}")
    return wrapper


def common_options(fn):
    for opt in reversed([
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Config file or run manifest."),
        click.option("--seed", type=click.IntRange(min=0), help="Master seed."),
        click.option("--out", type=click.Path(file_okay=False), help="Output directory."),
    ]):
        fn = opt(fn)
    return fn


def training_options(fn):
    for opt in reversed([
        click.option("--steps", type=click.IntRange(min=0)),
        click.option("--batch-size", type=click.IntRange(min=1)),
        click.option("--alpha", type=float),
    ]):
        fn = opt(fn)
    return fn


def build_config(config_path, **overrides) -> ExperimentConfig:
    return load_config(config_path, overrides)


def out_dir(cfg: ExperimentConfig, out) -> Path:
    path = Path(out if out is not None else cfg.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


@click.group()
@click.option("-v", "--verbose", count=True, help="Log progress (-vv for per-eval detail).")
def main(verbose):
    """Position-bias debiasing lab: simulate clicks, train IIN and baselines, compare AUC."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(message)s")


@main.command("gen-data")
@common_options
@guarded
def gen_data(config_path, seed, out):
    """Write a synthetic LETOR dataset to OUT/dataset.letor."""
    cfg = build_config(config_path, seed=seed)
    cfg.synth_config().validate()
    path = pipeline.gen_data(cfg, out_dir(cfg, out))
    click.echo(path)


@main.command("train-ranker")
@common_options
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@guarded
def train_ranker(config_path, seed, out, data_path):
    """Fit the production ranker on a fraction of DATA; writes OUT/ranker.json."""
    cfg = build_config(config_path, seed=seed)
    path = pipeline.train_ranker(cfg, Path(data_path), out_dir(cfg, out) / "ranker.json", cfg.seed)
    click.echo(path)


@main.command()
@common_options
@click.option("--scenario", type=click.Choice(SCENARIOS, case_sensitive=False))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--ranker", "ranker_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--workers", type=click.IntRange(min=1))
@guarded
def simulate(config_path, seed, out, scenario, data_path, ranker_path, workers):
    """Simulate a click log; writes OUT/clicks_<scenario>.csv."""
    cfg = build_config(config_path, seed=seed, scenario=scenario, workers=workers)
    scen = cfg.scenario[0]
    if len(cfg.scenario) > 1:
        raise ConfigError("scenario: simulate takes a single scenario")
    path = pipeline.simulate_clicks(cfg, scen, Path(data_path), Path(ranker_path),
                                    out_dir(cfg, out) / f"clicks_{scen}.csv", cfg.seed)
    click.echo(path)


@main.command()
@common_options
@training_options
@click.option("--model", type=click.Choice(MODEL_KINDS, case_sensitive=False), required=True)
@click.option("--clicks", "clicks_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--test", "test_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--train-data", "train_path", type=click.Path(exists=True, dir_okay=False),
              help="Training LETOR file; gives the skyline its relevance labels.")
@guarded
def train(config_path, seed, out, steps, batch_size, alpha, model, clicks_path, test_path, train_path):
    """Train one model on a click log, scoring TEST as it goes."""
    cfg = build_config(config_path, seed=seed, steps=steps, batch_size=batch_size, alpha=alpha)
    target = out_dir(cfg, out)
    stem = Path(clicks_path).stem
    result = pipeline.train_model(
        cfg, model, Path(clicks_path), Path(test_path),
        target / f"{stem}_{model}.json", target / f"curve_{stem}_{model}.csv",
        cfg.seed, train_path=Path(train_path) if train_path else None,
    )
    click.echo(f"{model} final AUC {result.final_auc:.6f}")


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False))
@guarded
def evaluate(config_path, checkpoint, data_path):
    """Print the test AUC of a trained checkpoint on a LETOR file."""
    cfg = build_config(config_path) if config_path else None
    click.echo(f"{pipeline.evaluate_checkpoint(Path(checkpoint), pipeline.read_dataset(data_path, cfg)):.6f}")


@main.command()
@common_options
@training_options
@click.option("--scenario", multiple=True, type=click.Choice(SCENARIOS, case_sensitive=False),
              help="Repeatable; defaults to the config's scenario list.")
@click.option("--model", multiple=True, type=click.Choice(MODEL_KINDS, case_sensitive=False),
              help="Repeatable; defaults to the config's model list.")
@click.option("--workers", type=click.IntRange(min=1))
@guarded
def run(config_path, seed, out, steps, batch_size, alpha, scenario, model, workers):
    """Run the whole pipeline and write summary.csv, curves, bias surfaces and manifest.json."""
    cfg = build_config(config_path, seed=seed, out=out, steps=steps, batch_size=batch_size, alpha=alpha,
                       scenario=list(scenario) or None, models=list(model) or None, workers=workers)
    pipeline.run(cfg)
    click.echo((Path(cfg.out) / "summary.csv").read_text(), nl=False)


@main.command()
@click.argument("run_dir", type=click.Path(file_okay=False))
@guarded
def report(run_dir):
    """Merge curve CSVs under RUN_DIR into curves_long.csv and print the summary table."""
    merged, rows = pipeline.report(Path(run_dir))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        click.echo("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    click.echo(f"merged curves: {merged}", err=True)


if __name__ == "__main__":
    main()
