"""Experiment stages. Each stage reads and writes files so it can run on its own.

Run directory layout::

    manifest.json  summary.csv
    rep0/data/{train,test}.letor   rep0/ranker.json
    rep0/clicks/<scenario>.csv     rep0/models/<scenario>_<model>.json
    rep0/curves/curve_<scenario>_<model>.csv
    rep0/bias_surface_<scenario>.csv
"""
from __future__ import annotations

import csv
import json
import logging
import platform
import statistics
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import numpy as np

from .clicksim import SCENARIOS, ClickLog, make_scenario, simulate
from .config import ExperimentConfig
from .data import (
    ConfigError,
    Dataset,
    MinMaxScaler,
    binarize_relevance,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .evaluation import EvalPoint, TrainResult, auc, train_and_eval
from .models import IINModel, bias_input, bias_surface, load_model
from .ranker import Ranker, train_production_ranker

log = logging.getLogger(__name__)

SUMMARY_HEADER = ["method", *SCENARIOS]


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def dataset_meta_path(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".meta.json")


def write_dataset(dataset: Dataset, path: Path) -> Path:
    save_dataset(dataset, path)
    dataset_meta_path(path).write_text(json.dumps(
        {"feature_dim": dataset.feature_dim, "title_feature_index": dataset.title_feature_index}))
    return path


def read_dataset(path: str | Path, cfg: ExperimentConfig | None = None) -> Dataset:
    """Load a LETOR file, taking its width from a sidecar written by this tool or from the config."""
    path = Path(path)
    meta_path = dataset_meta_path(path)
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        return load_dataset(path, meta["feature_dim"], meta["title_feature_index"])
    if cfg is None or cfg.feature_dim is None:
        raise ConfigError(f"feature_dim: needed to read {path}")
    return load_dataset(path, cfg.feature_dim, cfg.title_feature_index)


def gen_data(cfg: ExperimentConfig, out: Path, seed: int | None = None) -> Path:
    dataset = generate_synthetic(cfg.synth_config(), cfg.seed if seed is None else seed)
    return write_dataset(dataset, out / "dataset.letor")


def prepare_data(cfg: ExperimentConfig, out: Path, seed: int) -> tuple[Path, Path]:
    """Produce train/test LETOR files: generated and split, or loaded from ``data_path``."""
    if cfg.data_path is None:
        full = generate_synthetic(cfg.synth_config(), seed)
    else:
        full = load_dataset(cfg.data_path, cfg.feature_dim, cfg.title_feature_index)
    if cfg.test_path is not None:
        train, test = full, load_dataset(cfg.test_path, cfg.feature_dim, cfg.title_feature_index)
    else:
        train, test = full.split(cfg.test_fraction, seed)
    return write_dataset(train, out / "train.letor"), write_dataset(test, out / "test.letor")


def train_ranker(cfg: ExperimentConfig, train_path: Path, out: Path, seed: int) -> Path:
    ranker = train_production_ranker(read_dataset(train_path, cfg), cfg.ranker_fraction,
                                     cfg.ranker_config(), seed=seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    ranker.save(out)
    return out


def simulate_clicks(cfg: ExperimentConfig, scenario_id: str, train_path: Path, ranker_path: Path,
                    out: Path, seed: int) -> Path:
    train = read_dataset(train_path, cfg)
    if scenario_id == "s5" and train.title_feature_index is None:
        raise ConfigError("title_feature_index: scenario s5 needs a title-length feature")
    scenario = make_scenario(scenario_id, train.feature_dim, train.title_feature_index, seed)
    click_log = simulate(train, Ranker.load(ranker_path), scenario, cfg.sim_config(seed))
    log.info("%s: %d records, click rate %.4f", scenario_id, len(click_log), click_log.click.mean())
    click_log.to_csv(out)
    return out


def write_curve(curve: list[EvalPoint], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "auc"])
        for p in curve:
            w.writerow([p.step, repr(p.auc)])


def read_curve(path: Path) -> list[EvalPoint]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"step", "auc"}:
        raise ValueError(f"{path}: expected a non-empty step,auc CSV")
    return [EvalPoint(int(r["step"]), float(r["auc"])) for r in rows]


def save_trained(result: TrainResult, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    result.model.save(path, scaler=result.scaler.to_dict(), bias_scaler=result.bias_scaler.to_dict())


def train_model(cfg: ExperimentConfig, kind: str, clicks_path: Path, test_path: Path,
                model_path: Path, curve_path: Path, seed: int, train_path: Path | None = None) -> TrainResult:
    click_log = ClickLog.from_csv(clicks_path)
    test = read_dataset(test_path, cfg)
    train = read_dataset(train_path, cfg) if train_path is not None else None
    result = train_and_eval(kind, click_log, test, cfg.schedule(seed), train_set=train)
    save_trained(result, model_path)
    write_curve(result.curve, curve_path)
    return result


def evaluate_checkpoint(model_path: Path, dataset: Dataset) -> float:
    model, meta = load_model(model_path)
    scaler = MinMaxScaler.from_dict(meta["scaler"])
    _, X, grades = dataset.stacked()
    return auc(model.score(scaler.transform(X)), binarize_relevance(grades).astype(int))


def write_bias_surface(result: TrainResult, test: Dataset, scenario_id: str, path: Path) -> None:
    """P(y=1|r, pos, b) over positions 1..cap; for s5, at title-length quantiles of the test set."""
    model = result.model
    assert isinstance(model, IINModel)
    positions = range(1, model.pos_dim + 1)
    if model.bias_dim > model.pos_dim:
        _, X, _ = test.stacked()
        raw_b = np.quantile(X[:, test.title_feature_index], [0.1, 0.3, 0.5, 0.7, 0.9])
    else:
        raw_b = None
    rows = []
    for pos in positions:
        for b in (raw_b if raw_b is not None else [None]):
            scaled = result.bias_scaler.transform(bias_input([pos], None if b is None else [b], model.pos_dim))
            t = model.transition(scaled)[0]
            rows.append((pos, "" if b is None else repr(float(b)), repr(float(t[0, 0])), repr(float(t[0, 1]))))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pos", "b", "p_click_relevant", "p_click_irrelevant"])
        w.writerows(rows)


def format_summary(table: dict[str, dict[str, float]], methods: list[str]) -> list[list[str]]:
    rows = [SUMMARY_HEADER]
    for m in methods:
        rows.append([m] + [f"{table[m][s]:.6f}" if s in table.get(m, {}) else "" for s in SCENARIOS])
    return rows


def write_summary(table: dict[str, dict[str, float]], methods: list[str], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(format_summary(table, methods))


def versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy", "pandas", "debiaslab"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


@dataclass
class Manifest:
    path: Path
    cfg: ExperimentConfig

    def write(self, status: str, stages: list[str], failed_stage: str | None = None, error: str | None = None):
        payload = {
            "status": status,
            "seed": self.cfg.seed,
            "config": self.cfg.to_dict(),
            "versions": versions(),
            "stages_completed": stages,
        }
        if failed_stage:
            payload["failed_stage"] = failed_stage
            payload["error"] = error
        self.path.write_text(json.dumps(payload, indent=2))


def repeat_seed(cfg: ExperimentConfig, rep: int) -> int:
    return cfg.seed + rep


def run(cfg: ExperimentConfig, out: Path | None = None) -> dict[str, dict[str, float]]:
    """Full pipeline for every repeat; returns ``{method: {scenario: median final AUC}}``."""
    cfg.validate()
    out = Path(out if out is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out / "manifest.json", cfg)
    done: list[str] = []
    manifest.write("incomplete", done)
    finals: dict[str, dict[str, list[float]]] = {m: {} for m in cfg.models}

    def stage(name, fn, *args, **kwargs):
        try:
            result = fn(*args, **kwargs)
        except ConfigError:
            manifest.write("incomplete", done, name, "config error")
            raise
        except Exception as exc:
            manifest.write("incomplete", done, name, str(exc))
            raise StageError(name, exc) from exc
        done.append(name)
        return result

    for rep in range(cfg.repeats):
        seed = repeat_seed(cfg, rep)
        rdir = out / f"rep{rep}"
        train_path, test_path = stage(f"rep{rep}/data", prepare_data, cfg, rdir / "data", seed)
        ranker_path = stage(f"rep{rep}/ranker", train_ranker, cfg, train_path, rdir / "ranker.json", seed)
        test = read_dataset(test_path, cfg)
        for scen in cfg.scenario:
            clicks = stage(f"rep{rep}/simulate/{scen}", simulate_clicks, cfg, scen, train_path, ranker_path,
                           rdir / "clicks" / f"{scen}.csv", seed)
            for kind in cfg.models:
                result = stage(
                    f"rep{rep}/train/{scen}/{kind}", train_model, cfg, kind, clicks, test_path,
                    rdir / "models" / f"{scen}_{kind}.json", rdir / "curves" / f"curve_{scen}_{kind}.csv",
                    seed, train_path=train_path if kind == "skyline" else None,
                )
                finals[kind].setdefault(scen, []).append(result.final_auc)
                if kind == "iin":
                    stage(f"rep{rep}/bias_surface/{scen}", write_bias_surface, result, test, scen,
                          rdir / f"bias_surface_{scen}.csv")

    table = {m: {s: statistics.median(v) for s, v in per.items()} for m, per in finals.items()}
    write_summary(table, cfg.models, out / "summary.csv")
    done.append("summary")
    manifest.write("complete", done)
    return table


def collect_curves(run_dir: Path) -> list[dict]:
    """Every curve CSV under ``run_dir`` as long-format rows; raises listing bad files."""
    paths = sorted(run_dir.glob("**/curves/curve_*.csv"))
    if not paths:
        raise FileNotFoundError(
            f"no curve files in {run_dir}; expected rep*/curves/curve_<scenario>_<model>.csv"
        )
    rows, bad = [], []
    for path in paths:
        scen, _, method = path.stem[len("curve_"):].partition("_")
        rep = path.parent.parent.name
        try:
            curve = read_curve(path)
        except (ValueError, KeyError, OSError) as exc:
            bad.append(f"{path}: {exc}")
            continue
        rows.extend({"repeat": rep, "scenario": scen, "method": method, "step": p.step, "auc": p.auc}
                    for p in curve)
    if bad:
        raise ValueError("corrupt curve files:\n  " + "\n  ".join(bad))
    return rows


def report(run_dir: Path) -> tuple[Path, list[list[str]]]:
    """Merge curves into ``curves_long.csv`` and rebuild the method-by-scenario summary from final points."""
    run_dir = Path(run_dir)
    rows = collect_curves(run_dir)
    merged = run_dir / "curves_long.csv"
    with open(merged, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["repeat", "scenario", "method", "step", "auc"])
        w.writeheader()
        for r in rows:
            w.writerow({**r, "auc": repr(r["auc"])})
    finals: dict[str, dict[str, dict[str, EvalPoint]]] = {}
    for r in rows:
        slot = finals.setdefault(r["method"], {}).setdefault(r["scenario"], {})
        if r["repeat"] not in slot or r["step"] > slot[r["repeat"]].step:
            slot[r["repeat"]] = EvalPoint(r["step"], r["auc"])
    table = {m: {s: statistics.median(p.auc for p in reps.values()) for s, reps in per.items()}
             for m, per in finals.items()}
    methods = [m for m in ("skyline", "pal", "mmoe", "iin") if m in table]
    return merged, format_summary(table, methods)
