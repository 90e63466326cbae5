"""Flat ``key = value`` experiment configuration.

A config file is a list of ``key = value`` lines (``#`` starts a comment).
A run manifest (JSON with a ``config`` object) is accepted anywhere a config
file is, so a finished run can be replayed from its manifest.
"""
from __future__ import annotations

import configparser
import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .clicksim import SCENARIOS, SimConfig
from .data import ConfigError, SynthConfig
from .evaluation import Schedule
from .models import MODEL_KINDS
from .ranker import RankerTrainConfig

_SECTION = "experiment"


@dataclass
class ExperimentConfig:
    # data: either a LETOR file or synthetic parameters
    data_path: str | None = None
    test_path: str | None = None
    queries: int | None = None
    docs_per_query: int | None = None
    feature_dim: int | None = None
    relevant_fraction: float = 0.2
    title_feature_index: int | None = None
    noise: float = 0.5
    query_spread: float = 0.5
    test_fraction: float = 0.2
    # production ranker
    ranker_fraction: float = 0.01
    ranker_steps: int = 300
    ranker_hidden: int = 32
    ranker_lr: float = 1e-2
    # click simulation
    scenario: list[str] = field(default_factory=lambda: ["s1"])
    k: int = 15
    click_budget: int | None = None
    iterations: int | None = None
    debug_latents: bool = False
    position_cap: int = 10
    workers: int = 1
    # training
    models: list[str] = field(default_factory=lambda: ["iin", "pal", "mmoe"])
    steps: int = 70_000
    batch_size: int = 256
    lr: float = 1e-3
    alpha: float = 100.0
    eval_every: int = 1000
    optimizer: str = "adam"
    repeats: int = 1
    # run
    out: str = "runs/default"
    seed: int = 0

    def validate(self) -> None:
        for s in self.scenario:
            if s not in SCENARIOS:
                raise ConfigError(f"scenario: unknown scenario {s!r}; expected one of {', '.join(SCENARIOS)}")
        if not self.scenario:
            raise ConfigError("scenario: at least one scenario is required")
        for m in self.models:
            if m not in MODEL_KINDS:
                raise ConfigError(f"models: unknown model {m!r}; expected one of {', '.join(MODEL_KINDS)}")
        if not self.models:
            raise ConfigError("models: at least one model is required")
        if self.steps < 0:
            raise ConfigError("steps: must be non-negative")
        if self.batch_size < 1 or self.eval_every < 1 or self.repeats < 1:
            raise ConfigError("batch_size, eval_every and repeats must be positive")
        if self.data_path is None:
            self.synth_config().validate()
        elif self.feature_dim is None:
            raise ConfigError("feature_dim: required when loading data from data_path")
        if "s5" in self.scenario and self.title_feature_index is None:
            raise ConfigError("title_feature_index: scenario s5 needs a title-length feature")
        self.sim_config().validate()

    def synth_config(self) -> SynthConfig:
        for key in ("queries", "docs_per_query", "feature_dim"):
            if getattr(self, key) is None:
                raise ConfigError(f"{key}: missing required key for synthetic data")
        return SynthConfig(
            queries=self.queries,
            docs_per_query=self.docs_per_query,
            feature_dim=self.feature_dim,
            relevant_fraction=self.relevant_fraction,
            title_feature_index=self.title_feature_index if self.title_feature_index is not None else 0,
            noise=self.noise,
            query_spread=self.query_spread,
        )

    def sim_config(self, seed: int | None = None) -> SimConfig:
        budget, iterations = self.click_budget, self.iterations
        if budget is None and iterations is None:
            budget = 500_000
        return SimConfig(
            k=self.k,
            click_budget=None if iterations is not None else budget,
            iterations=iterations,
            seed=self.seed if seed is None else seed,
            debug_latents=self.debug_latents,
            position_cap=self.position_cap,
            workers=self.workers,
        )

    def ranker_config(self) -> RankerTrainConfig:
        return RankerTrainConfig(hidden=self.ranker_hidden, steps=self.ranker_steps, lr=self.ranker_lr)

    def schedule(self, seed: int | None = None) -> Schedule:
        return Schedule(
            steps=self.steps,
            batch_size=self.batch_size,
            eval_every=self.eval_every,
            lr=self.lr,
            alpha=self.alpha,
            optimizer=self.optimizer,
            seed=self.seed if seed is None else seed,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(name: str, raw):
    """Convert a raw config value to the field's type."""
    f = _FIELDS[name]
    kind = str(f.type)
    if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none")):
        if "None" in kind:
            return None
        raise ConfigError(f"{name}: a value is required")
    try:
        if kind.startswith("list"):
            if isinstance(raw, (list, tuple)):
                return [str(v).strip().lower() for v in raw]
            return [v.strip().lower() for v in str(raw).split(",") if v.strip()]
        if kind == "bool":
            if isinstance(raw, bool):
                return raw
            value = str(raw).strip().lower()
            if value in ("1", "true", "yes", "on"):
                return True
            if value in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind.startswith("int"):
            return int(str(raw).replace("_", ""))
        if kind.startswith("float"):
            return float(raw)
        return str(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind}") from None


def parse_config_text(text: str) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        parser.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return dict(parser[_SECTION])


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a config file or run manifest, then apply ``overrides`` (flags win)."""
    raw: dict = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if path.suffix == ".json":
            try:
                payload = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from None
            raw = dict(payload.get("config", payload))
        else:
            raw = parse_config_text(text)
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    unknown = sorted(set(raw) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    return ExperimentConfig(**{k: _coerce(k, v) for k, v in raw.items()})
