"""Observation and click simulation for scenarios s1-s5, with top-5 + K resampling.

Scenarios s1-s4 share a position-only observation model and differ in the
click rule; s5 uses the s3 click rule with an observation probability scaled
by a per-document weight derived from the title-length feature.

Every (query, iteration) pair draws from its own generator seeded by
``(seed, query_id, iteration)``, so logs do not depend on how queries are
sharded across workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .data import ConfigError, Dataset
from .models import DEFAULT_POSITION_CAP, encode_position
from .ranker import Ranker, rank

SCENARIOS = ("s1", "s2", "s3", "s4", "s5")
TOP_N = 5
FAR_OBSERVE = 0.1
# click rule number per scenario; s5 reuses the s3 rule
CLICK_RULES = {"s1": 1, "s2": 2, "s3": 3, "s4": 4, "s5": 3}


@dataclass(frozen=True)
class ObservationModel:
    """``kind`` is ``"position"`` or ``"position_feature"``.

    For ``position_feature`` the per-document weight is ``theta @ x``
    min-max normalized within each query onto [0.5, 1].
    """

    kind: str = "position"
    theta: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("position", "position_feature"):
            raise ValueError(f"unknown observation model {self.kind!r}")
        if self.kind == "position_feature" and self.theta is None:
            raise ValueError("position_feature observation needs theta")

    def omega(self, features: np.ndarray) -> np.ndarray:
        if self.kind == "position":
            return np.ones(len(features))
        return normalize_omega(np.atleast_2d(features) @ self.theta)

    def probs(self, positions, omega=None) -> np.ndarray:
        pos = np.asarray(positions)
        if np.any(pos < 1):
            raise ValueError("positions are 1-based")
        base = np.where(pos <= TOP_N, 1.0 / np.maximum(pos, 1), FAR_OBSERVE)
        if self.kind == "position":
            return base
        return base * (1.0 if omega is None else np.asarray(omega, dtype=float))


@dataclass(frozen=True)
class ClickScenario:
    id: str
    observation: ObservationModel

    @property
    def click_rule(self) -> int:
        return CLICK_RULES[self.id]


def make_scenario(scenario_id: str, feature_dim: int | None = None,
                  title_feature_index: int | None = None, seed: int = 0) -> ClickScenario:
    """Build a scenario; s5 draws its title weight from ``seed``.

    The s5 weight vector is zero except at the title feature, whose weight
    is drawn from +/-U(0.5, 1.5); the sign fixes whether long or short titles
    are noticed more.
    """
    scenario_id = scenario_id.lower()
    if scenario_id not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario_id!r}; expected one of {SCENARIOS}")
    if scenario_id != "s5":
        return ClickScenario(scenario_id, ObservationModel("position"))
    if feature_dim is None or title_feature_index is None:
        raise ConfigError("scenario s5 needs a dataset with a title_feature_index")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7171E]))
    theta = np.zeros(feature_dim)
    theta[title_feature_index] = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.5)
    return ClickScenario("s5", ObservationModel("position_feature", theta))


def observe_prob(model: ObservationModel, pos: int, omega: float = 1.0) -> float:
    """P(observed) at 1-based ``pos``; ``omega`` is the document's normalized weight."""
    if pos < 1:
        raise ValueError("positions are 1-based")
    return float(model.probs(np.array([pos]), np.array([omega]))[0])


def normalize_omega(raw_scores) -> np.ndarray:
    raw = np.asarray(raw_scores, dtype=float)
    if raw.size == 0:
        raise ValueError("cannot normalize an empty list")
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.full(raw.shape, 0.75)
    return 0.5 + 0.5 * (raw - lo) / (hi - lo)


def click_probs(scenario: ClickScenario | str, positions, relevant, observed) -> np.ndarray:
    """Vectorized click probability table."""
    rule = CLICK_RULES[scenario if isinstance(scenario, str) else scenario.id]
    pos = np.asarray(positions)
    r = np.asarray(relevant, dtype=bool)
    o = np.asarray(observed, dtype=bool)
    p = np.where(r & o, 1.0, 0.0)
    if rule >= 2:
        p = np.where(~r & o, 1.0 / (np.minimum(pos, TOP_N) + 3), p)
    if rule >= 3:
        p = np.where(r & ~o, 0.1, p)
    if rule >= 4:
        p = np.where(~r & ~o, 0.01, p)
    return p


def click_prob(scenario: ClickScenario | str, pos: int, relevant: bool, observed: bool) -> float:
    if pos < 1:
        raise ValueError("positions are 1-based")
    return float(click_probs(scenario, [pos], [relevant], [observed])[0])


def sample_impressions(scenario: ClickScenario, positions, relevant, omega, rng: np.random.Generator,
                       observed=None):
    """Draw observation then click for each impression; returns ``(o, y)``.

    Passing ``observed`` skips the observation draw and forces that outcome.
    """
    positions = np.asarray(positions)
    u_obs = rng.random(positions.shape)
    u_click = rng.random(positions.shape)
    if observed is None:
        o = u_obs < scenario.observation.probs(positions, omega)
    else:
        o = np.broadcast_to(np.asarray(observed, dtype=bool), positions.shape)
    y = u_click < click_probs(scenario, positions, relevant, o)
    return o, y


@dataclass
class SimConfig:
    k: int = 15
    click_budget: int | None = None
    iterations: int | None = None
    seed: int = 0
    debug_latents: bool = False
    position_cap: int = DEFAULT_POSITION_CAP
    workers: int = 1

    def validate(self):
        if self.k < 0:
            raise ConfigError("k must be non-negative")
        if self.click_budget is None and self.iterations is None:
            raise ConfigError("set either click_budget or iterations")
        if self.iterations is not None and self.iterations < 1:
            raise ConfigError("iterations must be positive")
        if self.click_budget is not None and self.click_budget < 1:
            raise ConfigError("click_budget must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be positive")


@dataclass
class ClickLog:
    query_id: np.ndarray
    doc_id: np.ndarray
    pos: np.ndarray
    click: np.ndarray
    bias: np.ndarray
    features: np.ndarray
    pos_dim: int = DEFAULT_POSITION_CAP
    o_latent: np.ndarray | None = None
    r_latent: np.ndarray | None = None
    scenario: str | None = field(default=None, compare=False)

    def __len__(self):
        return len(self.click)

    def __eq__(self, other):
        if not isinstance(other, ClickLog) or self.pos_dim != other.pos_dim:
            return False
        arrays = ("query_id", "doc_id", "pos", "click", "bias", "features", "o_latent", "r_latent")
        for name in arrays:
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None) or (a is not None and not np.array_equal(a, b)):
                return False
        return True

    @property
    def bias_columns(self) -> list[str]:
        cols = [f"bpos_{i + 1}" for i in range(self.pos_dim)]
        return cols + [f"b_{i}" for i in range(self.bias.shape[1] - self.pos_dim)]

    def to_frame(self) -> pd.DataFrame:
        data = {
            "query_id": self.query_id,
            "doc_id": self.doc_id,
            "pos": self.pos,
            "click": self.click.astype(int),
        }
        for j, name in enumerate(self.bias_columns):
            data[name] = self.bias[:, j]
        for j in range(self.features.shape[1]):
            data[f"x_{j + 1}"] = self.features[:, j]
        if self.o_latent is not None:
            data["o_latent"] = self.o_latent.astype(int)
            data["r_latent"] = self.r_latent.astype(int)
        return pd.DataFrame(data)

    def to_csv(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format=None)

    @classmethod
    def from_csv(cls, path: str | Path) -> "ClickLog":
        df = pd.read_csv(path, float_precision="round_trip")
        for col in ("query_id", "doc_id", "pos", "click"):
            if col not in df.columns:
                raise ValueError(f"{path}: missing column {col!r}")
        pos_cols = [c for c in df.columns if c.startswith("bpos_")]
        extra = [c for c in df.columns if c.startswith("b_")]
        feats = [c for c in df.columns if c.startswith("x_")]
        debug = "o_latent" in df.columns
        return cls(
            query_id=df["query_id"].to_numpy(int),
            doc_id=df["doc_id"].to_numpy(int),
            pos=df["pos"].to_numpy(int),
            click=df["click"].to_numpy(int),
            bias=df[pos_cols + extra].to_numpy(float),
            features=df[feats].to_numpy(float),
            pos_dim=len(pos_cols),
            o_latent=df["o_latent"].to_numpy(int) if debug else None,
            r_latent=df["r_latent"].to_numpy(int) if debug else None,
        )


def records_per_iteration(n_docs: int, k: int) -> int:
    top = min(n_docs, TOP_N)
    return top + min(k, n_docs - top)


def _simulate_query(args):
    group, positions, omega, scenario, config, iterations = args
    relevant_by_doc = group.relevant
    order = np.argsort(positions, kind="stable")  # doc ids by rank
    n = len(group)
    top = min(n, TOP_N)
    n_extra = min(config.k, n - top)
    per_it = top + n_extra
    doc_ids = np.empty((iterations, per_it), dtype=int)
    obs = np.empty((iterations, per_it), dtype=bool)
    clicks = np.empty((iterations, per_it), dtype=bool)
    ranked_pos = positions[order]
    ranked_rel = relevant_by_doc[order]
    ranked_omega = omega[order]
    for it in range(iterations):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, int(group.query_id), it]))
        o, y = sample_impressions(scenario, ranked_pos, ranked_rel, ranked_omega, rng)
        if n_extra:
            extra = top + rng.choice(n - top, size=n_extra, replace=False)
            chosen = np.concatenate([np.arange(top), np.sort(extra)])
        else:
            chosen = np.arange(top)
        doc_ids[it] = order[chosen]
        obs[it] = o[chosen]
        clicks[it] = y[chosen]
    return doc_ids.ravel(), obs.ravel(), clicks.ravel()


def simulate(dataset: Dataset, ranker: Ranker, scenario: ClickScenario, config: SimConfig) -> ClickLog:
    """Rank each query, simulate impressions, keep the top 5 plus K random lower documents."""
    config.validate()
    if len(dataset) == 0:
        raise ValueError("cannot simulate clicks on an empty dataset")
    if scenario.id == "s5" and dataset.title_feature_index is None:
        raise ConfigError("scenario s5 needs a dataset with a title_feature_index")
    groups = sorted(dataset.groups, key=lambda g: g.query_id)
    if config.iterations is not None:
        iterations = config.iterations
    else:
        per_round = sum(records_per_iteration(len(g), config.k) for g in groups)
        iterations = math.ceil(config.click_budget / per_round)

    jobs = []
    for g in groups:
        ranked = rank(ranker, g)
        jobs.append((g, ranked.positions, scenario.observation.omega(g.features), scenario, config, iterations))
    if config.workers > 1:
        chunk = max(1, len(jobs) // (4 * config.workers))
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_simulate_query, jobs, chunksize=chunk))
    else:
        results = [_simulate_query(job) for job in jobs]

    parts = {"qid": [], "doc": [], "pos": [], "click": [], "o": [], "r": [], "x": []}
    for g, (job, (doc_ids, o, y)) in zip(groups, zip(jobs, results)):
        positions = job[1]
        parts["qid"].append(np.full(len(doc_ids), g.query_id))
        parts["doc"].append(doc_ids)
        parts["pos"].append(positions[doc_ids])
        parts["click"].append(y.astype(int))
        parts["o"].append(o.astype(int))
        parts["r"].append(g.relevant[doc_ids].astype(int))
        parts["x"].append(g.features[doc_ids])
    pos = np.concatenate(parts["pos"])
    features = np.vstack(parts["x"])
    bias = encode_position(pos, config.position_cap)
    if scenario.id == "s5":
        bias = np.hstack([bias, features[:, [dataset.title_feature_index]]])
    return ClickLog(
        query_id=np.concatenate(parts["qid"]),
        doc_id=np.concatenate(parts["doc"]),
        pos=pos,
        click=np.concatenate(parts["click"]),
        bias=bias,
        features=features,
        pos_dim=config.position_cap,
        o_latent=np.concatenate(parts["o"]) if config.debug_latents else None,
        r_latent=np.concatenate(parts["r"]) if config.debug_latents else None,
        scenario=scenario.id,
    )


def empirical_position_ctr(log: ClickLog) -> dict[int, float]:
    """Click rate per position; positions with no records are absent."""
    if len(log) == 0:
        raise ValueError("empty click log")
    positions, inverse = np.unique(log.pos, return_inverse=True)
    counts = np.bincount(inverse)
    clicks = np.bincount(inverse, weights=log.click)
    return {int(p): float(c / n) for p, c, n in zip(positions, clicks, counts)}
