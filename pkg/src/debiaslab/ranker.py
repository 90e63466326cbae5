"""The deliberately weak production ranker that orders documents before clicks are simulated."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ConfigError, Dataset, MAX_GRADE, MinMaxScaler, QueryGroup
from .nn import Network, OptimizerState, load_networks, mlp, save_networks, step


@dataclass
class RankerTrainConfig:
    hidden: int = 32
    steps: int = 300
    lr: float = 1e-2
    batch_size: int = 64


@dataclass
class Ranker:
    network: Network
    scaler: MinMaxScaler

    def scores(self, features: np.ndarray) -> np.ndarray:
        return self.network(self.scaler.transform(np.atleast_2d(features)))[:, 0]

    def save(self, path: str | Path) -> None:
        save_networks(path, {"ranker": self.network}, kind="ranker", scaler=self.scaler.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> "Ranker":
        nets, meta = load_networks(path)
        if meta.get("kind") != "ranker":
            raise ValueError(f"{path} is not a ranker checkpoint")
        return cls(nets["ranker"], MinMaxScaler.from_dict(meta["scaler"]))


@dataclass(frozen=True)
class RankedList:
    query_id: int
    order: np.ndarray
    #: 1-based position of each document, indexed by doc_id
    positions: np.ndarray


def select_training_groups(dataset: Dataset, fraction: float, seed: int) -> list[QueryGroup]:
    if not 0 < fraction <= 1:
        raise ConfigError(f"ranker fraction must be in (0, 1], got {fraction}")
    if len(dataset) == 0:
        raise ConfigError("cannot train a ranker on an empty dataset")
    # the epsilon keeps e.g. 0.07 * 100 from rounding up to 8
    n = math.ceil(fraction * len(dataset) - 1e-9)
    if n < 1:
        raise ConfigError("ranker fraction selects no queries")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x2A4C]))
    idx = np.sort(rng.choice(len(dataset), size=n, replace=False))
    return [dataset.groups[i] for i in idx]


def train_production_ranker(dataset: Dataset, fraction: float = 0.01,
                            config: RankerTrainConfig | None = None, seed: int = 0) -> Ranker:
    """Pointwise squared-error regression on grades scaled to [0, 1]."""
    config = config or RankerTrainConfig()
    groups = select_training_groups(dataset, fraction, seed)
    X = np.vstack([g.features for g in groups])
    y = np.concatenate([g.grades for g in groups]) / MAX_GRADE
    scaler = MinMaxScaler.fit(X)
    Xn = scaler.transform(X)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x2A4D]))
    net = mlp(X.shape[1], config.hidden, 1, 2, rng=rng)
    opt = OptimizerState("adam", lr=config.lr)
    for _ in range(config.steps):
        batch = rng.integers(0, len(y), size=min(config.batch_size, len(y)))
        pred, cache = net.forward_with_cache(Xn[batch])
        err = pred[:, 0] - y[batch]
        grads, _ = net.backward(cache, (2.0 * err / len(batch))[:, None])
        step(net, grads, opt)
    return Ranker(net, scaler)


def rank_scores(query_id: int, scores: np.ndarray) -> RankedList:
    """Sort by descending score, ties broken by ascending doc_id."""
    scores = np.asarray(scores, dtype=float)
    order = np.lexsort((np.arange(len(scores)), -scores))
    positions = np.empty(len(scores), dtype=int)
    positions[order] = np.arange(1, len(scores) + 1)
    return RankedList(query_id, order, positions)


def rank(ranker: Ranker, group: QueryGroup) -> RankedList:
    if len(group) == 0:
        raise ValueError(f"query {group.query_id} has no documents")
    return rank_scores(group.query_id, ranker.scores(group.features))


def pairwise_accuracy(scores: np.ndarray, relevant: np.ndarray) -> float | None:
    """Fraction of (relevant, irrelevant) pairs ordered correctly; ties count half."""
    scores = np.asarray(scores, dtype=float)
    relevant = np.asarray(relevant, dtype=bool)
    pos, neg = scores[relevant], scores[~relevant]
    if pos.size == 0 or neg.size == 0:
        return None
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)
