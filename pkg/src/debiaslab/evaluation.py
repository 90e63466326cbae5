"""Training harness with periodic test AUC."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .clicksim import ClickLog
from .data import Dataset, MinMaxScaler, binarize_relevance
from .models import MODEL_KINDS, ClickModel, build_model
from .nn import OptimizerState, step

log = logging.getLogger(__name__)


class UndefinedAUCError(ValueError):
    pass


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with ties credited one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class EvalPoint:
    step: int
    auc: float


@dataclass
class Schedule:
    steps: int = 70_000
    batch_size: int = 256
    eval_every: int = 1000
    lr: float = 1e-3
    alpha: float = 100.0
    optimizer: str = "adam"
    seed: int = 0


@dataclass
class TrainResult:
    kind: str
    curve: list[EvalPoint]
    model: ClickModel
    scaler: MinMaxScaler
    bias_scaler: MinMaxScaler
    losses: list[float] = field(default_factory=list, repr=False)

    @property
    def final_auc(self) -> float:
        return self.curve[-1].auc


def relevance_labels(log_: ClickLog, train_set: Dataset | None) -> np.ndarray:
    """Binarized relevance of each logged document, for the skyline."""
    if train_set is not None:
        lookup = {g.query_id: g.relevant for g in train_set.groups}
        return np.array([lookup[q][d] for q, d in zip(log_.query_id, log_.doc_id)], dtype=float)
    if log_.r_latent is not None:
        return log_.r_latent.astype(float)
    raise ValueError("skyline training needs the training dataset or a log with debug latents")


def train_and_eval(kind: str, click_log: ClickLog, test_set: Dataset, schedule: Schedule,
                   train_set: Dataset | None = None) -> TrainResult:
    """Train one model on the log in shuffled minibatches, scoring the test set as it goes.

    Test labels are binarized relevance; the model's position-free ``score``
    is what gets evaluated. The skyline trains on relevance instead of clicks.
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    if len(click_log) == 0:
        raise ValueError("empty click log")
    if len(test_set) == 0:
        raise ValueError("empty test set")

    scaler = MinMaxScaler.fit(click_log.features)
    X = scaler.transform(click_log.features)
    bias_scaler = MinMaxScaler.fit(click_log.bias)
    B = bias_scaler.transform(click_log.bias)
    y = relevance_labels(click_log, train_set) if kind == "skyline" else click_log.click.astype(float)
    _, test_x, test_grades = test_set.stacked()
    test_x = scaler.transform(test_x)
    test_y = binarize_relevance(test_grades).astype(int)

    init_rng = np.random.default_rng(np.random.SeedSequence([schedule.seed, MODEL_KINDS.index(kind)]))
    model = build_model(kind, X.shape[1], B.shape[1], click_log.pos_dim, alpha=schedule.alpha, rng=init_rng)
    opts = {name: OptimizerState(schedule.optimizer, lr=schedule.lr) for name in model.networks}
    batch_rng = np.random.default_rng(np.random.SeedSequence([schedule.seed, 0xBA7C]))

    curve = [EvalPoint(0, auc(model.score(test_x), test_y))]
    losses = []
    n = len(y)
    perm = batch_rng.permutation(n)
    cursor = 0
    for t in range(1, schedule.steps + 1):
        if cursor + schedule.batch_size > n:
            perm = batch_rng.permutation(n)
            cursor = 0
        idx = perm[cursor:cursor + schedule.batch_size]
        cursor += schedule.batch_size
        loss, grads = model.loss_and_grads(X[idx], B[idx], y[idx])
        for name, net in model.networks.items():
            step(net, grads[name], opts[name])
        if t % schedule.eval_every == 0 or t == schedule.steps:
            losses.append(loss)
            curve.append(EvalPoint(t, auc(model.score(test_x), test_y)))
            log.debug("%s step %d loss %.4f auc %.4f", kind, t, loss, curve[-1].auc)
    return TrainResult(kind, curve, model, scaler, bias_scaler, losses)
