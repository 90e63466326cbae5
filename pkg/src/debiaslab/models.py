"""Click models trained on biased logs, plus the skyline reference.

All models consume a normalized feature matrix ``X`` (n, D) and a bias matrix
``B`` (n, nb) whose first ``pos_dim`` columns are the one-hot position
encoding. ``score(X)`` is the position-free relevance score used at inference.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .nn import (
    Network,
    binary_cross_entropy,
    binary_cross_entropy_grad,
    cross_entropy,
    cross_entropy_grad,
    load_networks,
    mlp,
    save_networks,
    sigmoid,
    softmax,
    softmax_backward,
)

MODEL_KINDS = ("iin", "pal", "mmoe", "skyline")
DEFAULT_POSITION_CAP = 10


def encode_position(pos, cap: int = DEFAULT_POSITION_CAP) -> np.ndarray:
    """One-hot position encoding; positions past ``cap`` share the last slot."""
    pos = np.atleast_1d(np.asarray(pos, dtype=int))
    if np.any(pos < 1):
        raise ValueError("positions are 1-based")
    out = np.zeros((pos.size, cap))
    out[np.arange(pos.size), np.minimum(pos, cap) - 1] = 1.0
    return out


class ClickModel:
    kind = ""
    #: Which networks see ``X``; the rest read bias inputs only.
    networks: dict[str, Network]

    def __init__(self, feature_dim: int, bias_dim: int, pos_dim: int):
        self.feature_dim = feature_dim
        self.bias_dim = bias_dim
        self.pos_dim = pos_dim

    def score(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def loss_and_grads(self, X, B, y) -> tuple[float, dict[str, np.ndarray]]:
        raise NotImplementedError

    def loss(self, X, B, y) -> float:
        return self.loss_and_grads(X, B, y)[0]

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "feature_dim": self.feature_dim,
            "bias_dim": self.bias_dim,
            "pos_dim": self.pos_dim,
        }

    def save(self, path: str | Path, **extra) -> None:
        save_networks(path, self.networks, **self.meta(), **extra)


class IINModel(ClickModel):
    """Relevance as a latent variable, clicks via a learned 2x2 transition.

    ``relevance_net`` maps x to ``[P(r=1|x), P(r=0|x)]``. ``bias_net`` maps the
    bias inputs to four logits arranged as a 2x2 matrix whose columns are
    normalized separately: column 0 holds ``P(y=1|r=1), P(y=0|r=1)`` and
    column 1 the same for ``r=0``.
    """

    kind = "iin"

    def __init__(self, feature_dim, bias_dim, pos_dim=DEFAULT_POSITION_CAP, alpha=100.0,
                 hidden=64, bias_hidden=16, init_gap=1.0, rng=None):
        super().__init__(feature_dim, bias_dim, pos_dim)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.alpha = float(alpha)
        self.relevance_net = mlp(feature_dim, hidden, 2, 3, head="softmax", rng=rng)
        self.bias_net = mlp(bias_dim, bias_hidden, 4, 2, rng=rng)
        # start with P(y=1|r=1) > P(y=1|r=0); with equal columns the relevance
        # gradient vanishes and r collapses to a constant
        _, out_bias, _ = self.bias_net.layers[-1]
        out_bias[:] = init_gap * np.array([0.5, -0.5, -0.5, 0.5])

    @property
    def networks(self):
        return {"relevance": self.relevance_net, "bias": self.bias_net}

    @staticmethod
    def _column_softmax(logits: np.ndarray) -> np.ndarray:
        t = logits.reshape(-1, 2, 2)
        return softmax(t.transpose(0, 2, 1)).transpose(0, 2, 1)

    def transition(self, B: np.ndarray) -> np.ndarray:
        """``t'`` for each row of ``B``: shape (n, 2, 2), columns sum to 1."""
        return self._column_softmax(self.bias_net(np.atleast_2d(B)))

    def forward(self, X, B):
        r = self.relevance_net(np.atleast_2d(X))
        t = self.transition(B)
        p_click = np.einsum("nij,nj->ni", t, r)
        return r, t, p_click

    def score(self, X):
        return self.relevance_net(np.atleast_2d(X))[:, 0]

    def constraint(self, t: np.ndarray) -> np.ndarray:
        """``relu(P(y=1|r=0) - P(y=1|r=1))`` per example."""
        return np.maximum(t[:, 0, 1] - t[:, 0, 0], 0.0)

    def loss_and_grads(self, X, B, y):
        X = np.atleast_2d(X)
        B = np.atleast_2d(B)
        y = np.asarray(y, dtype=float).reshape(-1)
        n = X.shape[0]
        r, r_cache = self.relevance_net.forward_with_cache(X)
        logits, b_cache = self.bias_net.forward_with_cache(B)
        t = self._column_softmax(logits)
        p = np.einsum("nij,nj->ni", t, r)
        target = np.stack([y, 1.0 - y], axis=1)
        violation = t[:, 0, 1] - t[:, 0, 0]
        loss = np.mean(cross_entropy(p, target) + self.alpha * np.maximum(violation, 0.0))

        gp = cross_entropy_grad(p, target) / n
        gr = np.einsum("ni,nij->nj", gp, t)
        gt = gp[:, :, None] * r[:, None, :]
        active = (violation > 0) * (self.alpha / n)
        gt[:, 0, 1] += active
        gt[:, 0, 0] -= active
        glogits = t * (gt - np.sum(t * gt, axis=1, keepdims=True))
        g_rel, _ = self.relevance_net.backward(r_cache, gr)
        g_bias, _ = self.bias_net.backward(b_cache, glogits.reshape(n, 4))
        return float(loss), {"relevance": g_rel.flat, "bias": g_bias.flat}

    def listwise_loss_and_grads(self, X, B, soft_labels):
        """Soft cross entropy over one list, scoring each item by its click probability.

        The constraint term is summed over the items of the list.
        """
        X = np.atleast_2d(X)
        B = np.atleast_2d(B)
        r, r_cache = self.relevance_net.forward_with_cache(X)
        logits, b_cache = self.bias_net.forward_with_cache(B)
        t = self._column_softmax(logits)
        p = np.einsum("nij,nj->ni", t, r)
        ce, g_scores = listwise_soft_ce(p[:, 0], soft_labels, with_grad=True)
        violation = t[:, 0, 1] - t[:, 0, 0]
        loss = ce + self.alpha * np.sum(np.maximum(violation, 0.0))

        gp = np.zeros_like(p)
        gp[:, 0] = g_scores
        gr = np.einsum("ni,nij->nj", gp, t)
        gt = gp[:, :, None] * r[:, None, :]
        active = (violation > 0) * self.alpha
        gt[:, 0, 1] += active
        gt[:, 0, 0] -= active
        glogits = t * (gt - np.sum(t * gt, axis=1, keepdims=True))
        g_rel, _ = self.relevance_net.backward(r_cache, gr)
        g_bias, _ = self.bias_net.backward(b_cache, glogits.reshape(-1, 4))
        return float(loss), {"relevance": g_rel.flat, "bias": g_bias.flat}

    def meta(self):
        return {**super().meta(), "alpha": self.alpha}


class PALModel(ClickModel):
    """Click probability as P(seen | pos) times P(click | x, seen)."""

    kind = "pal"

    def __init__(self, feature_dim, bias_dim, pos_dim=DEFAULT_POSITION_CAP, hidden=64,
                 bias_hidden=16, rng=None):
        super().__init__(feature_dim, bias_dim, pos_dim)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.rel_net = mlp(feature_dim, hidden, 1, 3, output="sigmoid", rng=rng)
        self.obs_net = mlp(pos_dim, bias_hidden, 1, 2, output="sigmoid", rng=rng)

    @property
    def networks(self):
        return {"rel": self.rel_net, "obs": self.obs_net}

    def forward(self, X, B):
        B = np.atleast_2d(B)
        return self.obs_net(B[:, : self.pos_dim])[:, 0] * self.rel_net(np.atleast_2d(X))[:, 0]

    def score(self, X):
        return self.rel_net(np.atleast_2d(X))[:, 0]

    def loss_and_grads(self, X, B, y):
        X = np.atleast_2d(X)
        B = np.atleast_2d(B)
        y = np.asarray(y, dtype=float).reshape(-1)
        n = X.shape[0]
        c, c_cache = self.rel_net.forward_with_cache(X)
        s, s_cache = self.obs_net.forward_with_cache(B[:, : self.pos_dim])
        p = s[:, 0] * c[:, 0]
        loss = float(np.mean(binary_cross_entropy(p, y)))
        gp = binary_cross_entropy_grad(p, y) / n
        g_rel, _ = self.rel_net.backward(c_cache, (gp * s[:, 0])[:, None])
        g_obs, _ = self.obs_net.backward(s_cache, (gp * c[:, 0])[:, None])
        return loss, {"rel": g_rel.flat, "obs": g_obs.flat}


class MMoEBiasModel(ClickModel):
    """Click logit as a relevance logit plus a shallow bias-tower logit."""

    kind = "mmoe"

    def __init__(self, feature_dim, bias_dim, pos_dim=DEFAULT_POSITION_CAP, hidden=64,
                 bias_hidden=16, rng=None):
        super().__init__(feature_dim, bias_dim, pos_dim)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.main_net = mlp(feature_dim, hidden, 1, 3, rng=rng)
        self.bias_tower = mlp(bias_dim, bias_hidden, 1, 2, rng=rng)

    @property
    def networks(self):
        return {"main": self.main_net, "bias": self.bias_tower}

    def forward(self, X, B):
        z = self.main_net(np.atleast_2d(X))[:, 0] + self.bias_tower(np.atleast_2d(B))[:, 0]
        return sigmoid(z)

    def score(self, X):
        return sigmoid(self.main_net(np.atleast_2d(X))[:, 0])

    def loss_and_grads(self, X, B, y):
        X = np.atleast_2d(X)
        B = np.atleast_2d(B)
        y = np.asarray(y, dtype=float).reshape(-1)
        n = X.shape[0]
        zm, m_cache = self.main_net.forward_with_cache(X)
        zb, b_cache = self.bias_tower.forward_with_cache(B)
        z = zm[:, 0] + zb[:, 0]
        # logistic loss in softplus form
        loss = float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))
        gz = ((sigmoid(z) - y) / n)[:, None]
        g_main, _ = self.main_net.backward(m_cache, gz)
        g_bias, _ = self.bias_tower.backward(b_cache, gz)
        return loss, {"main": g_main.flat, "bias": g_bias.flat}


class SkylineModel(ClickModel):
    """3-layer MLP fit directly to relevance labels; an upper reference."""

    kind = "skyline"

    def __init__(self, feature_dim, bias_dim=0, pos_dim=DEFAULT_POSITION_CAP, hidden=64, rng=None):
        super().__init__(feature_dim, bias_dim, pos_dim)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.net = mlp(feature_dim, hidden, 1, 3, output="sigmoid", rng=rng)

    @property
    def networks(self):
        return {"net": self.net}

    def forward(self, X, B=None):
        return self.net(np.atleast_2d(X))[:, 0]

    def score(self, X):
        return self.forward(X)

    def loss_and_grads(self, X, B, y):
        X = np.atleast_2d(X)
        y = np.asarray(y, dtype=float).reshape(-1)
        p, cache = self.net.forward_with_cache(X)
        loss = float(np.mean(binary_cross_entropy(p[:, 0], y)))
        g = binary_cross_entropy_grad(p[:, 0], y) / X.shape[0]
        grads, _ = self.net.backward(cache, g[:, None])
        return loss, {"net": grads.flat}


_MODEL_CLASSES = {cls.kind: cls for cls in (IINModel, PALModel, MMoEBiasModel, SkylineModel)}


def build_model(kind: str, feature_dim: int, bias_dim: int, pos_dim: int = DEFAULT_POSITION_CAP,
                alpha: float = 100.0, rng=None) -> ClickModel:
    if kind not in _MODEL_CLASSES:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    if kind == "iin":
        return IINModel(feature_dim, bias_dim, pos_dim, alpha=alpha, rng=rng)
    return _MODEL_CLASSES[kind](feature_dim, bias_dim, pos_dim, rng=rng)


def load_model(path: str | Path) -> tuple[ClickModel, dict]:
    """Load a checkpoint; returns the model and any extra metadata stored with it."""
    nets, meta = load_networks(path)
    kind = meta.pop("kind")
    model = build_model(kind, meta.pop("feature_dim"), meta.pop("bias_dim"), meta.pop("pos_dim"),
                        alpha=meta.pop("alpha", 100.0))
    for name, net in nets.items():
        model.networks[name].params[:] = net.params
    return model, meta


def iin_forward(model: IINModel, x, pos, b=None):
    """Single-example forward pass; returns ``(r, t_prime, p_click)``."""
    B = bias_input(pos, b, model.pos_dim)
    r, t, p = model.forward(np.atleast_2d(x), B)
    return r[0], t[0], p[0]


def iin_loss(model: IINModel, x, pos, b, y) -> float:
    return model.loss(np.atleast_2d(x), bias_input(pos, b, model.pos_dim), [y])


def iin_score(model: IINModel, x) -> np.ndarray | float:
    s = model.score(x)
    return float(s[0]) if np.ndim(x) == 1 else s


def pal_forward(model: PALModel, x, pos) -> float:
    B = encode_position(pos, model.pos_dim)
    return float(model.forward(np.atleast_2d(x), B)[0])


def mmoe_forward(model: MMoEBiasModel, x, pos, b=None) -> float:
    return float(model.forward(np.atleast_2d(x), bias_input(pos, b, model.pos_dim))[0])


def bias_input(pos, b=None, cap: int = DEFAULT_POSITION_CAP) -> np.ndarray:
    """Position one-hot followed by any extra bias features, as a (n, nb) matrix."""
    enc = encode_position(pos, cap)
    if b is None or np.size(b) == 0:
        return enc
    extra = np.asarray(b, dtype=float).reshape(enc.shape[0], -1)
    return np.hstack([enc, extra])


def listwise_soft_ce(scores, soft_labels, with_grad: bool = False):
    """Cross entropy between softmax(scores) and the normalized soft labels."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(soft_labels, dtype=float)
    if scores.shape != labels.shape or scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores and labels must be equal-length, non-empty vectors")
    if np.any(labels < 0):
        raise ValueError("soft labels must be non-negative")
    total = labels.sum()
    if total <= 0:
        raise ValueError("soft labels are all zero")
    target = labels / total
    shifted = scores - np.max(scores)
    log_probs = shifted - np.log(np.sum(np.exp(shifted)))
    loss = float(-np.sum(target * log_probs))
    if not with_grad:
        return loss
    return loss, np.exp(log_probs) - target


def bias_surface(model: IINModel, positions, b_samples=None) -> list[tuple[int, float | None, float, float]]:
    """``(pos, b, P(y=1|r=1), P(y=1|r=0))`` for every position and bias sample.

    ``b_samples`` are the extra bias values beyond the position; leave it
    ``None`` when the model's bias input is the position alone.
    """
    rows = []
    samples = [None] if b_samples is None else list(b_samples)
    for pos in positions:
        for b in samples:
            t = model.transition(bias_input([pos], None if b is None else [b], model.pos_dim))[0]
            rows.append((int(pos), None if b is None else float(b), float(t[0, 0]), float(t[0, 1])))
    return rows
