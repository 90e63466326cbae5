"""Small feedforward networks with analytic backprop, built on numpy.

Every parameter of a :class:`Network` lives in one flat float64 buffer; the
per-layer weight and bias arrays are views into it. Gradients share the same
layout, which keeps optimizer updates to a handful of vector operations and
makes finite-difference checks trivial.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("relu", "identity", "sigmoid")
HEADS = (None, "softmax")
PROB_EPS = 1e-12


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, shifted by the row max for stability."""
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of softmax along the last axis."""
    return probs * (upstream - np.sum(probs * upstream, axis=-1, keepdims=True))


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return sigmoid(z)
    return z


def _activation_grad(z: np.ndarray, a: np.ndarray, kind: str, upstream: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return upstream * (z > 0)
    if kind == "sigmoid":
        return upstream * a * (1.0 - a)
    return upstream


class Network:
    """A stack of affine layers, each followed by an activation.

    ``sizes`` lists the layer widths including the input, so ``[8, 64, 64, 2]``
    is a 3-layer network. ``head="softmax"`` normalizes the final output.
    """

    def __init__(
        self,
        sizes: Sequence[int],
        activations: Sequence[str],
        head: str | None = None,
        rng: np.random.Generator | None = None,
        params: np.ndarray | None = None,
    ):
        if len(sizes) < 2:
            raise ValueError("a network needs at least one layer")
        if len(activations) != len(sizes) - 1:
            raise ValueError(
                f"{len(sizes) - 1} layers but {len(activations)} activations"
            )
        for act in activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}")
        self.sizes = [int(s) for s in sizes]
        self.activations = list(activations)
        self.head = head

        self._slices = []
        offset = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = slice(offset, offset + fan_in * fan_out)
            offset += fan_in * fan_out
            b = slice(offset, offset + fan_out)
            offset += fan_out
            self._slices.append((w, b, (fan_in, fan_out)))
        self.n_params = offset

        if params is not None:
            params = np.array(params, dtype=float)
            if params.shape != (offset,):
                raise ValueError(f"expected {offset} parameters, got {params.shape}")
            self.params = params
        else:
            self.params = np.zeros(offset)
            if rng is None:
                rng = np.random.default_rng(0)
            for (w, _, (fan_in, fan_out)) in self._slices:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                self.params[w] = rng.uniform(-limit, limit, size=fan_in * fan_out)

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    @property
    def layers(self) -> list[tuple[np.ndarray, np.ndarray, str]]:
        """``(weight, bias, activation)`` per layer; weight is ``(fan_in, fan_out)``."""
        return [
            (self.params[w].reshape(shape), self.params[b], act)
            for (w, b, shape), act in zip(self._slices, self.activations)
        ]

    def copy(self) -> "Network":
        return Network(self.sizes, self.activations, self.head, params=self.params.copy())

    def forward_with_cache(self, inputs: np.ndarray):
        x = np.asarray(inputs, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"input has {x.shape[-1]} features, network expects {self.input_dim}")
        cache = [x]
        a = x
        for weight, bias, act in self.layers:
            z = a @ weight + bias
            a = _activate(z, act)
            cache.append((z, a))
        out = softmax(a) if self.head == "softmax" else a
        return (out[0] if squeeze else out), (cache, out, squeeze)

    def __call__(self, inputs: np.ndarray) -> np.ndarray:
        return self.forward_with_cache(inputs)[0]

    def backward(self, cache, upstream: np.ndarray) -> tuple["Gradients", np.ndarray]:
        """Gradients of a scalar loss given ``upstream`` = dLoss/dOutput.

        Returns the parameter gradients and the gradient w.r.t. the inputs.
        Batched inputs are summed over, so pass an upstream already scaled by
        ``1/batch`` for a mean loss.
        """
        layer_cache, out, squeeze = cache
        g = np.asarray(upstream, dtype=float)
        if squeeze:
            g = g[None, :]
        if g.shape != out.shape:
            raise ValueError(f"upstream shape {g.shape} does not match output")
        if self.head == "softmax":
            g = softmax_backward(out, g)
        grads = np.zeros(self.n_params)
        for i in range(len(self._slices) - 1, -1, -1):
            w_sl, b_sl, shape = self._slices[i]
            z, a = layer_cache[i + 1]
            g = _activation_grad(z, a, self.activations[i], g)
            prev = layer_cache[i] if i == 0 else layer_cache[i][1]
            grads[w_sl] = (prev.T @ g).ravel()
            grads[b_sl] = g.sum(axis=0)
            g = g @ self.params[w_sl].reshape(shape).T
        return Gradients(grads, self), (g[0] if squeeze else g)

    def to_dict(self) -> dict:
        return {
            "sizes": self.sizes,
            "activations": self.activations,
            "head": self.head,
            "layers": [
                {"weight": w.ravel().tolist(), "bias": b.tolist(), "shape": list(w.shape)}
                for w, b, _ in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Network":
        parts = []
        for layer in data["layers"]:
            parts.append(np.asarray(layer["weight"], dtype=float))
            parts.append(np.asarray(layer["bias"], dtype=float))
        params = np.concatenate(parts) if parts else np.zeros(0)
        return cls(data["sizes"], data["activations"], data.get("head"), params=params)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Network)
            and self.sizes == other.sizes
            and self.activations == other.activations
            and self.head == other.head
            and np.array_equal(self.params, other.params)
        )

    def __repr__(self) -> str:
        return f"Network(sizes={self.sizes}, activations={self.activations}, head={self.head!r})"


def mlp(in_dim: int, hidden: int, out_dim: int, n_layers: int, output: str = "identity",
        head: str | None = None, rng: np.random.Generator | None = None) -> Network:
    """Relu MLP with ``n_layers`` affine layers and the given output activation."""
    sizes = [in_dim] + [hidden] * (n_layers - 1) + [out_dim]
    activations = ["relu"] * (n_layers - 1) + [output]
    return Network(sizes, activations, head=head, rng=rng)


@dataclass
class Gradients:
    """Flat gradient buffer congruent with ``network.params``."""

    flat: np.ndarray
    network: Network

    @property
    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.flat[w].reshape(shape), self.flat[b]) for w, b, shape in self.network._slices]


def forward(net: Network, inputs: np.ndarray) -> np.ndarray:
    return net(inputs)


def backward(net: Network, inputs: np.ndarray, upstream: np.ndarray) -> Gradients:
    _, cache = net.forward_with_cache(inputs)
    return net.backward(cache, upstream)[0]


def cross_entropy(pred: np.ndarray, target: np.ndarray) -> np.ndarray | float:
    """``-sum(target * log(pred))`` over the last axis, with pred clamped to [eps, 1-eps]."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    clamped = np.clip(pred, PROB_EPS, 1.0 - PROB_EPS)
    loss = -np.sum(target * np.log(clamped), axis=-1)
    return float(loss) if loss.ndim == 0 else loss


def cross_entropy_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d cross_entropy / d pred; zero where the clamp is active."""
    inside = (pred > PROB_EPS) & (pred < 1.0 - PROB_EPS)
    return np.where(inside, -target / np.clip(pred, PROB_EPS, None), 0.0)


def binary_cross_entropy(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def binary_cross_entropy_grad(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    inside = (p > PROB_EPS) & (p < 1.0 - PROB_EPS)
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return np.where(inside, -y / pc + (1.0 - y) / (1.0 - pc), 0.0)


@dataclass
class OptimizerState:
    algorithm: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.algorithm not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.algorithm!r}")


def step(net: Network, grads: Gradients | np.ndarray, opt: OptimizerState):
    """Apply one SGD or Adam update in place; returns ``(net, opt)``."""
    g = grads.flat if isinstance(grads, Gradients) else np.asarray(grads, dtype=float)
    if g.shape != net.params.shape:
        raise ValueError("gradient does not match network parameters")
    if opt.algorithm == "sgd":
        net.params -= opt.lr * g
        return net, opt
    if opt.m is None:
        opt.m = np.zeros_like(net.params)
        opt.v = np.zeros_like(net.params)
    opt.t += 1
    opt.m *= opt.beta1
    opt.m += (1.0 - opt.beta1) * g
    opt.v *= opt.beta2
    opt.v += (1.0 - opt.beta2) * g * g
    m_hat = opt.m / (1.0 - opt.beta1 ** opt.t)
    v_hat = opt.v / (1.0 - opt.beta2 ** opt.t)
    net.params -= opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    return net, opt


def numerical_gradient(loss: Callable[[], float], params: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``loss()`` w.r.t. ``params``, perturbed in place."""
    grad = np.zeros_like(params)
    for i in range(params.size):
        orig = params[i]
        params[i] = orig + h
        up = loss()
        params[i] = orig - h
        down = loss()
        params[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps near-zero gradients, where finite differences are all
    rounding noise, from dominating the maximum.
    """
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def save_networks(path: str | Path, networks: dict[str, Network], **meta) -> None:
    payload = dict(meta)
    payload["networks"] = {name: net.to_dict() for name, net in networks.items()}
    Path(path).write_text(json.dumps(payload, indent=1))


def load_networks(path: str | Path) -> tuple[dict[str, Network], dict]:
    payload = json.loads(Path(path).read_text())
    nets = {name: Network.from_dict(d) for name, d in payload.pop("networks").items()}
    return nets, payload
