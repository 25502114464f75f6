"""A minimal dense neural network with hand-written backpropagation.

Everything runs in float64 on numpy arrays so gradient checks can be held
to tight tolerances. There is no autodiff: each layer knows its own
forward and backward rules, and :func:`finite_difference_check` verifies
them against central differences.

Supported pieces: dense layers with relu/sigmoid/identity activations,
softmax cross-entropy, the logistic pair used by logit fusion, SGD and
RMSprop (with a stepwise learning-rate decay schedule), and a JSON
checkpoint format.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericError

ACTIVATIONS = ("relu", "sigmoid", "identity")

CHECKPOINT_VERSION = 1


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise DataError(f"expected 1-D or 2-D input, got shape {x.shape}")


def activate(pre: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(0.0, pre)
    if kind == "sigmoid":
        return logistic(pre)
    if kind == "identity":
        return pre
    raise ConfigError(f"unknown activation {kind!r}")


def activation_grad(pre: np.ndarray, post: np.ndarray, kind: str) -> np.ndarray:
    """d(post)/d(pre), elementwise, reusing cached values.

    The relu subgradient at exactly 0 is taken as 1 so that additive paths
    initialized to exactly zero still receive gradient.
    """
    if kind == "relu":
        return (pre >= 0.0).astype(np.float64)
    if kind == "sigmoid":
        return post * (1.0 - post)
    if kind == "identity":
        return np.ones_like(pre)
    raise ConfigError(f"unknown activation {kind!r}")


@dataclass
class DenseLayer:
    """Fully connected layer: post = act(x @ W.T + b). Weights are (out, in)."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise DataError("inconsistent dense layer shapes")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def initialize(cls, n_in: int, n_out: int, activation: str, rng: np.random.Generator) -> "DenseLayer":
        # Uniform Glorot: scale-stable for the small stacks used here.
        limit = math.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-limit, limit, size=(n_out, n_in))
        return cls(weights=w, bias=np.zeros(n_out), activation=activation)

    def affine(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.n_in:
            raise DataError(f"layer expects {self.n_in} inputs, got {x.shape[-1]}")
        return x @ self.weights.T + self.bias

    def backward_affine(self, x: np.ndarray, dpre: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Gradients (dW, db, dx) of the affine part given dL/d(pre)."""
        dw = dpre.T @ x
        db = dpre.sum(axis=0)
        dx = dpre @ self.weights
        return dw, db, dx

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation)


@dataclass
class ForwardCache:
    """Per-layer values saved by a cached forward pass, tied to its network."""

    owner: "Network"
    x_in: list[np.ndarray]
    pre: list[np.ndarray]
    post: list[np.ndarray]


class Network:
    """An ordered stack of dense layers."""

    def __init__(self, layers: list[DenseLayer]):
        for a, b in zip(layers, layers[1:]):
            if a.n_out != b.n_in:
                raise DataError(f"layer shapes do not compose: {a.n_out} -> {b.n_in}")
        self.layers = list(layers)

    @classmethod
    def build(
        cls,
        sizes: list[int],
        hidden_activation: str = "relu",
        output_activation: str = "identity",
        seed: int = 0,
    ) -> "Network":
        """Create a stack for the given layer sizes, e.g. [2, 256, 128, 10]."""
        if len(sizes) < 2:
            raise ConfigError("need at least input and output sizes")
        rng = np.random.default_rng(seed)
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
            act = output_activation if i == len(sizes) - 2 else hidden_activation
            layers.append(DenseLayer.initialize(n_in, n_out, act, rng))
        return cls(layers)

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def forward(self, x: np.ndarray) -> np.ndarray:
        xb, squeeze = _as_batch(x)
        for layer in self.layers:
            xb = activate(layer.affine(xb), layer.activation)
        return xb[0] if squeeze else xb

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        xb, _ = _as_batch(x)
        cache = ForwardCache(owner=self, x_in=[], pre=[], post=[])
        for layer in self.layers:
            cache.x_in.append(xb)
            pre = layer.affine(xb)
            post = activate(pre, layer.activation)
            cache.pre.append(pre)
            cache.post.append(post)
            xb = post
        return xb, cache

    def backward(self, cache: ForwardCache, grad_out: np.ndarray) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
        """Backpropagate dL/d(output); returns per-layer (dW, db) and dL/d(input)."""
        if cache.owner is not self or len(cache.pre) != len(self.layers):
            raise DataError("cache does not belong to this network")
        g, _ = _as_batch(grad_out)
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            dpre = g * activation_grad(cache.pre[i], cache.post[i], layer.activation)
            dw, db, g = layer.backward_affine(cache.x_in[i], dpre)
            grads[i] = (dw, db)
        return grads, g

    def named_params(self, prefix: str = "net") -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}.layer{i}.weights"] = layer.weights
            out[f"{prefix}.layer{i}.bias"] = layer.bias
        return out

    def copy(self) -> "Network":
        return Network([l.copy() for l in self.layers])

    def params_equal(self, other: "Network") -> bool:
        return len(self.layers) == len(other.layers) and all(
            np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )


# ---------------------------------------------------------------------------
# Losses and the logistic pair
# ---------------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits.

    Accepts a single logit vector with an int label, or a batch with a
    label array. The gradient is (softmax - onehot) / batch_size so that it
    matches the mean loss.
    """
    z, squeeze = _as_batch(logits)
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if y.shape[0] != z.shape[0]:
        raise DataError(f"{z.shape[0]} logit rows but {y.shape[0]} labels")
    if y.size and (y.min() < 0 or y.max() >= z.shape[1]):
        raise DataError("label out of range for logits")
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    logsum = np.log(np.exp(shifted).sum(axis=1)) + zmax[:, 0]
    loss = float(np.mean(logsum - z[np.arange(len(y)), y]))
    grad = softmax(z)
    grad[np.arange(len(y)), y] -= 1.0
    grad /= len(y)
    return loss, (grad[0] if squeeze else grad)


def logistic(x):
    """Elementwise sigma(x) = 1/(1+exp(-x)), overflow-safe."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def inverse_logistic(p, eps: float = 1e-7):
    """Log-odds of p, with p clamped into [eps, 1-eps] first."""
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    out = np.log(p / (1.0 - p))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

@dataclass
class OptimizerConfig:
    kind: str = "sgd"
    learning_rate: float = 0.02
    decay_rate: float = 1.0
    decay_every_epochs: int = 4
    rmsprop_rho: float = 0.9
    rmsprop_epsilon: float = 1e-10

    def __post_init__(self):
        if self.kind not in ("sgd", "rmsprop"):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 < self.rmsprop_rho < 1.0:
            raise ConfigError("rmsprop_rho must be in (0, 1)")
        if self.decay_every_epochs < 1:
            raise ConfigError("decay_every_epochs must be >= 1")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "learning_rate": self.learning_rate,
            "decay_rate": self.decay_rate,
            "decay_every_epochs": self.decay_every_epochs,
            "rmsprop_rho": self.rmsprop_rho,
            "rmsprop_epsilon": self.rmsprop_epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        return cls(**d)


def _check_finite_grads(grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")


class SGD:
    """Plain gradient descent: p <- p - lr * g."""

    def __init__(self, config: OptimizerConfig):
        self.config = config

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], epoch: int = 0) -> None:
        _check_finite_grads(grads)
        lr = self.config.learning_rate
        for name, p in params.items():
            p -= lr * grads[name]


class RMSprop:
    """RMSprop with a stepwise learning-rate schedule.

    The effective rate at a given epoch is
    ``learning_rate * decay_rate ** (epoch // decay_every_epochs)``; the
    squared-gradient accumulator uses ``rho`` smoothing and ``epsilon`` is
    added outside the square root.
    """

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.accum: dict[str, np.ndarray] = {}

    def learning_rate_at(self, epoch: int) -> float:
        c = self.config
        return c.learning_rate * c.decay_rate ** (epoch // c.decay_every_epochs)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], epoch: int = 0) -> None:
        _check_finite_grads(grads)
        lr = self.learning_rate_at(epoch)
        rho = self.config.rmsprop_rho
        eps = self.config.rmsprop_epsilon
        for name, p in params.items():
            g = grads[name]
            acc = self.accum.get(name)
            if acc is None:
                acc = np.zeros_like(p)
                self.accum[name] = acc
            acc *= rho
            acc += (1.0 - rho) * g * g
            p -= lr * g / (np.sqrt(acc) + eps)


def make_optimizer(config: OptimizerConfig):
    return SGD(config) if config.kind == "sgd" else RMSprop(config)


# ---------------------------------------------------------------------------
# Training loop for a plain softmax classifier
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0


def train_classifier(net: Network, x: np.ndarray, labels: np.ndarray, config: TrainConfig) -> list[float]:
    """Mini-batch training with softmax cross-entropy; returns per-epoch mean loss.

    Deterministic for a fixed seed: the epoch shuffles come from a dedicated
    generator and batches are visited in order.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(x) == 0:
        raise DataError("empty training set")
    opt = make_optimizer(config.optimizer)
    params = net.named_params()
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        n_batches = 0
        for start in range(0, len(x), config.batch_size):
            idx = order[start : start + config.batch_size]
            out, cache = net.forward_cached(x[idx])
            loss, grad = softmax_xent(out, labels[idx])
            layer_grads, _ = net.backward(cache, grad)
            grads = {}
            for i, (dw, db) in enumerate(layer_grads):
                grads[f"net.layer{i}.weights"] = dw
                grads[f"net.layer{i}.bias"] = db
            opt.step(params, grads, epoch=epoch)
            total += loss
            n_batches += 1
        history.append(total / n_batches)
    return history


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def finite_difference_check(loss_value_fn, params: dict[str, np.ndarray], analytic: dict[str, np.ndarray], h: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_value_fn`` is called with no arguments and must see the mutated
    parameter arrays. Relative error uses max(|a|, |b|, 1e-6) in the
    denominator so that near-zero gradients do not blow up the ratio.
    """
    worst = 0.0
    for name, p in params.items():
        ana = analytic[name]
        flat = p.reshape(-1)
        aflat = np.asarray(ana).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = loss_value_fn()
            flat[j] = orig - h
            dn = loss_value_fn()
            flat[j] = orig
            num = (up - dn) / (2.0 * h)
            denom = max(abs(num), abs(aflat[j]), 1e-6)
            worst = max(worst, abs(num - aflat[j]) / denom)
    return worst


def grad_check(net: Network, x: np.ndarray, loss_fn, h: float = 1e-5) -> float:
    """Check every network parameter against central differences.

    ``loss_fn`` maps the network output to ``(loss, dloss_doutput)``. Keep
    the network small; cost is two forward passes per parameter.
    """
    out, cache = net.forward_cached(x)
    _, grad_out = loss_fn(out)
    layer_grads, _ = net.backward(cache, grad_out)
    params = net.named_params()
    analytic = {}
    for i, (dw, db) in enumerate(layer_grads):
        analytic[f"net.layer{i}.weights"] = dw
        analytic[f"net.layer{i}.bias"] = db

    def loss_value():
        return loss_fn(net.forward(x))[0]

    return finite_difference_check(loss_value, params, analytic, h=h)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def network_to_dict(net: Network) -> dict:
    return {
        "layers": [
            {
                "n_in": layer.n_in,
                "n_out": layer.n_out,
                "activation": layer.activation,
                "weights": layer.weights.reshape(-1).tolist(),
                "bias": layer.bias.tolist(),
            }
            for layer in net.layers
        ]
    }


def network_from_dict(d: dict) -> Network:
    layers = []
    for spec in d["layers"]:
        w = np.array(spec["weights"], dtype=np.float64).reshape(spec["n_out"], spec["n_in"])
        b = np.array(spec["bias"], dtype=np.float64)
        layers.append(DenseLayer(w, b, spec["activation"]))
    return Network(layers)


def save_checkpoint(path, payload: dict) -> None:
    """Write a checkpoint document. Adds the format-version field."""
    doc = dict(payload)
    doc["format_version"] = CHECKPOINT_VERSION
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"checkpoint {path} is not valid JSON: {e}") from e
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint format_version {doc.get('format_version')!r}")
    return doc
