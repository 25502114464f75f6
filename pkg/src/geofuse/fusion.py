"""Post-processing logit fusion.

A geolocation network (normalized lat/lon in, one logit per label out) is
trained on top of a frozen base classifier: its logits are added to the
per-label log-odds of the base probabilities and the sum goes through a
softmax cross-entropy. The base never sees a gradient, so the geo net
learns only the residual the base leaves behind.

``oracle_fused_posterior`` is the verification hook: with the base output
equal to the true P(L|I) and the geo logits equal to the true log
likelihood ratio, sigma(logit(p) + log R) is exactly the Bayes posterior
P(L|I,G).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .micronet import (
    Network,
    OptimizerConfig,
    inverse_logistic,
    logistic,
    make_optimizer,
    softmax,
    softmax_xent,
)

GEO_HIDDEN_DEFAULT = (256, 128, 128)

# Clamp for the trained path (keeps fused logits bounded); the oracle hook
# uses a much tighter clamp because it must preserve near-certain bases.
FUSE_EPS = 1e-7
ORACLE_EPS = 1e-12


def build_geo_net(n_labels: int, hidden_sizes=GEO_HIDDEN_DEFAULT, seed: int = 0) -> Network:
    """Geo net: 2 inputs, relu hidden stack, linear logits of size C."""
    return Network.build([2, *hidden_sizes, n_labels], hidden_activation="relu", seed=seed)


def fuse_logits(base_probs: np.ndarray, geo_logits: np.ndarray) -> np.ndarray:
    """Per-label log-odds of the base probabilities plus the geo logits."""
    p = np.asarray(base_probs, dtype=np.float64)
    g = np.asarray(geo_logits, dtype=np.float64)
    if p.shape != g.shape:
        raise DataError(f"shape mismatch: base {p.shape} vs geo {g.shape}")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise DataError("base_probs must lie in [0, 1]")
    return inverse_logistic(p, eps=FUSE_EPS) + g


def oracle_fused_posterior(p_label_given_image, log_r):
    """sigma(logit(p) + log R): the exact posterior under conditional independence."""
    return logistic(inverse_logistic(p_label_given_image, eps=ORACLE_EPS) + np.asarray(log_r, dtype=np.float64))


@dataclass
class FusionTrainConfig:
    hidden_sizes: tuple = GEO_HIDDEN_DEFAULT
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(kind="sgd", learning_rate=0.02))
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0


def train_postproc(
    geo_norm: np.ndarray,
    base_probs: np.ndarray,
    labels: np.ndarray,
    config: FusionTrainConfig | None = None,
) -> tuple[Network, list[float]]:
    """Train the geo net on fused logits; the base outputs stay constant.

    ``geo_norm`` is (n, 2) normalized lat/lon, ``base_probs`` the frozen
    base classifier's probabilities for the same rows. Returns the trained
    geo net and the per-epoch mean loss history.
    """
    config = config or FusionTrainConfig()
    geo_norm = np.asarray(geo_norm, dtype=np.float64)
    base_probs = np.asarray(base_probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(geo_norm) == 0:
        raise DataError("empty training set")
    if geo_norm.ndim != 2 or geo_norm.shape[1] != 2:
        raise DataError(f"geo_norm must be (n, 2), got {geo_norm.shape}")
    if not (len(geo_norm) == len(base_probs) == len(labels)):
        raise DataError("geo/base/label row counts differ")

    n_labels = base_probs.shape[1]
    net = build_geo_net(n_labels, config.hidden_sizes, seed=config.seed)
    base_logits = inverse_logistic(base_probs, eps=FUSE_EPS)

    opt = make_optimizer(config.optimizer)
    params = net.named_params()
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(labels))
        total, n_batches = 0.0, 0
        for start in range(0, len(labels), config.batch_size):
            idx = order[start : start + config.batch_size]
            geo_logits, cache = net.forward_cached(geo_norm[idx])
            fused = base_logits[idx] + geo_logits
            loss, dfused = softmax_xent(fused, labels[idx])
            # d(fused)/d(geo_logits) is the identity; nothing flows into the base.
            layer_grads, _ = net.backward(cache, dfused)
            grads = {}
            for i, (dw, db) in enumerate(layer_grads):
                grads[f"net.layer{i}.weights"] = dw
                grads[f"net.layer{i}.bias"] = db
            opt.step(params, grads, epoch=epoch)
            total += loss
            n_batches += 1
        history.append(total / n_batches)
    return net, history


def predict_fused(geo_net: Network, base_probs: np.ndarray, geo_norm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Labels and softmax probabilities from fused logits.

    Accepts a single example or a batch; ties break to the lowest index.
    """
    base_probs = np.asarray(base_probs, dtype=np.float64)
    geo_norm = np.asarray(geo_norm, dtype=np.float64)
    single = base_probs.ndim == 1
    if single:
        base_probs = base_probs[None, :]
        geo_norm = geo_norm[None, :]
    geo_logits = geo_net.forward(geo_norm)
    fused = fuse_logits(base_probs, geo_logits)
    probs = softmax(fused)
    labels = probs.argmax(axis=1)
    if single:
        return int(labels[0]), probs[0]
    return labels, probs
