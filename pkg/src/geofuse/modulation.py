"""Feature modulation: geo features injected into intermediate base features.

Geolocation runs through one or two small trunks (one for the additive
term beta, a separate one for the multiplicative term gamma when the
variant uses it). Per modulated layer, a linear projection with no
activation reshapes the trunk output to the layer width. Six modulation
rules are supported; writing R for relu, S for sigmoid, F for the
pre-activation feature and R(F) for the post-activation feature:

    film               R(gamma * F + beta)     (modulates before activation)
    relu_gamma_add     R(gamma) * R(F) + R(beta)
    sigmoid_gamma_add  S(gamma) * R(F) + R(beta)
    sigmoid_gamma_only S(gamma) * R(F)
    add_relu_beta      R(F) + R(beta)
    add_raw_beta       R(F) + beta

Beta projections start at zero and gamma projections at the multiplicative
identity (bias 1) where the variant applies gamma raw or through relu, so
film, relu_gamma_add, add_relu_beta and add_raw_beta reproduce the base
network exactly at initialization. The sigmoid-gamma variants start at
S(0) = 0.5 and do not (there is no finite pre-sigmoid identity).

The whole stack (base copy, trunks, projections) trains jointly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .micronet import (
    DenseLayer,
    ForwardCache,
    Network,
    OptimizerConfig,
    activate,
    activation_grad,
    logistic,
    make_optimizer,
    network_from_dict,
    network_to_dict,
    softmax_xent,
)

VARIANTS = (
    "film",
    "relu_gamma_add",
    "sigmoid_gamma_add",
    "sigmoid_gamma_only",
    "add_relu_beta",
    "add_raw_beta",
)

GAMMA_VARIANTS = frozenset({"film", "relu_gamma_add", "sigmoid_gamma_add", "sigmoid_gamma_only"})
BETA_VARIANTS = frozenset(set(VARIANTS) - {"sigmoid_gamma_only"})
IDENTITY_AT_INIT = frozenset({"film", "relu_gamma_add", "add_relu_beta", "add_raw_beta"})

GEO_TRUNK_HIDDEN_DEFAULT = (128, 256)


def _check_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown modulation variant {variant!r}; choose from {VARIANTS}")


def apply_variant(f_pre, f_post, gamma, beta, variant: str) -> np.ndarray:
    """Apply one modulation rule. film uses f_pre, the rest use f_post."""
    _check_variant(variant)
    ref = f_pre if variant == "film" else f_post
    for name, arr in (("gamma", gamma), ("beta", beta)):
        if arr is not None and np.shape(arr) != np.shape(ref):
            raise DataError(f"{name} shape {np.shape(arr)} does not match feature shape {np.shape(ref)}")
    if variant == "film":
        return np.maximum(0.0, gamma * f_pre + beta)
    if variant == "relu_gamma_add":
        return np.maximum(0.0, gamma) * f_post + np.maximum(0.0, beta)
    if variant == "sigmoid_gamma_add":
        return logistic(gamma) * f_post + np.maximum(0.0, beta)
    if variant == "sigmoid_gamma_only":
        return logistic(gamma) * f_post
    if variant == "add_relu_beta":
        return f_post + np.maximum(0.0, beta)
    return f_post + beta  # add_raw_beta


def _variant_backward(dout, f_pre, f_post, gamma, beta, variant):
    """Partials (df_pre, dgamma, dbeta) of one modulation rule.

    Relu subgradients at exactly 0 are 1, matching micronet, so
    zero-initialized beta projections are trainable.
    """
    if variant == "film":
        mask = (gamma * f_pre + beta) >= 0.0
        dz = dout * mask
        return dz * gamma, dz * f_pre, dz
    post_mask = (f_pre >= 0.0).astype(np.float64)
    if variant == "relu_gamma_add":
        dpost = dout * np.maximum(0.0, gamma)
        return dpost * post_mask, dout * f_post * (gamma >= 0.0), dout * (beta >= 0.0)
    if variant == "sigmoid_gamma_add":
        s = logistic(gamma)
        dpost = dout * s
        return dpost * post_mask, dout * f_post * s * (1.0 - s), dout * (beta >= 0.0)
    if variant == "sigmoid_gamma_only":
        s = logistic(gamma)
        return dout * s * post_mask, dout * f_post * s * (1.0 - s), None
    if variant == "add_relu_beta":
        return dout * post_mask, None, dout * (beta >= 0.0)
    return dout * post_mask, None, dout  # add_raw_beta


@dataclass
class ModulatedNet:
    """A base network with geo-conditioned modulation at masked hidden layers."""

    base: Network
    variant: str
    layer_mask: tuple[int, ...]
    trunk_beta: Network | None
    trunk_gamma: Network | None
    proj_beta: dict[int, DenseLayer]
    proj_gamma: dict[int, DenseLayer]

    @property
    def n_labels(self) -> int:
        return self.base.n_out

    def named_params(self) -> dict[str, np.ndarray]:
        out = self.base.named_params("base")
        if self.trunk_beta is not None:
            out.update(self.trunk_beta.named_params("trunk_beta"))
        if self.trunk_gamma is not None:
            out.update(self.trunk_gamma.named_params("trunk_gamma"))
        for idx, layer in self.proj_beta.items():
            out[f"proj_beta.{idx}.weights"] = layer.weights
            out[f"proj_beta.{idx}.bias"] = layer.bias
        for idx, layer in self.proj_gamma.items():
            out[f"proj_gamma.{idx}.weights"] = layer.weights
            out[f"proj_gamma.{idx}.bias"] = layer.bias
        return out


def default_layer_mask(base: Network) -> tuple[int, ...]:
    """Upper half of the hidden layers (the final logits layer is never modulated)."""
    n_hidden = len(base.layers) - 1
    if n_hidden < 1:
        raise ConfigError("base network needs at least one hidden layer to modulate")
    return tuple(range(n_hidden // 2, n_hidden))


def build_modulated(
    base: Network,
    variant: str,
    layer_mask: tuple[int, ...] | None = None,
    geo_hidden: tuple[int, ...] = GEO_TRUNK_HIDDEN_DEFAULT,
    seed: int = 0,
) -> ModulatedNet:
    """Copy the base and attach freshly initialized geo trunks and projections.

    The copy starts at the identity for variants that have one (see module
    docstring); the base argument itself is never mutated.
    """
    _check_variant(variant)
    mask = default_layer_mask(base) if layer_mask is None else tuple(sorted(set(int(i) for i in layer_mask)))
    n_hidden = len(base.layers) - 1
    for i in mask:
        if not 0 <= i < n_hidden:
            raise ConfigError(f"layer_mask index {i} outside hidden range [0, {n_hidden})")
        if base.layers[i].activation != "relu":
            raise ConfigError("modulated layers must use relu activation")
    if not mask:
        raise ConfigError("layer_mask must select at least one hidden layer")

    rng = np.random.default_rng(seed)
    trunk_out = geo_hidden[-1]

    def fresh_trunk(salt: int) -> Network:
        return Network.build([2, *geo_hidden], hidden_activation="relu", output_activation="relu", seed=int(rng.integers(2**31)) + salt)

    trunk_beta = fresh_trunk(0) if variant in BETA_VARIANTS else None
    trunk_gamma = fresh_trunk(1) if variant in GAMMA_VARIANTS else None

    proj_beta: dict[int, DenseLayer] = {}
    proj_gamma: dict[int, DenseLayer] = {}
    gamma_identity = 1.0 if variant in ("film", "relu_gamma_add") else 0.0
    for i in mask:
        width = base.layers[i].n_out
        if trunk_beta is not None:
            proj_beta[i] = DenseLayer(np.zeros((width, trunk_out)), np.zeros(width), "identity")
        if trunk_gamma is not None:
            proj_gamma[i] = DenseLayer(np.zeros((width, trunk_out)), np.full(width, gamma_identity), "identity")

    return ModulatedNet(
        base=base.copy(),
        variant=variant,
        layer_mask=mask,
        trunk_beta=trunk_beta,
        trunk_gamma=trunk_gamma,
        proj_beta=proj_beta,
        proj_gamma=proj_gamma,
    )


def beta_zero_init(mnet: ModulatedNet) -> ModulatedNet:
    """Reset projections to the safe start: beta = 0, gamma at its identity."""
    gamma_identity = 1.0 if mnet.variant in ("film", "relu_gamma_add") else 0.0
    for layer in mnet.proj_beta.values():
        layer.weights[:] = 0.0
        layer.bias[:] = 0.0
    for layer in mnet.proj_gamma.values():
        layer.weights[:] = 0.0
        layer.bias[:] = gamma_identity
    return mnet


@dataclass
class ModCache:
    trunk_beta_cache: ForwardCache | None
    trunk_gamma_cache: ForwardCache | None
    t_beta: np.ndarray | None
    t_gamma: np.ndarray | None
    x_in: list[np.ndarray]
    pre: list[np.ndarray]
    post: list[np.ndarray]
    gamma: dict[int, np.ndarray]
    beta: dict[int, np.ndarray]


def forward_modulated(mnet: ModulatedNet, features: np.ndarray, geo_norm: np.ndarray, with_cache: bool = False):
    """Logits of the modulated network for a batch of (features, normalized geo)."""
    x = np.asarray(features, dtype=np.float64)
    g = np.asarray(geo_norm, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x, g = x[None, :], g[None, :]
    if g.shape != (x.shape[0], 2):
        raise DataError(f"geo_norm must be (n, 2) matching features, got {g.shape}")

    tb_cache = tg_cache = None
    t_beta = t_gamma = None
    if mnet.trunk_beta is not None:
        t_beta, tb_cache = mnet.trunk_beta.forward_cached(g)
    if mnet.trunk_gamma is not None:
        t_gamma, tg_cache = mnet.trunk_gamma.forward_cached(g)

    cache = ModCache(tb_cache, tg_cache, t_beta, t_gamma, [], [], [], {}, {})
    for i, layer in enumerate(mnet.base.layers):
        cache.x_in.append(x)
        pre = layer.affine(x)
        cache.pre.append(pre)
        if i in mnet.layer_mask:
            f_post = np.maximum(0.0, pre)
            gamma = mnet.proj_gamma[i].affine(t_gamma) if i in mnet.proj_gamma else None
            beta = mnet.proj_beta[i].affine(t_beta) if i in mnet.proj_beta else None
            if gamma is not None:
                cache.gamma[i] = gamma
            if beta is not None:
                cache.beta[i] = beta
            out = apply_variant(pre, f_post, gamma, beta, mnet.variant)
        else:
            out = activate(pre, layer.activation)
        cache.post.append(out)
        x = out

    logits = x[0] if single else x
    if with_cache:
        return logits, cache
    return logits


def backward_modulated(mnet: ModulatedNet, cache: ModCache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients for every parameter of the modulated stack."""
    grads: dict[str, np.ndarray] = {}
    g = np.atleast_2d(np.asarray(dlogits, dtype=np.float64))
    d_t_beta = np.zeros_like(cache.t_beta) if cache.t_beta is not None else None
    d_t_gamma = np.zeros_like(cache.t_gamma) if cache.t_gamma is not None else None

    for i in range(len(mnet.base.layers) - 1, -1, -1):
        layer = mnet.base.layers[i]
        pre = cache.pre[i]
        if i in mnet.layer_mask:
            f_post = np.maximum(0.0, pre)
            gamma = cache.gamma.get(i)
            beta = cache.beta.get(i)
            dpre, dgamma, dbeta = _variant_backward(g, pre, f_post, gamma, beta, mnet.variant)
            if dgamma is not None:
                proj = mnet.proj_gamma[i]
                grads[f"proj_gamma.{i}.weights"] = dgamma.T @ cache.t_gamma
                grads[f"proj_gamma.{i}.bias"] = dgamma.sum(axis=0)
                d_t_gamma += dgamma @ proj.weights
            if dbeta is not None:
                proj = mnet.proj_beta[i]
                grads[f"proj_beta.{i}.weights"] = dbeta.T @ cache.t_beta
                grads[f"proj_beta.{i}.bias"] = dbeta.sum(axis=0)
                d_t_beta += dbeta @ proj.weights
        else:
            dpre = g * activation_grad(pre, cache.post[i], layer.activation)
        dw, db, g = layer.backward_affine(cache.x_in[i], dpre)
        grads[f"base.layer{i}.weights"] = dw
        grads[f"base.layer{i}.bias"] = db

    if d_t_beta is not None:
        trunk_grads, _ = mnet.trunk_beta.backward(cache.trunk_beta_cache, d_t_beta)
        for i, (dw, db) in enumerate(trunk_grads):
            grads[f"trunk_beta.layer{i}.weights"] = dw
            grads[f"trunk_beta.layer{i}.bias"] = db
    if d_t_gamma is not None:
        trunk_grads, _ = mnet.trunk_gamma.backward(cache.trunk_gamma_cache, d_t_gamma)
        for i, (dw, db) in enumerate(trunk_grads):
            grads[f"trunk_gamma.layer{i}.weights"] = dw
            grads[f"trunk_gamma.layer{i}.bias"] = db
    return grads


@dataclass
class ModulationTrainConfig:
    geo_hidden: tuple = GEO_TRUNK_HIDDEN_DEFAULT
    layer_mask: tuple | None = None
    optimizer: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig(
            kind="rmsprop", learning_rate=0.0045, decay_rate=0.94, decay_every_epochs=4
        )
    )
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0


def train_joint(
    features: np.ndarray,
    geo_norm: np.ndarray,
    labels: np.ndarray,
    init_base: Network,
    variant: str,
    config: ModulationTrainConfig | None = None,
) -> tuple[ModulatedNet, list[float]]:
    """Train base copy, trunks and projections together, end to end.

    The base initialization is copied from ``init_base`` (which is left
    untouched); geo parts start fresh at the variant's safe initialization.
    """
    config = config or ModulationTrainConfig()
    features = np.asarray(features, dtype=np.float64)
    geo_norm = np.asarray(geo_norm, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(features) == 0:
        raise DataError("empty training set")
    if not (len(features) == len(geo_norm) == len(labels)):
        raise DataError("feature/geo/label row counts differ")

    mnet = build_modulated(init_base, variant, layer_mask=config.layer_mask, geo_hidden=config.geo_hidden, seed=config.seed)
    params = mnet.named_params()
    opt = make_optimizer(config.optimizer)
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(labels))
        total, n_batches = 0.0, 0
        for start in range(0, len(labels), config.batch_size):
            idx = order[start : start + config.batch_size]
            logits, cache = forward_modulated(mnet, features[idx], geo_norm[idx], with_cache=True)
            loss, dlogits = softmax_xent(logits, labels[idx])
            grads = backward_modulated(mnet, cache, dlogits)
            opt.step(params, grads, epoch=epoch)
            total += loss
            n_batches += 1
        history.append(total / n_batches)
    return mnet, history


# ---------------------------------------------------------------------------
# Checkpointing (extends the plain network format)
# ---------------------------------------------------------------------------

def modulated_to_dict(mnet: ModulatedNet) -> dict:
    def proj_dict(projs: dict[int, DenseLayer]) -> dict:
        return {
            str(i): {
                "n_in": l.n_in,
                "n_out": l.n_out,
                "weights": l.weights.reshape(-1).tolist(),
                "bias": l.bias.tolist(),
            }
            for i, l in projs.items()
        }

    return {
        "variant": mnet.variant,
        "layer_mask": list(mnet.layer_mask),
        "base": network_to_dict(mnet.base),
        "trunk_beta": network_to_dict(mnet.trunk_beta) if mnet.trunk_beta is not None else None,
        "trunk_gamma": network_to_dict(mnet.trunk_gamma) if mnet.trunk_gamma is not None else None,
        "proj_beta": proj_dict(mnet.proj_beta),
        "proj_gamma": proj_dict(mnet.proj_gamma),
    }


def modulated_from_dict(d: dict) -> ModulatedNet:
    def projs(sub: dict) -> dict[int, DenseLayer]:
        out = {}
        for key, spec in sub.items():
            w = np.array(spec["weights"], dtype=np.float64).reshape(spec["n_out"], spec["n_in"])
            out[int(key)] = DenseLayer(w, np.array(spec["bias"], dtype=np.float64), "identity")
        return out

    return ModulatedNet(
        base=network_from_dict(d["base"]),
        variant=d["variant"],
        layer_mask=tuple(d["layer_mask"]),
        trunk_beta=network_from_dict(d["trunk_beta"]) if d.get("trunk_beta") else None,
        trunk_gamma=network_from_dict(d["trunk_gamma"]) if d.get("trunk_gamma") else None,
        proj_beta=projs(d.get("proj_beta", {})),
        proj_gamma=projs(d.get("proj_gamma", {})),
    )
