"""Synthetic worlds with exact Bayes oracles.

Each label owns a habitat (a mixture of isotropic 2-D Gaussians over
latitude/longitude degrees, wrapped in longitude and truncated to valid
latitudes) and an appearance prototype in feature space. Observations draw
a label from a Zipf distribution, a location from the label's habitat, and
features from an isotropic Gaussian around the prototype. Because features
and location are sampled independently given the label, appearance and
geography are conditionally independent by construction, and every
posterior quantity has a closed form.

The eval split can mix each habitat with a uniform geographic distribution
(``mismatch_epsilon``) to model train/test prior mismatch.

All density work happens in log space; quantities only leave log space at
the boundaries.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import ConfigError, DataError, NumericError

SPLITS = ("train", "eval")

# Uniform density over the lat/lon rectangle, per square degree.
_UNIFORM_LOG_DENSITY = -math.log(180.0 * 360.0)


@dataclass(frozen=True)
class HabitatComponent:
    """One isotropic Gaussian patch of a habitat, in degrees."""

    lat_deg: float
    lon_deg: float
    sigma_deg: float
    weight: float


@dataclass
class WorldSpec:
    """Full generative description of a synthetic world."""

    n_labels: int
    n_features: int
    habitats: list[list[HabitatComponent]]
    prototypes: np.ndarray
    appearance_sigma: float
    zipf_exponent: float = 1.5
    confusion_pairs: list[tuple[int, int]] = field(default_factory=list)
    mismatch_epsilon: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        if self.prototypes.shape != (self.n_labels, self.n_features):
            raise ConfigError(
                f"prototypes must be ({self.n_labels}, {self.n_features}), got {self.prototypes.shape}"
            )
        if len(self.habitats) != self.n_labels:
            raise ConfigError("need one habitat mixture per label")
        for label, comps in enumerate(self.habitats):
            if not comps:
                raise ConfigError(f"label {label} has an empty habitat mixture")
            w = sum(c.weight for c in comps)
            if abs(w - 1.0) > 1e-9:
                raise ConfigError(f"habitat weights for label {label} sum to {w}, expected 1")
            for c in comps:
                if c.sigma_deg <= 0:
                    raise ConfigError("habitat sigma_deg must be positive")
        if not 0.0 <= self.mismatch_epsilon <= 1.0:
            raise ConfigError("mismatch_epsilon must be in [0, 1]")
        if self.appearance_sigma < 0:
            raise ConfigError("appearance_sigma must be non-negative")

    def label_frequencies(self) -> np.ndarray:
        """Zipf label marginal: P(l) proportional to 1/(l+1)^s."""
        ranks = np.arange(1, self.n_labels + 1, dtype=np.float64)
        w = ranks ** (-self.zipf_exponent)
        return w / w.sum()

    def lat_truncation(self, label: int) -> float:
        """Probability mass the raw habitat mixture puts on valid latitudes."""
        z = 0.0
        for c in self.habitats[label]:
            hi = 0.5 * (1.0 + math.erf((90.0 - c.lat_deg) / (c.sigma_deg * math.sqrt(2.0))))
            lo = 0.5 * (1.0 + math.erf((-90.0 - c.lat_deg) / (c.sigma_deg * math.sqrt(2.0))))
            z += c.weight * (hi - lo)
        return z


@dataclass
class OracleOutputs:
    """Exact Bayes quantities at one (features, geolocation) query point."""

    p_label_given_image: np.ndarray
    p_geo_given_label: np.ndarray
    log_r: np.ndarray
    posterior: np.ndarray


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------

def _logsumexp(a: np.ndarray, axis=None) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


def log_habitat_density(spec: WorldSpec, label: int, lat, lon) -> np.ndarray:
    """Log density of the label's habitat at (lat, lon), train distribution.

    Longitude is wrapped (one image copy either side covers any practical
    sigma) and latitude truncation is renormalized in closed form.
    """
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    comps = spec.habitats[label]
    terms = np.empty((len(comps) * 3,) + lat.shape)
    i = 0
    for c in comps:
        inv2s2 = 1.0 / (2.0 * c.sigma_deg**2)
        log_norm = math.log(c.weight) - math.log(2.0 * math.pi * c.sigma_deg**2)
        dlat2 = (lat - c.lat_deg) ** 2
        for shift in (-360.0, 0.0, 360.0):
            dlon2 = (lon + shift - c.lon_deg) ** 2
            terms[i] = log_norm - (dlat2 + dlon2) * inv2s2
            i += 1
    out = _logsumexp(terms, axis=0) - math.log(spec.lat_truncation(label))
    return out


def log_geo_density(spec: WorldSpec, label: int, lat, lon, split: str = "train") -> np.ndarray:
    """Log P(G|label) for the given split (eval mixes in the uniform floor)."""
    if split not in SPLITS:
        raise ConfigError(f"split must be one of {SPLITS}, got {split!r}")
    ld = log_habitat_density(spec, label, lat, lon)
    eps = spec.mismatch_epsilon if split == "eval" else 0.0
    if eps <= 0.0:
        return ld
    if eps >= 1.0:
        return np.full_like(ld, _UNIFORM_LOG_DENSITY)
    return np.logaddexp(math.log1p(-eps) + ld, math.log(eps) + _UNIFORM_LOG_DENSITY)


def log_geo_density_matrix(spec: WorldSpec, lat: np.ndarray, lon: np.ndarray, split: str = "train") -> np.ndarray:
    """(n, C) matrix of log P(G_i | label)."""
    lat = np.atleast_1d(np.asarray(lat, dtype=np.float64))
    lon = np.atleast_1d(np.asarray(lon, dtype=np.float64))
    return np.stack([log_geo_density(spec, l, lat, lon, split) for l in range(spec.n_labels)], axis=1)


def log_appearance_scores(spec: WorldSpec, features: np.ndarray) -> np.ndarray:
    """(n, C) unnormalized log P(label | features): log pi_l - ||I - proto_l||^2 / (2 sigma^2).

    With appearance_sigma = 0 the likelihood degenerates to exact prototype
    matches; a point matching no prototype is a degenerate query.
    """
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    log_pi = np.log(spec.label_frequencies())
    if spec.appearance_sigma == 0.0:
        match = np.all(f[:, None, :] == spec.prototypes[None, :, :], axis=2)
        if not match.any(axis=1).all():
            raise NumericError("appearance_sigma = 0 and features match no prototype")
        return np.where(match, log_pi[None, :], -np.inf)
    d2 = ((f[:, None, :] - spec.prototypes[None, :, :]) ** 2).sum(axis=2)
    return log_pi[None, :] - d2 / (2.0 * spec.appearance_sigma**2)


def _softmax_rows(logx: np.ndarray) -> np.ndarray:
    m = logx.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(logx - m)
    return e / e.sum(axis=1, keepdims=True)


def oracle_batch(spec: WorldSpec, features: np.ndarray, lat: np.ndarray, lon: np.ndarray, split: str = "train"):
    """Vectorized oracle over n points.

    Returns (p_label_given_image, p_geo_given_label, log_r, posterior), each
    an (n, C) array. log R uses the complement geography density implied by
    the joint: the remaining labels are weighted by their image posterior,
    which is what makes sigma(logit(p) + log R) reproduce the joint
    posterior identically.
    """
    la = log_appearance_scores(spec, features)
    log_pli = la - _logsumexp(la, axis=1)[:, None]
    pli = np.exp(log_pli)
    lg = log_geo_density_matrix(spec, lat, lon, split)

    log_joint = log_pli + lg
    posterior = _softmax_rows(log_joint)

    n, c = log_joint.shape
    if c < 2:
        raise ConfigError("oracle log R needs at least two labels")
    # Exclude-self logsumexp over labels, for the joint and the image posterior.
    log_joint_others = np.empty_like(log_joint)
    log_pli_others = np.empty_like(log_joint)
    for l in range(c):
        keep = [j for j in range(c) if j != l]
        log_joint_others[:, l] = _logsumexp(log_joint[:, keep], axis=1)
        log_pli_others[:, l] = _logsumexp(log_pli[:, keep], axis=1)
    with np.errstate(invalid="ignore"):
        log_r = lg - (log_joint_others - log_pli_others)
    # Image posterior exactly 1 leaves no complement mass; the geographic
    # evidence ratio diverges and sigma(+inf) = 1 matches the posterior.
    log_r = np.where(np.isneginf(log_pli_others), np.inf, log_r)

    return pli, np.exp(lg), log_r, posterior


def oracle(spec: WorldSpec, features: np.ndarray, geo, split: str = "train") -> OracleOutputs:
    """Exact Bayes quantities for one observation.

    ``geo`` may be a GeoPoint or a (lat, lon) pair in degrees.
    """
    lat = getattr(geo, "lat_deg", None)
    if lat is None:
        lat, lon = float(geo[0]), float(geo[1])
    else:
        lon = geo.lon_deg
    pli, pg, log_r, post = oracle_batch(
        spec,
        np.asarray(features, dtype=np.float64)[None, :],
        np.array([lat]),
        np.array([lon]),
        split,
    )
    return OracleOutputs(
        p_label_given_image=pli[0],
        p_geo_given_label=pg[0],
        log_r=log_r[0],
        posterior=post[0],
    )


def bayes_accuracy(spec: WorldSpec, dataset: Dataset, split: str | None = None) -> float:
    """Top-1 accuracy of the exact posterior argmax; the model ceiling."""
    if len(dataset) == 0:
        raise DataError("empty dataset")
    split = split or dataset.split
    _, _, _, posterior = oracle_batch(spec, dataset.features, dataset.lat, dataset.lon, split)
    return float(np.mean(posterior.argmax(axis=1) == dataset.labels))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _sample_habitat(spec: WorldSpec, label: int, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw n points from the label's habitat: wrapped lon, truncated lat."""
    comps = spec.habitats[label]
    weights = np.array([c.weight for c in comps])
    means = np.array([[c.lat_deg, c.lon_deg] for c in comps])
    sigmas = np.array([c.sigma_deg for c in comps])
    lat = np.empty(n)
    lon = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        k = rng.choice(len(comps), size=todo.size, p=weights)
        draw = means[k] + rng.standard_normal((todo.size, 2)) * sigmas[k][:, None]
        ok = np.abs(draw[:, 0]) <= 90.0
        idx = todo[ok]
        lat[idx] = draw[ok, 0]
        lon[idx] = draw[ok, 1]
        todo = todo[~ok]
    lon = np.mod(lon + 180.0, 360.0) - 180.0
    return lat, lon


def generate(spec: WorldSpec, n: int, split: str = "train") -> Dataset:
    """Sample n observations; deterministic given (spec.seed, split)."""
    if n <= 0:
        raise DataError(f"need a positive sample count, got {n}")
    if split not in SPLITS:
        raise ConfigError(f"split must be one of {SPLITS}, got {split!r}")
    rng = np.random.default_rng([spec.seed, SPLITS.index(split)])
    freqs = spec.label_frequencies()
    labels = rng.choice(spec.n_labels, size=n, p=freqs)

    uniform_mask = np.zeros(n, dtype=bool)
    if split == "eval" and spec.mismatch_epsilon > 0:
        uniform_mask = rng.random(n) < spec.mismatch_epsilon

    lat = np.empty(n)
    lon = np.empty(n)
    for label in range(spec.n_labels):
        sel = np.flatnonzero((labels == label) & ~uniform_mask)
        if sel.size:
            lat[sel], lon[sel] = _sample_habitat(spec, label, sel.size, rng)
    n_uni = int(uniform_mask.sum())
    if n_uni:
        lat[uniform_mask] = rng.uniform(-90.0, 90.0, size=n_uni)
        lon[uniform_mask] = rng.uniform(-180.0, 180.0, size=n_uni)

    features = spec.prototypes[labels] + spec.appearance_sigma * rng.standard_normal((n, spec.n_features))
    return Dataset(
        labels=labels.astype(np.int64),
        lat=lat,
        lon=lon,
        features=features,
        n_labels=spec.n_labels,
        split=split,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def world_spec_to_dict(spec: WorldSpec) -> dict:
    return {
        "n_labels": spec.n_labels,
        "n_features": spec.n_features,
        "habitats": [
            [
                {"lat_deg": c.lat_deg, "lon_deg": c.lon_deg, "sigma_deg": c.sigma_deg, "weight": c.weight}
                for c in comps
            ]
            for comps in spec.habitats
        ],
        "prototypes": spec.prototypes.tolist(),
        "appearance_sigma": spec.appearance_sigma,
        "zipf_exponent": spec.zipf_exponent,
        "confusion_pairs": [list(p) for p in spec.confusion_pairs],
        "mismatch_epsilon": spec.mismatch_epsilon,
        "seed": spec.seed,
    }


def world_spec_from_dict(d: dict) -> WorldSpec:
    try:
        return WorldSpec(
            n_labels=int(d["n_labels"]),
            n_features=int(d["n_features"]),
            habitats=[
                [HabitatComponent(**c) for c in comps]
                for comps in d["habitats"]
            ],
            prototypes=np.asarray(d["prototypes"], dtype=np.float64),
            appearance_sigma=float(d["appearance_sigma"]),
            zipf_exponent=float(d.get("zipf_exponent", 1.5)),
            confusion_pairs=[tuple(p) for p in d.get("confusion_pairs", [])],
            mismatch_epsilon=float(d.get("mismatch_epsilon", 0.0)),
            seed=int(d.get("seed", 0)),
        )
    except (KeyError, TypeError) as e:
        raise ConfigError(f"bad world spec document: {e}") from e


def save_world_spec(spec: WorldSpec, path) -> None:
    Path(path).write_text(json.dumps(world_spec_to_dict(spec), sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_world_spec(path) -> WorldSpec:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"world spec file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"world spec {path} is not valid JSON: {e}") from e
    return world_spec_from_dict(doc)


# ---------------------------------------------------------------------------
# Ready-made worlds used by the experiment suites
# ---------------------------------------------------------------------------

def make_world(
    n_labels: int,
    n_features: int,
    seed: int = 0,
    n_components: int = 1,
    habitat_sigma: float = 8.0,
    prototype_scale: float = 1.0,
    appearance_sigma: float = 1.0,
    zipf_exponent: float = 1.5,
    n_confusion_pairs: int = 0,
    confusion_pairs: list[tuple[int, int]] | None = None,
    mismatch_epsilon: float = 0.0,
    lat_band: float = 55.0,
    paired_habitat_separation: float | None = None,
) -> WorldSpec:
    """Random world builder.

    Habitat component means are scattered inside |lat| <= lat_band.
    Confusion pairs share a prototype exactly; by default pair k couples
    labels (2k, 2k+1), or pass ``confusion_pairs`` explicitly. When
    ``paired_habitat_separation`` is set, the members of each pair get
    habitats pushed that many degrees of longitude apart so geography can
    disambiguate what appearance cannot.
    """
    rng = np.random.default_rng(seed)
    prototypes = rng.standard_normal((n_labels, n_features)) * prototype_scale
    pairs = confusion_pairs if confusion_pairs is not None else [(2 * i, 2 * i + 1) for i in range(n_confusion_pairs)]
    pairs = [(int(a), int(b)) for a, b in pairs]
    for a, b in pairs:
        if not (0 <= a < n_labels and 0 <= b < n_labels) or a == b:
            raise ConfigError(f"bad confusion pair ({a}, {b})")
        prototypes[b] = prototypes[a]

    habitats: list[list[HabitatComponent]] = []
    for label in range(n_labels):
        w = rng.dirichlet(np.ones(n_components)) if n_components > 1 else np.array([1.0])
        comps = []
        for k in range(n_components):
            comps.append(
                HabitatComponent(
                    lat_deg=float(rng.uniform(-lat_band, lat_band)),
                    lon_deg=float(rng.uniform(-180.0, 180.0)),
                    sigma_deg=float(habitat_sigma * rng.uniform(0.8, 1.2)),
                    weight=float(w[k]),
                )
            )
        habitats.append(comps)

    if paired_habitat_separation is not None:
        for a, b in pairs:
            base = habitats[a][0]
            habitats[b] = [
                HabitatComponent(
                    lat_deg=-base.lat_deg,
                    lon_deg=float(np.mod(base.lon_deg + paired_habitat_separation + 180.0, 360.0) - 180.0),
                    sigma_deg=base.sigma_deg,
                    weight=1.0,
                )
            ]
            habitats[a] = [HabitatComponent(base.lat_deg, base.lon_deg, base.sigma_deg, 1.0)]

    return WorldSpec(
        n_labels=n_labels,
        n_features=n_features,
        habitats=habitats,
        prototypes=prototypes,
        appearance_sigma=appearance_sigma,
        zipf_exponent=zipf_exponent,
        confusion_pairs=pairs,
        mismatch_epsilon=mismatch_epsilon,
        seed=seed,
    )


def noise_geo_world(n_labels: int = 6, n_features: int = 6, seed: int = 7) -> WorldSpec:
    """All labels share one habitat, so geography carries no information."""
    spec = make_world(
        n_labels=n_labels,
        n_features=n_features,
        seed=seed,
        habitat_sigma=20.0,
        appearance_sigma=1.2,
        zipf_exponent=0.8,
    )
    shared = [HabitatComponent(lat_deg=10.0, lon_deg=20.0, sigma_deg=25.0, weight=1.0)]
    spec.habitats = [list(shared) for _ in range(n_labels)]
    return spec


def geo_separable_world(seed: int = 11, mismatch_epsilon: float = 0.0) -> WorldSpec:
    """Confusion pairs everywhere, habitats far apart: geography resolves
    what appearance cannot."""
    return make_world(
        n_labels=8,
        n_features=8,
        seed=seed,
        habitat_sigma=7.0,
        prototype_scale=1.0,
        appearance_sigma=0.9,
        zipf_exponent=1.2,
        n_confusion_pairs=4,
        mismatch_epsilon=mismatch_epsilon,
        paired_habitat_separation=140.0,
    )


def long_tail_world(seed: int = 17) -> WorldSpec:
    """Pronounced Zipf tail with each head label visually confusable with a
    tail label; their habitats are disjoint, so geolocation is what rescues
    the tail."""
    n_labels = 12
    pairs = [(i, i + n_labels // 2) for i in range(n_labels // 2)]
    return make_world(
        n_labels=n_labels,
        n_features=8,
        seed=seed,
        habitat_sigma=7.0,
        prototype_scale=1.0,
        appearance_sigma=0.9,
        zipf_exponent=1.5,
        confusion_pairs=pairs,
        paired_habitat_separation=150.0,
    )
