"""Radius-restricted label histograms and the two prior-based inference rules.

Both rules rescore the probability vector of a frozen base classifier
using the labels of training observations within ``theta_miles`` of the
query location: Bayesian rescoring multiplies by the local label
frequency, whitelist gating zeroes labels absent from the neighborhood.
Scores are not renormalized; the argmax is unaffected either way.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConfigError, DataError
from .geodesy import GeoPoint, SpatialIndex, radius_query

MODES = ("bayesian", "whitelist")
FALLBACKS = ("image_only", "abstain")

# Sentinel label returned by predictions that abstain.
ABSTAIN = -1


@dataclass
class LabelHistogram:
    """Per-label counts of training observations within a radius."""

    counts: np.ndarray
    theta_miles: float
    center: GeoPoint

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class PriorConfig:
    mode: str = "whitelist"
    theta_miles: float = 100.0
    smoothing_alpha: float = 0.0
    empty_fallback: str = "image_only"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.empty_fallback not in FALLBACKS:
            raise ConfigError(f"empty_fallback must be one of {FALLBACKS}, got {self.empty_fallback!r}")
        if not self.theta_miles > 0:
            raise ConfigError("theta_miles must be positive")
        if self.smoothing_alpha < 0:
            raise ConfigError("smoothing_alpha must be non-negative")


def local_histogram(
    index: SpatialIndex,
    labels: Mapping[int, int] | np.ndarray,
    g: GeoPoint,
    theta_miles: float,
    n_labels: int,
) -> LabelHistogram:
    """Count training labels within ``theta_miles`` of ``g``, equal weights."""
    ids = radius_query(index, g, theta_miles)
    if isinstance(labels, np.ndarray):
        if ids.size and (ids.min() < 0 or ids.max() >= len(labels)):
            raise DataError("observation id outside the label array")
        found = labels[ids]
    else:
        try:
            found = np.array([labels[int(pid)] for pid in ids], dtype=np.int64)
        except (KeyError, IndexError) as e:
            raise DataError("no label for a queried observation id") from e
    if ids.size and (found.min() < 0 or found.max() >= n_labels):
        raise DataError(f"label outside [0, {n_labels}) in radius query result")
    counts = np.bincount(found.astype(np.int64), minlength=n_labels) if ids.size else np.zeros(n_labels, dtype=np.int64)
    return LabelHistogram(counts=counts.astype(np.int64), theta_miles=float(theta_miles), center=g)


def _check_probs(base_probs: np.ndarray) -> np.ndarray:
    p = np.asarray(base_probs, dtype=np.float64)
    if p.ndim != 1:
        raise DataError("base_probs must be a 1-D vector")
    if np.any(p < 0) or not np.isfinite(p).all():
        raise DataError("base_probs must be non-negative and finite")
    if abs(p.sum() - 1.0) > 1e-6:
        raise DataError(f"base_probs must sum to 1 (got {p.sum()})")
    return p


def bayes_rescore(
    base_probs: np.ndarray,
    hist: LabelHistogram,
    alpha: float = 0.0,
    empty_fallback: str = "image_only",
) -> np.ndarray:
    """Multiply base probabilities by the smoothed local label frequency.

    score[l] = p[l] * (counts[l] + alpha) / (total + alpha * C). With an
    empty histogram and alpha = 0 the fallback applies: image_only returns
    the base probabilities unchanged, abstain returns all zeros.
    """
    p = _check_probs(base_probs)
    counts = hist.counts
    if len(counts) != len(p):
        raise DataError(f"histogram has {len(counts)} labels, base_probs {len(p)}")
    denom = hist.total + alpha * len(counts)
    if denom <= 0:
        return p.copy() if empty_fallback == "image_only" else np.zeros_like(p)
    return p * (counts + alpha) / denom


def whitelist_gate(
    base_probs: np.ndarray,
    hist: LabelHistogram,
    empty_fallback: str = "image_only",
) -> np.ndarray:
    """Zero out labels with no observation in the radius; keep the rest as-is."""
    p = _check_probs(base_probs)
    counts = hist.counts
    if len(counts) != len(p):
        raise DataError(f"histogram has {len(counts)} labels, base_probs {len(p)}")
    if hist.total == 0:
        return p.copy() if empty_fallback == "image_only" else np.zeros_like(p)
    return np.where(counts > 0, p, 0.0)


def predict_with_prior(
    base_probs: np.ndarray,
    index: SpatialIndex,
    labels: Mapping[int, int] | np.ndarray,
    g: GeoPoint,
    config: PriorConfig,
) -> tuple[int, np.ndarray]:
    """Rescore and pick a label; ties break toward the lowest label index.

    Returns ``(ABSTAIN, zeros)`` when the neighborhood is empty and the
    configured fallback is to abstain.
    """
    p = _check_probs(base_probs)
    hist = local_histogram(index, labels, g, config.theta_miles, n_labels=len(p))
    if config.mode == "bayesian":
        scores = bayes_rescore(p, hist, alpha=config.smoothing_alpha, empty_fallback=config.empty_fallback)
    else:
        scores = whitelist_gate(p, hist, empty_fallback=config.empty_fallback)
    if config.empty_fallback == "abstain" and not scores.any():
        return ABSTAIN, scores
    return int(np.argmax(scores)), scores
