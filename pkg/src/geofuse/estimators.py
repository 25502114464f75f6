"""Scikit-learn style estimators for the geo-aware models.

All estimators share one input convention: ``X`` is a 2-D float matrix
whose last two columns are latitude and longitude in degrees; the columns
before them are appearance features. ``y`` holds integer labels in
``[0, C)``. This keeps every model interchangeable inside the usual
sklearn tooling (``get_params``/``set_params``, ``clone``, pipelines).

``predict_scores`` returns the raw per-label ranking scores each model
uses for its argmax: calibrated probabilities for the trained networks,
unnormalized rescored values for the prior-based models.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from . import fusion, modulation
from .errors import ConfigError, DataError
from .geodesy import GeoPoint, build_index, normalize_latlon
from .micronet import Network, OptimizerConfig, TrainConfig, softmax, train_classifier
from .priors import ABSTAIN, PriorConfig, local_histogram, bayes_rescore, whitelist_gate
from .validation import check_labels, infer_n_labels, split_feature_geo


def _require_fitted(est, attr: str):
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")


class ImageOnlyClassifier(BaseEstimator, ClassifierMixin):
    """Softmax MLP over the appearance features; the geo columns are ignored.

    Parameters
    ----------
    hidden_sizes : tuple of int
        Widths of the relu hidden layers.
    learning_rate : float
        SGD step size (no decay).
    epochs, batch_size, seed : training loop controls; fits are
        deterministic for a fixed seed.
    n_labels : int or None
        Label-map size; inferred from ``y`` when None.
    """

    def __init__(self, hidden_sizes=(32, 32), learning_rate=0.02, epochs=30, batch_size=32, seed=0, n_labels=None):
        self.hidden_sizes = hidden_sizes
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.n_labels = n_labels

    def fit(self, X, y):
        features, _, _ = split_feature_geo(X)
        y = check_labels(y)
        c = infer_n_labels(y, self.n_labels)
        self.n_labels_ = c
        self.classes_ = np.arange(c)
        self.n_features_in_ = X.shape[1]
        self.net_ = Network.build(
            [features.shape[1], *self.hidden_sizes, c], hidden_activation="relu", seed=self.seed
        )
        cfg = TrainConfig(
            optimizer=OptimizerConfig(kind="sgd", learning_rate=self.learning_rate),
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
        )
        self.loss_history_ = train_classifier(self.net_, features, y, cfg)
        return self

    def predict_proba(self, X):
        _require_fitted(self, "net_")
        features, _, _ = split_feature_geo(X, n_features=self.net_.n_in)
        return softmax(self.net_.forward(features))

    def predict_scores(self, X):
        return self.predict_proba(X)

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)


class GeoPriorClassifier(BaseEstimator, ClassifierMixin):
    """Rescore a fitted base classifier with a radius-restricted label prior.

    ``mode="whitelist"`` gates out labels unseen within ``theta_miles`` of
    the query; ``mode="bayesian"`` multiplies by the (optionally smoothed)
    local label frequency. The base estimator must already be fitted and is
    never modified. Fit only records the training locations and labels.
    """

    def __init__(
        self,
        base=None,
        mode="whitelist",
        theta_miles=100.0,
        smoothing_alpha=0.0,
        empty_fallback="image_only",
        cell_size_deg=5.0,
    ):
        self.base = base
        self.mode = mode
        self.theta_miles = theta_miles
        self.smoothing_alpha = smoothing_alpha
        self.empty_fallback = empty_fallback
        self.cell_size_deg = cell_size_deg

    def _prior_config(self) -> PriorConfig:
        return PriorConfig(
            mode=self.mode,
            theta_miles=self.theta_miles,
            smoothing_alpha=self.smoothing_alpha,
            empty_fallback=self.empty_fallback,
        )

    def fit(self, X, y):
        if self.base is None:
            raise ConfigError("GeoPriorClassifier requires a fitted base classifier")
        _require_fitted(self.base, "classes_")
        self._prior_config()  # validates parameters
        _, lat, lon = split_feature_geo(X)
        y = check_labels(y, n_labels=len(self.base.classes_))
        points = [(i, GeoPoint(float(lat[i]), float(lon[i]))) for i in range(len(y))]
        self.index_ = build_index(points, cell_size_deg=self.cell_size_deg)
        self.train_labels_ = y
        self.classes_ = self.base.classes_
        self.n_features_in_ = X.shape[1]
        return self

    def predict_scores(self, X):
        """Raw rescored vectors; abstaining rows are all-zero."""
        _require_fitted(self, "index_")
        _, lat, lon = split_feature_geo(X)
        base_probs = self.base.predict_proba(X)
        config = self._prior_config()
        out = np.empty_like(base_probs)
        for i in range(len(base_probs)):
            g = GeoPoint(float(lat[i]), float(lon[i]))
            hist = local_histogram(self.index_, self.train_labels_, g, config.theta_miles, base_probs.shape[1])
            if config.mode == "bayesian":
                out[i] = bayes_rescore(base_probs[i], hist, alpha=config.smoothing_alpha, empty_fallback=config.empty_fallback)
            else:
                out[i] = whitelist_gate(base_probs[i], hist, empty_fallback=config.empty_fallback)
        return out

    def predict(self, X):
        """Argmax labels; rows where the model abstains return -1."""
        scores = self.predict_scores(X)
        labels = scores.argmax(axis=1)
        if self.empty_fallback == "abstain":
            labels = np.where(scores.any(axis=1), labels, ABSTAIN)
        return labels


class PostProcessingClassifier(BaseEstimator, ClassifierMixin):
    """Logit-fusion model: geo-net logits added to the base's log-odds.

    The base classifier must be fitted before this estimator is; its
    parameters are frozen (training only touches the geo net).
    """

    def __init__(self, base=None, hidden_sizes=fusion.GEO_HIDDEN_DEFAULT, learning_rate=0.02, epochs=30, batch_size=32, seed=0):
        self.base = base
        self.hidden_sizes = hidden_sizes
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y):
        if self.base is None:
            raise ConfigError("PostProcessingClassifier requires a fitted base classifier")
        _require_fitted(self.base, "classes_")
        _, lat, lon = split_feature_geo(X)
        y = check_labels(y, n_labels=len(self.base.classes_))
        geo_norm = normalize_latlon(lat, lon)
        base_probs = self.base.predict_proba(X)
        cfg = fusion.FusionTrainConfig(
            hidden_sizes=tuple(self.hidden_sizes),
            optimizer=OptimizerConfig(kind="sgd", learning_rate=self.learning_rate),
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
        )
        self.geo_net_, self.loss_history_ = fusion.train_postproc(geo_norm, base_probs, y, cfg)
        self.classes_ = self.base.classes_
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        _require_fitted(self, "geo_net_")
        _, lat, lon = split_feature_geo(X)
        geo_norm = normalize_latlon(lat, lon)
        base_probs = self.base.predict_proba(X)
        _, probs = fusion.predict_fused(self.geo_net_, base_probs, geo_norm)
        return probs

    def predict_scores(self, X):
        return self.predict_proba(X)

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)


class FeatureModulationClassifier(BaseEstimator, ClassifierMixin):
    """Jointly trained model with geo features modulating base hidden layers.

    ``init_base`` supplies the starting parameters for the image pathway
    (it is copied, not mutated); the geo trunks and per-layer projections
    start fresh at the variant's safe initialization. Training uses RMSprop
    with a stepwise decay schedule.
    """

    def __init__(
        self,
        init_base=None,
        variant="add_raw_beta",
        layer_mask=None,
        geo_hidden=modulation.GEO_TRUNK_HIDDEN_DEFAULT,
        learning_rate=0.0045,
        decay_rate=0.94,
        decay_every_epochs=4,
        epochs=30,
        batch_size=32,
        seed=0,
    ):
        self.init_base = init_base
        self.variant = variant
        self.layer_mask = layer_mask
        self.geo_hidden = geo_hidden
        self.learning_rate = learning_rate
        self.decay_rate = decay_rate
        self.decay_every_epochs = decay_every_epochs
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y):
        if self.init_base is None:
            raise ConfigError("FeatureModulationClassifier requires a fitted init_base classifier")
        _require_fitted(self.init_base, "net_")
        features, lat, lon = split_feature_geo(X, n_features=self.init_base.net_.n_in)
        y = check_labels(y, n_labels=len(self.init_base.classes_))
        geo_norm = normalize_latlon(lat, lon)
        cfg = modulation.ModulationTrainConfig(
            geo_hidden=tuple(self.geo_hidden),
            layer_mask=self.layer_mask,
            optimizer=OptimizerConfig(
                kind="rmsprop",
                learning_rate=self.learning_rate,
                decay_rate=self.decay_rate,
                decay_every_epochs=self.decay_every_epochs,
            ),
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
        )
        self.modulated_, self.loss_history_ = modulation.train_joint(
            features, geo_norm, y, self.init_base.net_, self.variant, cfg
        )
        self.classes_ = self.init_base.classes_
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        _require_fitted(self, "modulated_")
        features, lat, lon = split_feature_geo(X, n_features=self.modulated_.base.n_in)
        geo_norm = normalize_latlon(lat, lon)
        logits = modulation.forward_modulated(self.modulated_, features, geo_norm)
        return softmax(logits)

    def predict_scores(self, X):
        return self.predict_proba(X)

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)
