"""geofuse: geolocation-aware classification at desk scale.

Three mechanisms for folding geolocation into a classifier: radius-based
label priors (Bayesian rescoring and whitelist gating), post-processing
logit fusion with a frozen base model, and joint feature modulation. A
synthetic-world generator with closed-form Bayes oracles lets each
mechanism be verified exactly.
"""

from .data import Dataset, Observation, read_jsonl, write_jsonl
from .errors import (
    AbstainError,
    ConfigError,
    DataError,
    GeofuseError,
    InvalidCoordinateError,
    NumericError,
)
from .estimators import (
    FeatureModulationClassifier,
    GeoPriorClassifier,
    ImageOnlyClassifier,
    PostProcessingClassifier,
)
from .geodesy import (
    EARTH_RADIUS_MILES,
    GeoPoint,
    NormalizedGeo,
    SpatialIndex,
    build_index,
    denormalize,
    haversine_miles,
    normalize,
    radius_query,
)
from .priors import LabelHistogram, PriorConfig, bayes_rescore, local_histogram, predict_with_prior, whitelist_gate
from .synthworld import (
    HabitatComponent,
    OracleOutputs,
    WorldSpec,
    bayes_accuracy,
    generate,
    geo_separable_world,
    long_tail_world,
    make_world,
    noise_geo_world,
    oracle,
)

__version__ = "0.1.0"

__all__ = [
    "AbstainError",
    "ConfigError",
    "DataError",
    "Dataset",
    "EARTH_RADIUS_MILES",
    "FeatureModulationClassifier",
    "GeofuseError",
    "GeoPoint",
    "GeoPriorClassifier",
    "HabitatComponent",
    "ImageOnlyClassifier",
    "InvalidCoordinateError",
    "LabelHistogram",
    "NormalizedGeo",
    "NumericError",
    "Observation",
    "OracleOutputs",
    "PostProcessingClassifier",
    "PriorConfig",
    "SpatialIndex",
    "WorldSpec",
    "bayes_accuracy",
    "bayes_rescore",
    "build_index",
    "denormalize",
    "generate",
    "geo_separable_world",
    "haversine_miles",
    "local_histogram",
    "long_tail_world",
    "make_world",
    "noise_geo_world",
    "normalize",
    "oracle",
    "predict_with_prior",
    "radius_query",
    "read_jsonl",
    "whitelist_gate",
    "write_jsonl",
]
