"""Observation datasets and the on-disk JSONL format.

A dataset file is JSON-lines: first a header
``{"format_version": 1, "C": ..., "D": ..., "split": ...}`` and then one
observation per line, ``{"label": int, "lat": float, "lon": float,
"features": [float, ...]}``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .geodesy import GeoPoint

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Observation:
    """A single (label, geolocation, appearance features) triple."""

    label: int
    geo: GeoPoint
    features: np.ndarray


@dataclass
class Dataset:
    """Column-oriented bundle of observations plus the label-map size."""

    labels: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    features: np.ndarray
    n_labels: int
    split: str = "train"

    def __post_init__(self):
        n = len(self.labels)
        if not (len(self.lat) == len(self.lon) == self.features.shape[0] == n):
            raise DataError("dataset columns have inconsistent lengths")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_labels):
            raise DataError("labels outside [0, C)")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def to_X(self) -> np.ndarray:
        """Feature matrix with (lat, lon) appended as the last two columns."""
        return np.hstack([self.features, self.lat[:, None], self.lon[:, None]])

    def label_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_labels)

    def observations(self):
        for i in range(len(self)):
            yield Observation(
                int(self.labels[i]),
                GeoPoint(float(self.lat[i]), float(self.lon[i])),
                self.features[i],
            )


def write_jsonl(dataset: Dataset, path) -> None:
    """Serialize a dataset; output bytes are deterministic for equal inputs."""
    path = Path(path)
    header = {
        "format_version": FORMAT_VERSION,
        "C": int(dataset.n_labels),
        "D": int(dataset.n_features),
        "split": dataset.split,
    }
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i in range(len(dataset)):
            row = {
                "label": int(dataset.labels[i]),
                "lat": float(dataset.lat[i]),
                "lon": float(dataset.lon[i]),
                "features": [float(v) for v in dataset.features[i]],
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path) -> Dataset:
    """Parse and validate a dataset file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    with path.open("r", encoding="utf-8") as fh:
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as e:
            raise DataError(f"bad dataset header in {path}: {e}") from e
        for key in ("format_version", "C", "D", "split"):
            if key not in header:
                raise DataError(f"dataset header missing {key!r}")
        if header["format_version"] != FORMAT_VERSION:
            raise DataError(f"unsupported dataset format_version {header['format_version']}")
        n_labels = int(header["C"])
        n_features = int(header["D"])

        labels, lats, lons, feats = [], [], [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"bad JSON on line {lineno} of {path}") from e
            if len(row["features"]) != n_features:
                raise DataError(f"line {lineno}: expected {n_features} features, got {len(row['features'])}")
            label = int(row["label"])
            if not 0 <= label < n_labels:
                raise DataError(f"line {lineno}: label {label} outside [0, {n_labels})")
            gp = GeoPoint(row["lat"], row["lon"])  # validates ranges; wraps lon 180
            labels.append(label)
            lats.append(gp.lat_deg)
            lons.append(gp.lon_deg)
            feats.append(row["features"])

    return Dataset(
        labels=np.array(labels, dtype=np.int64),
        lat=np.array(lats, dtype=np.float64),
        lon=np.array(lons, dtype=np.float64),
        features=np.array(feats, dtype=np.float64).reshape(len(labels), n_features),
        n_labels=n_labels,
        split=str(header["split"]),
    )
