"""Geographic coordinates, great-circle distance, and a grid index for radius queries.

Distances are great-circle (haversine) on a sphere of mean radius
3958.7613 miles. Longitude 180 is treated as an alias of -180, so stored
longitudes always live in [-180, 180).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, InvalidCoordinateError

EARTH_RADIUS_MILES = 3958.7613

# Maximum possible great-circle distance (antipodal points).
MAX_DISTANCE_MILES = math.pi * EARTH_RADIUS_MILES


@dataclass(frozen=True)
class GeoPoint:
    """A point on the globe in degrees. Validates on construction."""

    lat_deg: float
    lon_deg: float

    def __post_init__(self):
        lat = float(self.lat_deg)
        lon = float(self.lon_deg)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise InvalidCoordinateError(f"non-finite coordinate ({self.lat_deg}, {self.lon_deg})")
        if lon == 180.0:
            lon = -180.0
        if not -90.0 <= lat <= 90.0:
            raise InvalidCoordinateError(f"latitude {lat} outside [-90, 90]")
        if not -180.0 <= lon < 180.0:
            raise InvalidCoordinateError(f"longitude {lon} outside [-180, 180)")
        object.__setattr__(self, "lat_deg", lat)
        object.__setattr__(self, "lon_deg", lon)


@dataclass(frozen=True)
class NormalizedGeo:
    """Latitude/longitude scaled into [-1, 1] x [-1, 1)."""

    x: float
    y: float


def normalize(p: GeoPoint) -> NormalizedGeo:
    """Scale a GeoPoint linearly: x = lat/90, y = lon/180."""
    return NormalizedGeo(p.lat_deg / 90.0, p.lon_deg / 180.0)


def denormalize(n: NormalizedGeo) -> GeoPoint:
    """Inverse of :func:`normalize`."""
    return GeoPoint(n.x * 90.0, n.y * 180.0)


def normalize_latlon(lat_deg: np.ndarray, lon_deg: np.ndarray) -> np.ndarray:
    """Vectorized normalization; returns an (n, 2) array of (x, y) pairs.

    Longitude exactly 180 wraps to -180 before scaling.
    """
    lat = np.asarray(lat_deg, dtype=np.float64)
    lon = np.asarray(lon_deg, dtype=np.float64)
    if not (np.all(np.isfinite(lat)) and np.all(np.isfinite(lon))):
        raise InvalidCoordinateError("non-finite coordinates in array input")
    if np.any(lat < -90.0) or np.any(lat > 90.0):
        raise InvalidCoordinateError("latitude outside [-90, 90]")
    if np.any(lon < -180.0) or np.any(lon > 180.0):
        raise InvalidCoordinateError("longitude outside [-180, 180]")
    lon = np.where(lon == 180.0, -180.0, lon)
    return np.stack([lat / 90.0, lon / 180.0], axis=1)


def haversine_miles(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in miles between two points."""
    phi1 = math.radians(a.lat_deg)
    phi2 = math.radians(b.lat_deg)
    dphi = math.radians(b.lat_deg - a.lat_deg)
    dlam = math.radians(b.lon_deg - a.lon_deg)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_MILES * math.asin(math.sqrt(min(1.0, h)))


def _haversine_to_many(lat_rad: float, lon_rad: float, lats_rad: np.ndarray, lons_rad: np.ndarray) -> np.ndarray:
    """Distance in miles from one point to arrays of points (radians in)."""
    dphi = lats_rad - lat_rad
    dlam = lons_rad - lon_rad
    h = np.sin(dphi / 2.0) ** 2 + math.cos(lat_rad) * np.cos(lats_rad) * np.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_MILES * np.arcsin(np.sqrt(np.minimum(1.0, h)))


@dataclass
class SpatialIndex:
    """Grid index over lat/lon bands. Immutable once built; queries are read-only.

    ``cells`` maps (lat-band, lon-band) to arrays of observation ids;
    ``points`` maps each id back to its GeoPoint. Queries run on the private
    row-indexed arrays instead.
    """

    cell_size_deg: float
    ids: np.ndarray
    lats_deg: np.ndarray
    lons_deg: np.ndarray
    cells: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    points: dict[int, GeoPoint] = field(default_factory=dict, repr=False)
    _row_cells: dict[tuple[int, int], np.ndarray] = field(default_factory=dict, repr=False)
    _lats_rad: np.ndarray = field(default=None, repr=False)
    _lons_rad: np.ndarray = field(default=None, repr=False)
    _rows_by_band: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_lon_cells(self) -> int:
        return max(1, math.ceil(360.0 / self.cell_size_deg))


def _cell_of(lat: float, lon: float, cell: float) -> tuple[int, int]:
    row = math.floor(lat / cell)
    col = int((lon + 180.0) // cell)
    return row, col


def build_index(points: list[tuple[int, GeoPoint]], cell_size_deg: float = 5.0) -> SpatialIndex:
    """Build a grid index over (id, GeoPoint) pairs.

    Ids must be unique integers. Layout is deterministic for a given input
    order.
    """
    if cell_size_deg <= 0 or not math.isfinite(cell_size_deg):
        raise DataError(f"cell_size_deg must be positive, got {cell_size_deg}")
    ids = np.array([pid for pid, _ in points], dtype=np.int64)
    if len(ids) != len(set(ids.tolist())):
        raise DataError("duplicate ids in index input")
    lats = np.array([p.lat_deg for _, p in points], dtype=np.float64)
    lons = np.array([p.lon_deg for _, p in points], dtype=np.float64)

    buckets: dict[tuple[int, int], list[int]] = {}
    for row_pos, (_, p) in enumerate(points):
        key = _cell_of(p.lat_deg, p.lon_deg, cell_size_deg)
        buckets.setdefault(key, []).append(row_pos)

    row_cells = {k: np.array(v, dtype=np.intp) for k, v in buckets.items()}
    cells = {k: ids[rows] for k, rows in row_cells.items()}
    rows_by_band: dict[int, list[np.ndarray]] = {}
    for (band, _), rows in row_cells.items():
        rows_by_band.setdefault(band, []).append(rows)
    band_arrays = {band: np.concatenate(parts) for band, parts in rows_by_band.items()}

    return SpatialIndex(
        cell_size_deg=float(cell_size_deg),
        ids=ids,
        lats_deg=lats,
        lons_deg=lons,
        cells=cells,
        points={int(pid): p for pid, p in points},
        _row_cells=row_cells,
        _lats_rad=np.radians(lats),
        _lons_rad=np.radians(lons),
        _rows_by_band=band_arrays,
    )


def _candidate_rows(index: SpatialIndex, center: GeoPoint, theta_miles: float) -> np.ndarray:
    """Row positions of every point that could lie within theta of center.

    Over-inclusive by construction; the caller applies the exact distance
    filter. Bands whose longitude window would span the globe (including
    anything touching a pole) fall back to scanning the whole band.
    """
    cell = index.cell_size_deg
    theta_rad = theta_miles / EARTH_RADIUS_MILES
    if theta_rad >= math.pi:
        return np.arange(len(index), dtype=np.intp)

    # Latitude bound: central angle >= |delta lat|, so the band range is safe.
    dphi_deg = math.degrees(theta_rad) * (1.0 + 1e-12) + 1e-9
    lat_lo = max(-90.0, center.lat_deg - dphi_deg)
    lat_hi = min(90.0, center.lat_deg + dphi_deg)
    band_lo = math.floor(lat_lo / cell)
    band_hi = math.floor(lat_hi / cell)

    cos_c = math.cos(math.radians(center.lat_deg))
    sin_half = math.sin(min(math.pi / 2.0, theta_rad / 2.0))

    chunks: list[np.ndarray] = []
    n_lon = index.n_lon_cells
    for band in range(band_lo, band_hi + 1):
        band_rows = index._rows_by_band.get(band)
        if band_rows is None:
            continue
        # Most poleward latitude inside this band determines the widest
        # longitude window: sin^2(dlam/2) <= sin^2(theta/2R) / (cos c . cos p).
        edge_lo = max(-90.0, band * cell)
        edge_hi = min(90.0, (band + 1) * cell)
        max_abs_lat = max(abs(edge_lo), abs(edge_hi))
        cos_band = math.cos(math.radians(min(90.0, max_abs_lat)))
        denom = cos_c * cos_band
        full_band = False
        if denom <= 1e-12:
            full_band = True
        else:
            arg = sin_half / math.sqrt(denom)
            if arg >= 1.0:
                full_band = True
            else:
                dlam_deg = math.degrees(2.0 * math.asin(arg)) * (1.0 + 1e-12) + 1e-9
        if full_band or 2.0 * dlam_deg >= 360.0:
            chunks.append(band_rows)
            continue

        lo = center.lon_deg - dlam_deg
        hi = center.lon_deg + dlam_deg
        # Wrap the window into [-180, 180) intervals, then enumerate columns.
        intervals = []
        if lo < -180.0:
            intervals.append((lo + 360.0, 180.0))
            lo = -180.0
        if hi >= 180.0:
            intervals.append((-180.0, hi - 360.0))
            hi = 180.0 - 1e-12
        intervals.append((lo, hi))
        cols: set[int] = set()
        for a, b in intervals:
            c0 = max(0, int((a + 180.0) // cell))
            c1 = min(n_lon - 1, int((b + 180.0) // cell))
            cols.update(range(c0, c1 + 1))
        for col in sorted(cols):
            rows = index._row_cells.get((band, col))
            if rows is not None:
                chunks.append(rows)

    if not chunks:
        return np.empty(0, dtype=np.intp)
    return np.concatenate(chunks)


def radius_query(index: SpatialIndex, center: GeoPoint, theta_miles: float) -> np.ndarray:
    """Ids of all indexed points within ``theta_miles`` of ``center``, ascending.

    Exact: candidates from the grid are filtered with the same haversine
    formula a brute-force scan would use.
    """
    if not math.isfinite(theta_miles) or theta_miles < 0:
        raise DataError(f"radius must be non-negative, got {theta_miles}")
    if len(index) == 0:
        return np.empty(0, dtype=np.int64)
    rows = _candidate_rows(index, center, theta_miles)
    if rows.size == 0:
        return np.empty(0, dtype=np.int64)
    d = _haversine_to_many(
        math.radians(center.lat_deg),
        math.radians(center.lon_deg),
        index._lats_rad[rows],
        index._lons_rad[rows],
    )
    hit = rows[d <= theta_miles]
    out = index.ids[hit]
    out.sort()
    return out


def brute_force_radius(points: list[tuple[int, GeoPoint]], center: GeoPoint, theta_miles: float) -> np.ndarray:
    """Reference implementation: filter every point directly."""
    if theta_miles < 0:
        raise DataError(f"radius must be non-negative, got {theta_miles}")
    ids = [pid for pid, p in points if haversine_miles(center, p) <= theta_miles]
    return np.array(sorted(ids), dtype=np.int64)
