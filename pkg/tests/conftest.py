import numpy as np
import pytest

from geofuse.geodesy import GeoPoint


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240211)


def random_geopoint(rng) -> GeoPoint:
    return GeoPoint(float(rng.uniform(-90, 90)), float(rng.uniform(-180, 180)))
