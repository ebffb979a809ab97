"""Coordinates, great-circle distances and raster grids.

All distances are kilometres on a sphere of radius ``EARTH_RADIUS_KM``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class GeoPoint:
    """A (latitude, longitude) pair in degrees."""

    lat_deg: float
    lon_deg: float

    def __post_init__(self):
        lat, lon = float(self.lat_deg), float(self.lon_deg)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise ValueError(f"non-finite coordinate ({lat}, {lon})")
        if not -90.0 <= lat <= 90.0:
            raise ValueError(f"latitude {lat} outside [-90, 90]")
        if not -180.0 <= lon < 180.0:
            raise ValueError(f"longitude {lon} outside [-180, 180)")
        object.__setattr__(self, "lat_deg", lat)
        object.__setattr__(self, "lon_deg", lon)


@dataclass(frozen=True)
class RasterSpec:
    """Regular lat/lon lattice, inclusive of the minimum bounds."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    step_deg: float

    def __post_init__(self):
        if not self.step_deg > 0:
            raise ValueError(f"raster step must be positive, got {self.step_deg}")
        if not self.lat_min < self.lat_max:
            raise ValueError(
                f"degenerate latitude span [{self.lat_min}, {self.lat_max}]"
            )
        if not self.lon_min < self.lon_max:
            raise ValueError(
                f"degenerate longitude span [{self.lon_min}, {self.lon_max}]"
            )

    @property
    def n_lat(self) -> int:
        return _axis_count(self.lat_max - self.lat_min, self.step_deg)

    @property
    def n_lon(self) -> int:
        return _axis_count(self.lon_max - self.lon_min, self.step_deg)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_lat, self.n_lon

    def lats(self) -> np.ndarray:
        return self.lat_min + self.step_deg * np.arange(self.n_lat)

    def lons(self) -> np.ndarray:
        return self.lon_min + self.step_deg * np.arange(self.n_lon)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened (lat, lon) arrays in row-major order (lat outer)."""
        lat, lon = np.meshgrid(self.lats(), self.lons(), indexing="ij")
        return lat.ravel(), lon.ravel()


def _axis_count(span: float, step: float) -> int:
    # tolerance absorbs binary representation of decimal steps, e.g. 5 / 0.01
    return int(math.floor(span / step + 1e-9)) + 1


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in km between two points."""
    return float(haversine_array(a.lat_deg, a.lon_deg, b.lat_deg, b.lon_deg))


def haversine_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorised haversine distance (km); inputs in degrees, broadcastable."""
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    dphi = np.radians(np.subtract(lat2, lat1))
    dlmb = np.radians(np.subtract(lon2, lon1))
    a = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def points_to_arrays(points: Sequence[GeoPoint]) -> tuple[np.ndarray, np.ndarray]:
    lat = np.array([p.lat_deg for p in points], dtype=float)
    lon = np.array([p.lon_deg for p in points], dtype=float)
    return lat, lon


def distance_matrix(points: Sequence[GeoPoint], others: Sequence[GeoPoint] | None = None) -> np.ndarray:
    """Pairwise haversine distances, shape ``(len(points), len(others))``."""
    lat1, lon1 = points_to_arrays(points)
    if others is None:
        lat2, lon2 = lat1, lon1
    else:
        lat2, lon2 = points_to_arrays(others)
    return haversine_array(lat1[:, None], lon1[:, None], lat2[None, :], lon2[None, :])


def raster_points(spec: RasterSpec) -> list[GeoPoint]:
    """All lattice points of ``spec``, row-major with latitude as the outer axis."""
    lat, lon = spec.coordinates()
    return [GeoPoint(float(a), float(b)) for a, b in zip(lat, lon)]
