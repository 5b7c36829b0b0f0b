"""Geodesy primitives: points, boxes, haversine distance and geohash cells."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
# Length of one degree of arc on the sphere above.
METERS_PER_DEGREE = EARTH_RADIUS_M * math.pi / 180.0

BASE32 = "0123456789bcdefghjkmnpqrstuvwxyz"
_DECODE_MAP = {c: i for i, c in enumerate(BASE32)}
MAX_PRECISION = 12


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or math.isnan(self.lat):
            raise ValueError(f"latitude out of range: {self.lat}")
        if not (-180.0 <= self.lon <= 180.0) or math.isnan(self.lon):
            raise ValueError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned lon/lat box, listed as [min_lon, min_lat, max_lon, max_lat]."""

    min_lon: float
    min_lat: float
    max_lon: float
    max_lat: float

    def __post_init__(self):
        if self.min_lon > self.max_lon or self.min_lat > self.max_lat:
            raise ValueError(f"inverted bounding box: {self.as_list()}")

    @classmethod
    def from_list(cls, values) -> "BoundingBox":
        if len(values) != 4:
            raise ValueError("bounding box needs 4 values [min_lon, min_lat, max_lon, max_lat]")
        return cls(*(float(v) for v in values))

    def as_list(self) -> list[float]:
        return [self.min_lon, self.min_lat, self.max_lon, self.max_lat]

    @property
    def center(self) -> GeoPoint:
        return GeoPoint((self.min_lat + self.max_lat) / 2, (self.min_lon + self.max_lon) / 2)

    @property
    def is_degenerate(self) -> bool:
        return self.min_lon == self.max_lon or self.min_lat == self.max_lat

    def contains(self, p: GeoPoint) -> bool:
        # closed on every side
        return self.min_lat <= p.lat <= self.max_lat and self.min_lon <= p.lon <= self.max_lon


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters between two points."""
    return _haversine(a.lat, a.lon, b.lat, b.lon)


def _haversine(lat1, lon1, lat2, lon2) -> float:
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = phi2 - phi1
    dlmb = math.radians(lon2 - lon1)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def haversine_many(lat, lon, lat0: float, lon0: float) -> np.ndarray:
    """Vectorized distances in meters from arrays of points to one point."""
    phi1 = np.radians(lat)
    phi2 = math.radians(lat0)
    dphi = phi2 - phi1
    dlmb = np.radians(lon0 - np.asarray(lon, dtype=float))
    h = np.sin(dphi / 2) ** 2 + np.cos(phi1) * math.cos(phi2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def normalize_lon(lon: float) -> float:
    return -180.0 if lon == 180.0 else lon


def _bit_counts(precision: int) -> tuple[int, int]:
    """(longitude bits, latitude bits) for a geohash of `precision` characters."""
    total = 5 * precision
    return (total + 1) // 2, total // 2


def _check_precision(precision: int) -> None:
    if not isinstance(precision, (int, np.integer)) or not 1 <= precision <= MAX_PRECISION:
        raise ValueError(f"geohash precision must be in 1..{MAX_PRECISION}, got {precision!r}")


def geohash_encode(p: GeoPoint, precision: int) -> str:
    _check_precision(precision)
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    lon = normalize_lon(p.lon)
    chars = []
    bits = 0
    nbits = 0
    even = True  # longitude first
    while len(chars) < precision:
        if even:
            mid = (lon_lo + lon_hi) / 2
            if lon >= mid:
                bits = (bits << 1) | 1
                lon_lo = mid
            else:
                bits <<= 1
                lon_hi = mid
        else:
            mid = (lat_lo + lat_hi) / 2
            if p.lat >= mid:
                bits = (bits << 1) | 1
                lat_lo = mid
            else:
                bits <<= 1
                lat_hi = mid
        even = not even
        nbits += 1
        if nbits == 5:
            chars.append(BASE32[bits])
            bits = 0
            nbits = 0
    return "".join(chars)


def geohash_decode(code: str) -> BoundingBox:
    """Return the cell occupied by every point that encodes to `code`."""
    if not code:
        raise ValueError("empty geohash")
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    even = True
    for ch in code:
        try:
            value = _DECODE_MAP[ch]
        except KeyError:
            raise ValueError(f"invalid geohash character {ch!r} in {code!r}") from None
        for shift in range(4, -1, -1):
            bit = (value >> shift) & 1
            if even:
                mid = (lon_lo + lon_hi) / 2
                if bit:
                    lon_lo = mid
                else:
                    lon_hi = mid
            else:
                mid = (lat_lo + lat_hi) / 2
                if bit:
                    lat_lo = mid
                else:
                    lat_hi = mid
            even = not even
    return BoundingBox(lon_lo, lat_lo, lon_hi, lat_hi)


def geohash_cell_index(lat, lon, precision: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer (lat_index, lon_index) of the geohash cell for each point.

    Uses the same bisection as `geohash_encode`, so the indices de-interleave
    exactly to the encoded string's bits. Works on scalars or arrays.
    """
    _check_precision(precision)
    lon_bits, lat_bits = _bit_counts(precision)
    lon = np.where(np.asarray(lon, dtype=float) == 180.0, -180.0, lon)
    return _bisect(np.asarray(lat, dtype=float), -90.0, 90.0, lat_bits), _bisect(lon, -180.0, 180.0, lon_bits)


def _bisect(values: np.ndarray, lo: float, hi: float, nbits: int) -> np.ndarray:
    lo_arr = np.full(values.shape, lo)
    hi_arr = np.full(values.shape, hi)
    idx = np.zeros(values.shape, dtype=np.int64)
    for _ in range(nbits):
        mid = (lo_arr + hi_arr) / 2
        upper = values >= mid
        idx = (idx << 1) | upper
        lo_arr = np.where(upper, mid, lo_arr)
        hi_arr = np.where(upper, hi_arr, mid)
    return idx


def geohash_from_index(lat_idx: int, lon_idx: int, precision: int) -> str:
    """Inverse of `geohash_cell_index` for a single cell."""
    lon_bits, lat_bits = _bit_counts(precision)
    value = 0
    li, la = lon_bits, lat_bits
    for k in range(5 * precision):
        if k % 2 == 0:
            li -= 1
            value = (value << 1) | ((int(lon_idx) >> li) & 1)
        else:
            la -= 1
            value = (value << 1) | ((int(lat_idx) >> la) & 1)
    return "".join(BASE32[(value >> (5 * (precision - 1 - i))) & 31] for i in range(precision))


def cell_counts(precision: int) -> tuple[int, int]:
    """Number of geohash cells along (latitude, longitude)."""
    lon_bits, lat_bits = _bit_counts(precision)
    return 1 << lat_bits, 1 << lon_bits
