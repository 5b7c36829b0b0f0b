"""Synthetic fleets: day-periodic fixed-route vehicles and random-waypoint walkers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geo import BoundingBox, GeoPoint, haversine_distance
from .store import MobilityRecord

DAY_S = 86_400


@dataclass(frozen=True)
class FleetSpec:
    fixed_route_count: int
    random_route_count: int
    extent: BoundingBox
    days: int
    sample_interval_s: int = 60
    speed_mps: float = 10.0
    seed: int = 0
    start_time: int = 0

    def __post_init__(self):
        if self.fixed_route_count < 0 or self.random_route_count < 0:
            raise ValueError("vehicle counts must be non-negative")
        if self.days < 0:
            raise ValueError("days must be non-negative")
        if not self.sample_interval_s > 0 or int(self.sample_interval_s) != self.sample_interval_s:
            raise ValueError("sample_interval_s must be a positive integer")
        if not self.speed_mps > 0:
            raise ValueError("speed_mps must be positive")
        if self.start_time < 0:
            raise ValueError("start_time must be non-negative")

    @classmethod
    def from_json(cls, doc: dict) -> "FleetSpec":
        doc = dict(doc)
        try:
            doc["extent"] = BoundingBox.from_list(doc["extent"])
            return cls(**doc)
        except (KeyError, TypeError) as exc:
            raise ValueError(f"invalid fleet spec: {exc}") from None

    def to_json(self) -> dict:
        return {
            "fixed_route_count": self.fixed_route_count,
            "random_route_count": self.random_route_count,
            "extent": self.extent.as_list(),
            "days": self.days,
            "sample_interval_s": self.sample_interval_s,
            "speed_mps": self.speed_mps,
            "seed": self.seed,
            "start_time": self.start_time,
        }


def _records(vehicle_id: int, ts: np.ndarray, lat: np.ndarray, lon: np.ndarray) -> list[MobilityRecord]:
    return [MobilityRecord(vehicle_id, t, a, o) for t, a, o in zip(ts.tolist(), lat.tolist(), lon.tolist())]


def gen_fixed_route(route: Sequence[GeoPoint], vehicle_id: int, *, extent: BoundingBox, days: int,
                    sample_interval_s: int = 60, speed_mps: float = 10.0, start_time: int = 0) -> list[MobilityRecord]:
    """Shuttle back and forth along `route` at constant speed, restarting at each midnight.

    Each day's samples sit at the same time-of-day offsets and positions, so
    consecutive days differ only by a 86,400 s shift.
    """
    if len(route) < 2:
        raise ValueError("a route needs at least 2 points")
    for p in route:
        if not extent.contains(p):
            raise ValueError(f"route point {p} lies outside the extent")
    seg = [haversine_distance(a, b) for a, b in zip(route, route[1:])]
    total = sum(seg)
    if total <= 0:
        raise ValueError("route has zero length")
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    lats = np.array([p.lat for p in route])
    lons = np.array([p.lon for p in route])

    offsets = np.arange(0, DAY_S, sample_interval_s, dtype=np.int64)
    s = np.mod(offsets * speed_mps, 2 * total)
    s = np.where(s > total, 2 * total - s, s)
    lat = np.interp(s, cum, lats)
    lon = np.interp(s, cum, lons)

    out = []
    for d in range(days):
        out.extend(_records(vehicle_id, start_time + d * DAY_S + offsets, lat, lon))
    return out


def gen_random_walk(extent: BoundingBox, vehicle_id: int, seed, *, days: int, sample_interval_s: int = 60,
                    speed_mps: float = 10.0, start_time: int = 0) -> list[MobilityRecord]:
    """Random-waypoint walk: head straight for a uniform random waypoint, then draw the next.

    `seed` is anything accepted by ``numpy.random.default_rng``.
    """
    rng = np.random.default_rng(seed)
    duration = days * DAY_S
    ts = np.arange(0, duration, sample_interval_s, dtype=np.int64)
    if ts.size == 0:
        return []

    def draw():
        return (rng.uniform(extent.min_lat, extent.max_lat), rng.uniform(extent.min_lon, extent.max_lon))

    # leg k runs from points[k] to points[k + 1] during [ends[k-1], ends[k])
    points = [draw()]
    ends = []
    t = 0.0
    while t <= ts[-1]:
        nxt = draw()
        a, b = points[-1], nxt
        t += haversine_distance(GeoPoint(*a), GeoPoint(*b)) / speed_mps
        points.append(nxt)
        ends.append(t)
    pts = np.array(points)
    ends = np.array(ends)
    starts = np.concatenate(([0.0], ends[:-1]))
    leg = np.searchsorted(ends, ts, side="right")
    span = ends[leg] - starts[leg]
    frac = np.where(span > 0, (ts - starts[leg]) / np.where(span > 0, span, 1.0), 0.0)
    lat = pts[leg, 0] + frac * (pts[leg + 1, 0] - pts[leg, 0])
    lon = pts[leg, 1] + frac * (pts[leg + 1, 1] - pts[leg, 1])
    lat = np.clip(lat, extent.min_lat, extent.max_lat)
    lon = np.clip(lon, extent.min_lon, extent.max_lon)
    return _records(vehicle_id, start_time + ts, lat, lon)


def fixed_routes(spec: FleetSpec) -> list[list[GeoPoint]]:
    """West-east lines evenly spaced in latitude across the extent."""
    e = spec.extent
    n = spec.fixed_route_count
    routes = []
    for i in range(n):
        lat = e.min_lat + (i + 1) * (e.max_lat - e.min_lat) / (n + 1)
        routes.append([GeoPoint(lat, e.min_lon), GeoPoint(lat, e.max_lon)])
    return routes


def vehicle_seed(fleet_seed: int, vehicle_id: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([fleet_seed, vehicle_id])


def gen_fleet(spec: FleetSpec) -> list[MobilityRecord]:
    """Fixed-route vehicles take ids 0..F-1, random walkers F..F+R-1."""
    common = dict(days=spec.days, sample_interval_s=spec.sample_interval_s,
                  speed_mps=spec.speed_mps, start_time=spec.start_time)
    out: list[MobilityRecord] = []
    for vid, route in enumerate(fixed_routes(spec)):
        out.extend(gen_fixed_route(route, vid, extent=spec.extent, **common))
    for j in range(spec.random_route_count):
        vid = spec.fixed_route_count + j
        out.extend(gen_random_walk(spec.extent, vid, vehicle_seed(spec.seed, vid), **common))
    return out
