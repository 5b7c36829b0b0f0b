"""Spatial strata: uniform grids or custom polygons, with point lookup.

Boundary points belong to the containing stratum with the smallest id, for
both grid and polygon stratifications.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .geo import METERS_PER_DEGREE, BoundingBox, GeoPoint

# A trailing row/column narrower than this fraction of a step is merged into
# its neighbour instead of becoming its own sliver cell.
SLIVER_FRACTION = 0.01
MIN_COS_LAT = 0.01

Ring = tuple  # tuple of (lon, lat) pairs, open (closing vertex dropped)


class StrataError(ValueError):
    pass


@dataclass(frozen=True)
class Stratum:
    stratum_id: int
    box: Optional[BoundingBox] = None
    ring: Optional[Ring] = None

    @property
    def is_polygon(self) -> bool:
        return self.ring is not None

    def coordinates(self) -> list[list[float]]:
        """Closed GeoJSON ring, [lon, lat] order."""
        if self.ring is not None:
            pts = [list(v) for v in self.ring]
        else:
            b = self.box
            pts = [[b.min_lon, b.min_lat], [b.max_lon, b.min_lat],
                   [b.max_lon, b.max_lat], [b.min_lon, b.max_lat]]
        return pts + [pts[0]]

    def vertices(self) -> list[GeoPoint]:
        return [GeoPoint(lat, lon) for lon, lat in self.coordinates()[:-1]]


class Stratification:
    """Base for grid and polygon stratifications. Immutable after construction."""

    extent: BoundingBox
    spatial_granularity_m: Optional[float] = None

    @property
    def strata(self) -> list[Stratum]:
        raise NotImplementedError

    def __len__(self) -> int:
        return len(self.strata)

    def assign(self, p: GeoPoint) -> Optional[int]:
        raise NotImplementedError

    def assign_many(self, lat, lon) -> np.ndarray:
        """Vectorized `assign`; returns int64 ids with -1 for points outside every stratum."""
        raise NotImplementedError

    def to_geojson(self) -> dict:
        features = [
            {
                "type": "Feature",
                "properties": {"stratum_id": s.stratum_id},
                "geometry": {"type": "Polygon", "coordinates": [s.coordinates()]},
            }
            for s in self.strata
        ]
        return {"type": "FeatureCollection", "bbox": self.extent.as_list(), "features": features}


def assign_stratum(s: Stratification, p: GeoPoint) -> Optional[int]:
    return s.assign(p)


class GridStratification(Stratification):
    def __init__(self, extent: BoundingBox, cell_size_m: float):
        if not cell_size_m > 0:
            raise StrataError(f"cell size must be positive, got {cell_size_m}")
        if extent.is_degenerate:
            raise StrataError(f"degenerate extent {extent.as_list()}")
        cos_lat = math.cos(math.radians(extent.center.lat))
        if cos_lat <= MIN_COS_LAT:
            raise StrataError("polar extents are not supported")
        self.extent = extent
        self.spatial_granularity_m = float(cell_size_m)
        self.lat_step = cell_size_m / METERS_PER_DEGREE
        self.lon_step = cell_size_m / (METERS_PER_DEGREE * cos_lat)
        self.lat_edges = _edges(extent.min_lat, extent.max_lat, self.lat_step)
        self.lon_edges = _edges(extent.min_lon, extent.max_lon, self.lon_step)
        self.nrows = len(self.lat_edges) - 1
        self.ncols = len(self.lon_edges) - 1

    def __len__(self) -> int:
        return self.nrows * self.ncols

    def cell_box(self, stratum_id: int) -> BoundingBox:
        r, c = divmod(stratum_id, self.ncols)
        return BoundingBox(self.lon_edges[c], self.lat_edges[r], self.lon_edges[c + 1], self.lat_edges[r + 1])

    @cached_property
    def strata(self) -> list[Stratum]:
        return [Stratum(i, box=self.cell_box(i)) for i in range(len(self))]

    def assign(self, p: GeoPoint) -> Optional[int]:
        if not self.extent.contains(p):
            return None
        r = _locate(p.lat, self.extent.min_lat, self.lat_step, self.lat_edges)
        c = _locate(p.lon, self.extent.min_lon, self.lon_step, self.lon_edges)
        return r * self.ncols + c

    def assign_many(self, lat, lon) -> np.ndarray:
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        e = self.extent
        inside = (lat >= e.min_lat) & (lat <= e.max_lat) & (lon >= e.min_lon) & (lon <= e.max_lon)
        r = _locate_many(lat, e.min_lat, self.lat_step, self.lat_edges)
        c = _locate_many(lon, e.min_lon, self.lon_step, self.lon_edges)
        return np.where(inside, r * self.ncols + c, -1)

    def to_geojson(self) -> dict:
        doc = super().to_geojson()
        doc["grid"] = {"extent": self.extent.as_list(), "cell_size_m": self.spatial_granularity_m}
        return doc


def _edges(lo: float, hi: float, step: float) -> np.ndarray:
    n = max(1, math.ceil((hi - lo) / step))
    if n > 1 and (hi - lo) - (n - 1) * step < SLIVER_FRACTION * step:
        n -= 1
    edges = lo + step * np.arange(n + 1, dtype=float)
    edges[-1] = hi
    return edges


def _locate(v: float, lo: float, step: float, edges: np.ndarray) -> int:
    n = len(edges) - 1
    k = min(max(int(math.floor((v - lo) / step)), 0), n - 1)
    # floor may be off by one near edges; the closed-interval rule picks the lower cell
    while k > 0 and v <= edges[k]:
        k -= 1
    while k < n - 1 and v > edges[k + 1]:
        k += 1
    return k


def _locate_many(v: np.ndarray, lo: float, step: float, edges: np.ndarray) -> np.ndarray:
    n = len(edges) - 1
    k = np.clip(np.floor((v - lo) / step), 0, n - 1).astype(np.int64)
    for _ in range(2):
        down = (k > 0) & (v <= edges[k])
        k = k - down
        up = (k < n - 1) & (v > edges[np.minimum(k + 1, n)])
        k = k + up
    return k


def make_grid(extent: BoundingBox, cell_size_m: float) -> GridStratification:
    """Tile `extent` with cells of roughly `cell_size_m` meters per side.

    Degree steps are fixed at the extent's center latitude. Ids run row-major
    from the (min_lat, min_lon) corner; the last row and column are clipped
    to the extent.
    """
    return GridStratification(extent, cell_size_m)


class PolygonStratification(Stratification):
    def __init__(self, strata: Sequence[Stratum]):
        if not strata:
            raise StrataError("no strata")
        ids = [s.stratum_id for s in strata]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise StrataError(f"duplicate stratum_id: {dup}")
        self._strata = sorted(strata, key=lambda s: s.stratum_id)
        self._boxes = [_ring_box(s.ring) for s in self._strata]
        self.extent = BoundingBox(
            min(b.min_lon for b in self._boxes), min(b.min_lat for b in self._boxes),
            max(b.max_lon for b in self._boxes), max(b.max_lat for b in self._boxes),
        )

    @property
    def strata(self) -> list[Stratum]:
        return list(self._strata)

    def assign(self, p: GeoPoint) -> Optional[int]:
        for s, box in zip(self._strata, self._boxes):
            if box.contains(p) and point_in_ring(p.lon, p.lat, s.ring):
                return s.stratum_id
        return None

    def assign_many(self, lat, lon) -> np.ndarray:
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        out = np.full(lat.shape, -1, dtype=np.int64)
        for s, b in zip(self._strata, self._boxes):
            cand = np.flatnonzero(
                (out < 0) & (lat >= b.min_lat) & (lat <= b.max_lat) & (lon >= b.min_lon) & (lon <= b.max_lon)
            )
            if cand.size:
                hit = points_in_ring(lon[cand], lat[cand], s.ring)
                out[cand[hit]] = s.stratum_id
        return out


def _ring_box(ring: Ring) -> BoundingBox:
    xs = [v[0] for v in ring]
    ys = [v[1] for v in ring]
    return BoundingBox(min(xs), min(ys), max(xs), max(ys))


def _on_segment(px, py, ax, ay, bx, by) -> bool:
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    return cross == 0 and min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by)


def point_in_ring(x: float, y: float, ring: Ring) -> bool:
    """Even-odd ray cast; points on the boundary count as inside."""
    inside = False
    n = len(ring)
    for i in range(n):
        ax, ay = ring[i]
        bx, by = ring[(i + 1) % n]
        if _on_segment(x, y, ax, ay, bx, by):
            return True
        if (ay > y) != (by > y) and x < (bx - ax) * (y - ay) / (by - ay) + ax:
            inside = not inside
    return inside


def points_in_ring(x: np.ndarray, y: np.ndarray, ring: Ring) -> np.ndarray:
    inside = np.zeros(x.shape, dtype=bool)
    boundary = np.zeros(x.shape, dtype=bool)
    n = len(ring)
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(n):
            ax, ay = ring[i]
            bx, by = ring[(i + 1) % n]
            cross = (bx - ax) * (y - ay) - (by - ay) * (x - ax)
            boundary |= (cross == 0) & (x >= min(ax, bx)) & (x <= max(ax, bx)) & (y >= min(ay, by)) & (y <= max(ay, by))
            straddle = (ay > y) != (by > y)
            if ay != by:
                inside ^= straddle & (x < (bx - ax) * (y - ay) / (by - ay) + ax)
    return inside | boundary


def _orient(a, b, c) -> int:
    v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    return (v > 0) - (v < 0)


def _segments_touch(p1, p2, q1, q2) -> bool:
    o1, o2 = _orient(p1, p2, q1), _orient(p1, p2, q2)
    o3, o4 = _orient(q1, q2, p1), _orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    return (
        (o1 == 0 and _on_segment(*q1, *p1, *p2))
        or (o2 == 0 and _on_segment(*q2, *p1, *p2))
        or (o3 == 0 and _on_segment(*p1, *q1, *q2))
        or (o4 == 0 and _on_segment(*p2, *q1, *q2))
    )


def validate_ring(coords) -> Ring:
    """Normalize a GeoJSON ring to an open tuple of (lon, lat), rejecting bad geometry."""
    try:
        pts = [(float(c[0]), float(c[1])) for c in coords]
    except (TypeError, ValueError, IndexError) as exc:
        raise StrataError(f"malformed ring coordinates: {exc}") from None
    if len(pts) > 1 and pts[0] == pts[-1]:
        pts = pts[:-1]
    if len(set(pts)) < 3:
        raise StrataError("polygon ring needs at least 3 distinct vertices")
    for lon, lat in pts:
        GeoPoint(lat, lon)
    n = len(pts)
    for i in range(n):
        a1, a2 = pts[i], pts[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue  # adjacent through the closing edge
            b1, b2 = pts[j], pts[(j + 1) % n]
            if _segments_touch(a1, a2, b1, b2):
                raise StrataError(f"self-intersecting ring (edges {i} and {j})")
    return tuple(pts)


def load_custom_strata(document: Union[dict, str]) -> PolygonStratification:
    """Build polygon strata from a GeoJSON FeatureCollection (dict or JSON text).

    Features without a ``stratum_id`` property take their position in the
    feature list as id.
    """
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise StrataError(f"strata document is not valid JSON: {exc}") from None
    if not isinstance(document, dict) or document.get("type") != "FeatureCollection":
        raise StrataError("strata document must be a GeoJSON FeatureCollection")
    features = document.get("features")
    if not isinstance(features, list):
        raise StrataError("FeatureCollection has no feature list")
    strata = []
    for pos, feat in enumerate(features):
        geom = (feat or {}).get("geometry") or {}
        if geom.get("type") != "Polygon":
            raise StrataError(f"feature {pos}: only Polygon geometries are supported")
        rings = geom.get("coordinates") or []
        if len(rings) != 1:
            raise StrataError(f"feature {pos}: polygons must have exactly one ring (no holes)")
        props = feat.get("properties") or {}
        sid = props.get("stratum_id", pos)
        if isinstance(sid, bool) or not isinstance(sid, int) or sid < 0:
            raise StrataError(f"feature {pos}: stratum_id must be a non-negative integer")
        try:
            ring = validate_ring(rings[0])
        except ValueError as exc:
            raise StrataError(f"feature {pos}: {exc}") from None
        strata.append(Stratum(sid, ring=ring))
    return PolygonStratification(strata)


def read_strata(path: Union[str, Path]) -> Stratification:
    """Load a strata file; grids exported by this package are rebuilt arithmetically."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StrataError(f"{path}: not valid JSON: {exc}") from None
    grid = doc.get("grid") if isinstance(doc, dict) else None
    if grid:
        strat = make_grid(BoundingBox.from_list(grid["extent"]), float(grid["cell_size_m"]))
        if len(strat) != len(doc.get("features", [])):
            raise StrataError(f"{path}: grid header does not match its {len(doc.get('features', []))} features")
        return strat
    return load_custom_strata(doc)


def write_strata(strat: Stratification, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(strat.to_geojson()), encoding="utf-8")
