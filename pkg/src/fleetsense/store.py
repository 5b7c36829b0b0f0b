"""In-memory mobility store with a (geohash cell, interval) bucket index.

Records are kept column-wise in numpy arrays sorted by bucket, so every bucket
is a contiguous slice. Colocation queries enumerate the buckets that can hold
a match and filter them exactly; results are identical to a linear scan.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .geo import (
    EARTH_RADIUS_M,
    GeoPoint,
    cell_counts,
    geohash_cell_index,
    haversine_many,
)
from .strata import Stratification

logger = logging.getLogger(__name__)

RECORD_FIELDS = ["vehicle_id", "timestamp", "lat", "lon"]
MONITOR_FIELDS = ["monitor_id", "lat", "lon", "period_s"]

# Slack added to query windows (degrees) so float rounding can't cause a miss.
_DEG_PAD = 1e-9


class MobilityRecord(NamedTuple):
    vehicle_id: int
    timestamp: int
    lat: float
    lon: float

    @property
    def location(self) -> GeoPoint:
        return GeoPoint(self.lat, self.lon)


class IndexedRecord(NamedTuple):
    vehicle_id: int
    timestamp: int
    lat: float
    lon: float
    stratum_id: Optional[int]
    interval_id: int

    @property
    def location(self) -> GeoPoint:
        return GeoPoint(self.lat, self.lon)


@dataclass(frozen=True)
class ReferenceMonitor:
    monitor_id: int
    location: GeoPoint
    reporting_period_s: float

    def __post_init__(self):
        if not self.reporting_period_s > 0:
            raise ValueError(f"monitor {self.monitor_id}: reporting period must be positive")


@dataclass(frozen=True)
class StoreConfig:
    temporal_granularity_s: int = 7200
    epoch: int = 0
    index_geohash_precision: int = 6
    colocation_spatial_radius_m: float = 50.0
    colocation_temporal_radius_s: float = 300.0

    def __post_init__(self):
        if not self.temporal_granularity_s > 0:
            raise ValueError("temporal granularity must be positive")
        if not 1 <= self.index_geohash_precision <= 12:
            raise ValueError("index geohash precision must be in 1..12")
        if not self.colocation_spatial_radius_m > 0 or not self.colocation_temporal_radius_s > 0:
            raise ValueError("colocation radii must be positive")
        if self.epoch < 0:
            raise ValueError("epoch must be non-negative")


class MobilityStore:
    def __init__(self, config: StoreConfig, stratification: Optional[Stratification],
                 vehicle_id, timestamp, lat, lon, malformed_count: int = 0):
        self.config = config
        self.stratification = stratification
        self.malformed_count = malformed_count
        p = config.index_geohash_precision
        self._nlat, self._nlon = cell_counts(p)

        interval = np.floor_divide(timestamp - config.epoch, config.temporal_granularity_s)
        if stratification is not None:
            stratum = stratification.assign_many(lat, lon)
        else:
            stratum = np.full(len(timestamp), -1, dtype=np.int64)
        lat_idx, lon_idx = geohash_cell_index(lat, lon, p)
        # full lexsort makes the layout independent of input order
        order = np.lexsort((lon, lat, vehicle_id, timestamp, lon_idx, lat_idx, interval))
        self.vehicle_id = vehicle_id[order]
        self.timestamp = timestamp[order]
        self.lat = lat[order]
        self.lon = lon[order]
        self.stratum_id = stratum[order]
        self.interval_id = interval[order]
        self._lat_idx = lat_idx[order]
        self._lon_idx = lon_idx[order]

        self._buckets: dict[tuple[int, int, int], tuple[int, int]] = {}
        n = len(order)
        if n:
            change = np.flatnonzero(
                (np.diff(self.interval_id) != 0) | (np.diff(self._lat_idx) != 0) | (np.diff(self._lon_idx) != 0)
            ) + 1
            starts = np.concatenate(([0], change))
            ends = np.concatenate((change, [n]))
            for s, e in zip(starts.tolist(), ends.tolist()):
                self._buckets[(int(self._lat_idx[s]), int(self._lon_idx[s]), int(self.interval_id[s]))] = (s, e)

        self._by_vehicle: dict[int, np.ndarray] = {}
        if n:
            vorder = np.lexsort((np.arange(n), self.timestamp, self.vehicle_id))
            vs = self.vehicle_id[vorder]
            cut = np.flatnonzero(np.diff(vs)) + 1
            for chunk in np.split(vorder, cut):
                self._by_vehicle[int(self.vehicle_id[chunk[0]])] = chunk

    def __len__(self) -> int:
        return len(self.timestamp)

    @property
    def vehicle_ids(self) -> list[int]:
        return sorted(self._by_vehicle)

    @property
    def bucket_count(self) -> int:
        return len(self._buckets)

    def record_counts(self) -> dict[int, int]:
        return {v: len(ix) for v, ix in sorted(self._by_vehicle.items())}

    def vehicle_indices(self, vehicle_id: int) -> np.ndarray:
        """Row indices of one vehicle's records, in time order."""
        return self._by_vehicle.get(vehicle_id, np.empty(0, dtype=np.int64))

    def record(self, i: int) -> IndexedRecord:
        sid = int(self.stratum_id[i])
        return IndexedRecord(
            int(self.vehicle_id[i]), int(self.timestamp[i]), float(self.lat[i]), float(self.lon[i]),
            None if sid < 0 else sid, int(self.interval_id[i]),
        )

    def records(self) -> list[IndexedRecord]:
        return [self.record(i) for i in range(len(self))]

    # -- spatial windows ------------------------------------------------

    def _lat_lon_window(self, lat_lo: float, lat_hi: float, radius_m: float):
        """Degree half-widths bounding every point within radius_m of a latitude band."""
        ang = radius_m / EARTH_RADIUS_M
        dlat = math.degrees(ang) + _DEG_PAD
        lat_lo = max(-90.0, lat_lo - dlat)
        lat_hi = min(90.0, lat_hi + dlat)
        cos_max = math.cos(math.radians(max(abs(lat_lo), abs(lat_hi))))
        s = math.sin(ang / 2)
        if cos_max <= 0 or s >= cos_max:
            dlon = None  # window wraps the whole parallel
        else:
            dlon = math.degrees(2 * math.asin(s / cos_max)) + _DEG_PAD
        return lat_lo, lat_hi, dlon

    def _lon_index_ranges(self, lon_lo: float, lon_hi: float) -> list[tuple[int, int]]:
        if lon_hi - lon_lo >= 360.0:
            return [(0, self._nlon - 1)]
        p = self.config.index_geohash_precision
        spans = []
        if lon_lo < -180.0:
            spans += [(lon_lo + 360.0, 180.0), (-180.0, lon_hi)]
        elif lon_hi > 180.0:
            spans += [(lon_lo, 180.0), (-180.0, lon_hi - 360.0)]
        else:
            spans.append((lon_lo, lon_hi))
        ranges = []
        for a, b in spans:
            # 180 itself maps to index 0 under normalization; use the last cell instead
            ia = int(geohash_cell_index(0.0, a, p)[1]) if a < 180.0 else self._nlon - 1
            ib = int(geohash_cell_index(0.0, b, p)[1]) if b < 180.0 else self._nlon - 1
            ranges.append((ia, ib))
        return ranges

    def _candidate_rows(self, lat_lo, lat_hi, lon_lo, lon_hi, int_lo, int_hi) -> np.ndarray:
        p = self.config.index_geohash_precision
        la0 = int(geohash_cell_index(lat_lo, 0.0, p)[0])
        la1 = int(geohash_cell_index(lat_hi, 0.0, p)[0])
        lon_ranges = self._lon_index_ranges(lon_lo, lon_hi)
        n_keys = (la1 - la0 + 1) * sum(b - a + 1 for a, b in lon_ranges) * (int_hi - int_lo + 1)
        slices = []
        if n_keys <= len(self._buckets):
            for t in range(int_lo, int_hi + 1):
                for la in range(la0, la1 + 1):
                    for a, b in lon_ranges:
                        for lo in range(a, b + 1):
                            hit = self._buckets.get((la, lo, t))
                            if hit is not None:
                                slices.append(hit)
        else:
            for (la, lo, t), hit in self._buckets.items():
                if la0 <= la <= la1 and int_lo <= t <= int_hi and any(a <= lo <= b for a, b in lon_ranges):
                    slices.append(hit)
        if not slices:
            return np.empty(0, dtype=np.int64)
        return np.concatenate([np.arange(s, e) for s, e in slices])

    def _interval_range(self, t_lo: float, t_hi: float) -> tuple[int, int]:
        g = self.config.temporal_granularity_s
        e = self.config.epoch
        return math.floor((t_lo - e) / g), math.floor((t_hi - e) / g)

    def colocation_rows(self, center: GeoPoint, time: float) -> np.ndarray:
        """Row indices of records colocated with (center, time), ordered by (timestamp, vehicle_id, lat, lon)."""
        cfg = self.config
        r, rt = cfg.colocation_spatial_radius_m, cfg.colocation_temporal_radius_s
        lat_lo, lat_hi, dlon = self._lat_lon_window(center.lat, center.lat, r)
        if dlon is None:
            lon_lo, lon_hi = -180.0, 180.0 + 360.0
        else:
            lon_lo, lon_hi = center.lon - dlon, center.lon + dlon
        int_lo, int_hi = self._interval_range(time - rt, time + rt)
        rows = self._candidate_rows(lat_lo, lat_hi, lon_lo, lon_hi, int_lo, int_hi)
        if rows.size == 0:
            return rows
        keep = np.abs(self.timestamp[rows] - time) <= rt
        rows = rows[keep]
        d = haversine_many(self.lat[rows], self.lon[rows], center.lat, center.lon)
        rows = rows[d <= r]
        return rows[np.lexsort((rows, self.lon[rows], self.lat[rows], self.vehicle_id[rows], self.timestamp[rows]))]

    def find_colocations(self, center: GeoPoint, time: float) -> list[IndexedRecord]:
        return [self.record(i) for i in self.colocation_rows(center, time).tolist()]

    # -- colocation counts ----------------------------------------------

    def count_reference_colocations(self, vehicle_id: int, monitors: Sequence[ReferenceMonitor]) -> int:
        rows = self.vehicle_indices(vehicle_id)
        if rows.size == 0:
            return 0
        cfg = self.config
        ts = self.timestamp[rows].astype(float)
        total = 0
        for m in monitors:
            near = haversine_many(self.lat[rows], self.lon[rows], m.location.lat, m.location.lon) <= cfg.colocation_spatial_radius_m
            k = np.maximum(np.floor((ts - cfg.epoch) / m.reporting_period_s + 0.5), 0)
            instant = cfg.epoch + k * m.reporting_period_s
            total += int(np.count_nonzero(near & (np.abs(ts - instant) <= cfg.colocation_temporal_radius_s)))
        return total

    def count_pairwise_colocations(self, vehicle_a: int, vehicle_b: int) -> int:
        if vehicle_a == vehicle_b:
            raise ValueError("pairwise colocations need two distinct vehicles")
        return self._pair_count(self.vehicle_indices(vehicle_a), self.vehicle_indices(vehicle_b))

    def _pair_count(self, rows_a: np.ndarray, rows_b: np.ndarray) -> int:
        if rows_a.size == 0 or rows_b.size == 0:
            return 0
        cfg = self.config
        rt = cfg.colocation_temporal_radius_s
        tb = self.timestamp[rows_b]  # rows are time-ordered per vehicle
        total = 0
        for chunk in np.array_split(rows_a, max(1, rows_a.size // 20000)):
            ta = self.timestamp[chunk]
            lo = np.searchsorted(tb, ta - rt, side="left")
            hi = np.searchsorted(tb, ta + rt, side="right")
            width = hi - lo
            if not width.any():
                continue
            left = np.repeat(chunk, width)
            offs = np.arange(width.sum()) - np.repeat(np.cumsum(width) - width, width)
            right = rows_b[np.repeat(lo, width) + offs]
            d = _pair_distance(self.lat[left], self.lon[left], self.lat[right], self.lon[right])
            total += int(np.count_nonzero(d <= cfg.colocation_spatial_radius_m))
        return total

    def pairwise_colocation_counts(self) -> dict[tuple[int, int], int]:
        """Colocation counts for every vehicle pair (a < b) with at least one colocation.

        Joins each bucket with the neighbouring buckets that can hold a match.
        """
        cfg = self.config
        r, rt = cfg.colocation_spatial_radius_m, cfg.colocation_temporal_radius_s
        g, epoch = cfg.temporal_granularity_s, cfg.epoch
        lat_cell = 180.0 / self._nlat
        lon_cell = 360.0 / self._nlon
        counts: dict[tuple[int, int], int] = {}
        for (la, lo, t), (s, e) in self._buckets.items():
            cell_lat_lo = -90.0 + la * lat_cell
            lat_lo, lat_hi, dlon = self._lat_lon_window(cell_lat_lo, cell_lat_lo + lat_cell, r)
            if dlon is None:
                lon_lo, lon_hi = -180.0, 180.0 + 360.0
            else:
                cell_lon_lo = -180.0 + lo * lon_cell
                lon_lo, lon_hi = cell_lon_lo - dlon, cell_lon_lo + lon_cell + dlon
            t0 = epoch + t * g
            int_lo, int_hi = self._interval_range(t0 - rt, t0 + g + rt)
            cand = self._candidate_rows(lat_lo, lat_hi, lon_lo, lon_hi, int_lo, int_hi)
            left = np.arange(s, e)
            va = self.vehicle_id[left][:, None]
            vb = self.vehicle_id[cand][None, :]
            mask = va < vb
            mask &= np.abs(self.timestamp[left][:, None] - self.timestamp[cand][None, :]) <= rt
            li, ci = np.nonzero(mask)
            if li.size == 0:
                continue
            li, ci = left[li], cand[ci]
            d = _pair_distance(self.lat[li], self.lon[li], self.lat[ci], self.lon[ci])
            ok = d <= r
            if not ok.any():
                continue
            pairs = np.stack((self.vehicle_id[li[ok]], self.vehicle_id[ci[ok]]), axis=1)
            uniq, n = np.unique(pairs, axis=0, return_counts=True)
            for (a, b), c in zip(uniq.tolist(), n.tolist()):
                counts[(a, b)] = counts.get((a, b), 0) + c
        return dict(sorted(counts.items()))


def _pair_distance(lat1, lon1, lat2, lon2) -> np.ndarray:
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    h = np.sin((phi2 - phi1) / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(np.radians(lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def _valid_mask(vid, ts, lat, lon) -> np.ndarray:
    finite = np.isfinite(vid) & np.isfinite(ts) & np.isfinite(lat) & np.isfinite(lon)
    with np.errstate(invalid="ignore"):
        return (
            finite
            & (vid >= 0) & (vid == np.floor(vid))
            & (ts >= 0) & (ts == np.floor(ts))
            & (lat >= -90) & (lat <= 90) & (lon >= -180) & (lon <= 180)
        )


def ingest(records: Iterable[MobilityRecord], strat: Optional[Stratification], cfg: StoreConfig) -> MobilityStore:
    """Index records into a store. Invalid records are counted in `malformed_count`."""
    records = list(records)
    try:
        arr = np.array([tuple(r) for r in records], dtype=float).reshape(-1, 4)
        bad_rows = 0
    except (TypeError, ValueError):
        rows = []
        bad_rows = 0
        for r in records:
            try:
                row = tuple(float(x) for x in r)
            except (TypeError, ValueError):
                row = ()
            if len(row) == 4:
                rows.append(row)
            else:
                bad_rows += 1
        arr = np.array(rows, dtype=float).reshape(-1, 4)
    vid, ts, lat, lon = arr.T
    ok = _valid_mask(vid, ts, lat, lon)
    malformed = bad_rows + int(np.count_nonzero(~ok))
    if malformed:
        logger.warning("ingest: %d malformed record(s) skipped", malformed)
    lon = np.where(lon[ok] == 180.0, -180.0, lon[ok])
    return MobilityStore(
        cfg, strat,
        vid[ok].astype(np.int64), ts[ok].astype(np.int64), lat[ok].copy(), lon,
        malformed_count=malformed,
    )


# -- files ----------------------------------------------------------------

def read_records_csv(path) -> tuple[list[MobilityRecord], int]:
    """Parse a records CSV. Returns (records, number of malformed lines)."""
    records = []
    malformed = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return records, 0
        if [h.strip() for h in header] != RECORD_FIELDS:
            raise ValueError(f"{path}: expected header {','.join(RECORD_FIELDS)}, got {','.join(header)}")
        for row in reader:
            if not row:
                continue
            try:
                vid, ts, lat, lon = row
                rec = MobilityRecord(int(vid), int(ts), float(lat), float(lon))
            except ValueError:
                malformed += 1
                continue
            if rec.vehicle_id < 0 or rec.timestamp < 0 or not (-90 <= rec.lat <= 90) or not (-180 <= rec.lon <= 180):
                malformed += 1
                continue
            records.append(rec)
    return records, malformed


def write_records_csv(records: Iterable[MobilityRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow((r.vehicle_id, r.timestamp, repr(float(r.lat)), repr(float(r.lon))))


def read_monitors_csv(path) -> list[ReferenceMonitor]:
    monitors = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != MONITOR_FIELDS:
            raise ValueError(f"{path}: expected header {','.join(MONITOR_FIELDS)}")
        for n, row in enumerate(reader, start=2):
            try:
                monitors.append(ReferenceMonitor(
                    int(row["monitor_id"]), GeoPoint(float(row["lat"]), float(row["lon"])), float(row["period_s"]),
                ))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{n}: bad monitor row: {exc}") from None
    return monitors
