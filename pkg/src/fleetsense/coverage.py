"""Per-vehicle coverage sets over (stratum, interval) cells and the coverage metric."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple, Optional

import numpy as np


class CoverageCell(NamedTuple):
    stratum_id: int
    interval_id: int


class WeightMap:
    """Weight per coverage cell; cells not listed get `default`."""

    def __init__(self, weights: Optional[Mapping[CoverageCell, float]] = None, default: float = 1):
        if default < 0:
            raise ValueError("default weight must be non-negative")
        self.default = default
        self._w: dict[CoverageCell, float] = {}
        for cell, w in (weights or {}).items():
            if w < 0:
                raise ValueError(f"negative weight {w} for cell {tuple(cell)}")
            self._w[CoverageCell(*cell)] = w
        self.is_uniform = default == 1 and all(w == 1 for w in self._w.values())

    def __call__(self, cell) -> float:
        return self._w.get(cell, self.default)

    def __len__(self) -> int:
        return len(self._w)

    def to_json(self) -> dict:
        return {
            "default": self.default,
            "weights": [[c.stratum_id, c.interval_id, w] for c, w in sorted(self._w.items())],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "WeightMap":
        try:
            entries = {CoverageCell(int(s), int(t)): w for s, t, w in doc.get("weights", [])}
        except (TypeError, ValueError) as exc:
            raise ValueError(f"bad weights document: {exc}") from None
        return cls(entries, default=doc.get("default", 1))


@dataclass(frozen=True)
class CoverageMatrix:
    """Coverage sets V_i keyed by vehicle id, plus each vehicle's record count."""

    sets: dict[int, frozenset]
    record_counts: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        counts = {v: self.record_counts.get(v, 0) for v in sorted(self.sets)}
        object.__setattr__(self, "record_counts", counts)

    @property
    def vehicles(self) -> list[int]:
        return sorted(self.sets)

    @cached_property
    def universe(self) -> frozenset:
        out = set()
        for s in self.sets.values():
            out |= s
        return frozenset(out)

    def __getitem__(self, vehicle_id: int) -> frozenset:
        return self.sets[vehicle_id]

    def __contains__(self, vehicle_id) -> bool:
        return vehicle_id in self.sets

    def to_json(self) -> dict:
        return {
            "universe_size": len(self.universe),
            "vehicles": {
                str(v): [[c.stratum_id, c.interval_id] for c in sorted(self.sets[v])] for v in self.vehicles
            },
            "record_counts": {str(v): self.record_counts[v] for v in self.vehicles},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CoverageMatrix":
        try:
            sets = {int(v): frozenset(CoverageCell(int(s), int(t)) for s, t in cells)
                    for v, cells in doc["vehicles"].items()}
            counts = {int(v): int(n) for v, n in doc.get("record_counts", {}).items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"bad coverage document: {exc}") from None
        m = cls(sets, counts)
        if "universe_size" in doc and doc["universe_size"] != len(m.universe):
            raise ValueError(f"coverage document universe_size {doc['universe_size']} != {len(m.universe)}")
        return m


def build_coverage(store) -> CoverageMatrix:
    """Collapse a store's records to distinct (stratum, interval) cells per vehicle."""
    counts = store.record_counts()
    sets: dict[int, frozenset] = {v: frozenset() for v in counts}
    keep = store.stratum_id >= 0
    if keep.any():
        rows = np.unique(
            np.stack((store.vehicle_id[keep], store.stratum_id[keep], store.interval_id[keep]), axis=1), axis=0
        )
        cut = np.flatnonzero(np.diff(rows[:, 0])) + 1
        for block in np.split(rows, cut):
            sets[int(block[0, 0])] = frozenset(map(CoverageCell._make, block[:, 1:].tolist()))
    return CoverageMatrix(sets, counts)


def union_coverage(m: CoverageMatrix, vehicles: Iterable[int]) -> frozenset:
    out = set()
    for v in vehicles:
        if v not in m.sets:
            raise KeyError(f"unknown vehicle id {v}")
        out |= m.sets[v]
    return frozenset(out)


def weighted_value(cells: Iterable, w: Optional[WeightMap] = None):
    if w is None:
        return len(cells) if hasattr(cells, "__len__") else sum(1 for _ in cells)
    return math.fsum(w(c) for c in cells)


def percentage_coverage(m: CoverageMatrix, selected: Iterable[int], count_multiplicity: bool = False) -> float:
    """100 * |union of selected sets| / |union of all sets|.

    Selected ids missing from `m` contribute nothing. With
    `count_multiplicity`, numerator and denominator instead sum the per-vehicle
    set sizes, so a cell visited by k vehicles counts k times.
    """
    chosen = [v for v in dict.fromkeys(selected) if v in m.sets]
    if count_multiplicity:
        num = sum(len(m.sets[v]) for v in chosen)
        den = sum(len(s) for s in m.sets.values())
    else:
        num = len(union_coverage(m, chosen))
        den = len(m.universe)
    return 100.0 * num / den if den else 0.0


def holdout_split(records, boundary):
    """Split records into (timestamp < boundary, timestamp >= boundary), keeping input order."""
    train, test = [], []
    for r in records:
        (train if r.timestamp < boundary else test).append(r)
    return train, test


def evaluate_selection(train_store, test_store, selected: Iterable[int]) -> float:
    """Percentage Coverage of `selected` (chosen on train data) over the test period."""
    a, b = train_store.config, test_store.config
    if a.temporal_granularity_s != b.temporal_granularity_s or a.epoch != b.epoch:
        raise ValueError("train and test stores use different temporal granularity")
    sa, sb = train_store.stratification, test_store.stratification
    if sa is not sb and (sa is None or sb is None or sa.extent != sb.extent or len(sa) != len(sb)):
        raise ValueError("train and test stores use different stratifications")
    return percentage_coverage(build_coverage(test_store), selected)


def write_coverage(m: CoverageMatrix, path, extra: Optional[dict] = None) -> None:
    doc = dict(extra or {})
    doc.update(m.to_json())
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def read_coverage(path) -> CoverageMatrix:
    with open(path, encoding="utf-8") as fh:
        return CoverageMatrix.from_json(json.load(fh))
