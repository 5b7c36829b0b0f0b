"""Vehicle selection: greedy weighted max coverage and its variants.

All greedy variants share one loop. Each round picks the eligible, unselected
vehicle with the largest weighted marginal gain, ties going to the smallest
vehicle id. Candidate gains are evaluated lazily from a max-heap of stale
upper bounds, which is valid because coverage gains only shrink as the
covered set grows; the picks are the same as re-scoring every vehicle each
round.
"""

from __future__ import annotations

import heapq
import itertools
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .coverage import CoverageMatrix, WeightMap, weighted_value

ALL_FLEET = "all_fleet"
SELECTED_ONLY = "selected_only"
MODES = (ALL_FLEET, SELECTED_ONLY)

BUDGET_EXHAUSTED = "budget_exhausted"
NO_GAIN = "no_gain"
COVERAGE_REACHED = "coverage_reached"
INFEASIBLE = "infeasible"

MAX_BRUTE_FORCE_VEHICLES = 20
RANDOM_MP_GENERATOR = "MT19937 (Python random.Random)"


@dataclass(frozen=True)
class SelectionConfig:
    budget_m: int = 0
    min_ref_colocations: int = 0
    min_sensor_colocations: int = 0
    weights: Optional[WeightMap] = None
    sensor_colocation_mode: str = ALL_FLEET

    def __post_init__(self):
        if self.budget_m < 0 or self.min_ref_colocations < 0 or self.min_sensor_colocations < 0:
            raise ValueError("budget and colocation thresholds must be non-negative")
        if self.sensor_colocation_mode not in MODES:
            raise ValueError(f"sensor_colocation_mode must be one of {MODES}")

    @property
    def constrained(self) -> bool:
        return self.min_ref_colocations > 0 or self.min_sensor_colocations > 0

    def to_json(self) -> dict:
        return {
            "budget_m": self.budget_m,
            "min_ref_colocations": self.min_ref_colocations,
            "min_sensor_colocations": self.min_sensor_colocations,
            "sensor_colocation_mode": self.sensor_colocation_mode,
            "weights": None if self.weights is None else self.weights.to_json(),
        }


@dataclass
class ColocationProfile:
    """Reference colocations per vehicle and sensor colocations per vehicle pair."""

    ref_colocations: dict[int, int] = field(default_factory=dict)
    sensor_pairs: dict[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self):
        pairs = {}
        for (a, b), n in self.sensor_pairs.items():
            if a == b:
                raise ValueError(f"self pair ({a}, {b}) in colocation profile")
            if n < 0:
                raise ValueError("colocation counts must be non-negative")
            key = (min(a, b), max(a, b))
            if key in pairs and pairs[key] != n:
                raise ValueError(f"asymmetric pair counts for {key}")
            pairs[key] = n
        self.sensor_pairs = pairs
        self._partners: dict[int, dict[int, int]] = {}
        for (a, b), n in pairs.items():
            self._partners.setdefault(a, {})[b] = n
            self._partners.setdefault(b, {})[a] = n

    def ref(self, v: int) -> int:
        return self.ref_colocations.get(v, 0)

    def pair(self, a: int, b: int) -> int:
        return self.sensor_pairs.get((min(a, b), max(a, b)), 0)

    def sensor_total(self, v: int, among: Optional[Iterable[int]] = None) -> int:
        """Sum of v's pair counts, over the whole fleet or only partners in `among`."""
        partners = self._partners.get(v, {})
        if among is None:
            return sum(partners.values())
        return sum(partners.get(u, 0) for u in among if u != v)

    def to_json(self) -> dict:
        return {
            "ref_colocations": {str(v): n for v, n in sorted(self.ref_colocations.items())},
            "sensor_colocations": [[a, b, n] for (a, b), n in sorted(self.sensor_pairs.items())],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ColocationProfile":
        try:
            ref = {int(v): int(n) for v, n in doc.get("ref_colocations", {}).items()}
            pairs = {(int(a), int(b)): int(n) for a, b, n in doc.get("sensor_colocations", [])}
        except (TypeError, ValueError) as exc:
            raise ValueError(f"bad colocations document: {exc}") from None
        return cls(ref, pairs)

    @classmethod
    def from_store(cls, store, monitors=(), vehicles: Optional[Iterable[int]] = None) -> "ColocationProfile":
        vehicles = store.vehicle_ids if vehicles is None else list(vehicles)
        ref = {v: store.count_reference_colocations(v, monitors) for v in vehicles}
        keep = set(vehicles)
        pairs = {k: n for k, n in store.pairwise_colocation_counts().items() if k[0] in keep and k[1] in keep}
        return cls(ref, pairs)


@dataclass
class SelectionResult:
    chosen: list[int]
    marginal_gains: list[float]
    total_weighted_coverage: float
    feasible: bool
    stop_reason: str
    # coverage already held before the first pick (incremental deployments)
    base_weighted_coverage: float = 0

    def to_json(self) -> dict:
        return {
            "chosen": list(self.chosen),
            "marginal_gains": list(self.marginal_gains),
            "total_weighted_coverage": self.total_weighted_coverage,
            "base_weighted_coverage": self.base_weighted_coverage,
            "feasible": self.feasible,
            "stop_reason": self.stop_reason,
        }


def _gain_fn(m: CoverageMatrix, weights: Optional[WeightMap]):
    if weights is None or weights.is_uniform:
        return lambda v, covered: len(m.sets[v] - covered)
    return lambda v, covered: math.fsum(weights(c) for c in m.sets[v] if c not in covered)


def _value(cells, weights: Optional[WeightMap]):
    if weights is None or weights.is_uniform:
        return len(cells)
    return math.fsum(weights(c) for c in cells)


def _static_candidates(m: CoverageMatrix, profile: Optional[ColocationProfile], cfg: SelectionConfig) -> list[int]:
    """Vehicles passing the thresholds that do not depend on the current selection."""
    out = []
    for v in m.vehicles:
        if cfg.min_ref_colocations > 0 and (profile is None or profile.ref(v) < cfg.min_ref_colocations):
            continue
        if cfg.min_sensor_colocations > 0 and cfg.sensor_colocation_mode == ALL_FLEET:
            if profile is None or profile.sensor_total(v) < cfg.min_sensor_colocations:
                continue
        out.append(v)
    return out


def _run_greedy(m, profile, cfg: SelectionConfig, existing=(), max_picks=None, target=None) -> SelectionResult:
    weights = cfg.weights
    gain = _gain_fn(m, weights)
    covered = set()
    for v in existing:
        if v not in m.sets:
            raise KeyError(f"unknown vehicle id {v}")
        covered |= m.sets[v]
    base = _value(covered, weights)
    value = base

    selected = set(existing)
    static = [v for v in _static_candidates(m, profile, cfg) if v not in selected]
    dynamic = cfg.min_sensor_colocations > 0 and cfg.sensor_colocation_mode == SELECTED_ONLY
    if dynamic:
        partner_sum = {v: (profile.sensor_total(v, selected) if profile else 0) for v in static}

    # heap of (-gain bound, vehicle id, round the bound was computed in)
    heap = [(-gain(v, covered), v, 0) for v in static]
    heapq.heapify(heap)
    chosen, gains = [], []
    rnd = 0
    stop = None
    while True:
        if max_picks is not None and len(chosen) >= max_picks:
            stop = BUDGET_EXHAUSTED
            break
        if target is not None and value >= target:
            stop = COVERAGE_REACHED
            break
        best = None
        parked = []
        while heap:
            neg, v, stamp = heapq.heappop(heap)
            if dynamic and partner_sum[v] < cfg.min_sensor_colocations:
                parked.append((neg, v, stamp))
                continue
            if stamp == rnd:
                best = (-neg, v)
                break
            heapq.heappush(heap, (-gain(v, covered), v, rnd))
        for item in parked:
            heapq.heappush(heap, item)
        if best is None:
            # no eligible vehicle left
            stop = INFEASIBLE if (cfg.constrained or target is not None) else NO_GAIN
            break
        g, v = best
        if g <= 0:
            heapq.heappush(heap, (-g, v, rnd))
            stop = INFEASIBLE if target is not None else NO_GAIN
            break
        chosen.append(v)
        gains.append(g)
        covered |= m.sets[v]
        value = _value(covered, weights)
        selected.add(v)
        if dynamic:
            for u in partner_sum:
                partner_sum[u] += profile.pair(u, v)
        rnd += 1

    if target is not None:
        feasible = stop == COVERAGE_REACHED
    elif stop == BUDGET_EXHAUSTED:
        feasible = True
    else:
        # feasible when at least max_picks vehicles were eligible, even if the later ones add nothing
        eligible_left = sum(1 for _, v, _ in heap if not dynamic or partner_sum[v] >= cfg.min_sensor_colocations)
        feasible = len(chosen) + eligible_left >= max_picks
    return SelectionResult(chosen, gains, value, feasible, stop, base)


def greedy_max_coverage(m: CoverageMatrix, profile: Optional[ColocationProfile], cfg: SelectionConfig) -> SelectionResult:
    """Pick up to `cfg.budget_m` vehicles maximizing weighted coverage.

    Stops early with ``no_gain`` once no eligible vehicle adds coverage. When
    fewer than ``budget_m`` vehicles are eligible (fleet too small, or the
    colocation thresholds filter them out) ``feasible`` is False.
    """
    return _run_greedy(m, profile, cfg, max_picks=cfg.budget_m)


def greedy_min_budget(m: CoverageMatrix, k: float, profile: Optional[ColocationProfile] = None,
                      cfg: Optional[SelectionConfig] = None) -> SelectionResult:
    """Add vehicles greedily until weighted coverage reaches `k` (budget in cfg is ignored)."""
    if k < 0:
        raise ValueError("minimum coverage k must be non-negative")
    return _run_greedy(m, profile, cfg or SelectionConfig(), target=k)


def greedy_incremental(m: CoverageMatrix, profile: Optional[ColocationProfile], existing: Sequence[int],
                       extra_budget: int, cfg: SelectionConfig) -> SelectionResult:
    """Extend an existing deployment by up to `extra_budget` vehicles.

    Coverage (and, in selected_only mode, sensor colocations) start from the
    existing vehicles; only the new picks are listed in the result, while
    the total includes the existing coverage.
    """
    if extra_budget < 0:
        raise ValueError("extra budget must be non-negative")
    return _run_greedy(m, profile, cfg, existing=list(existing), max_picks=extra_budget)


def brute_force_optimum(m: CoverageMatrix, budget: int, profile: Optional[ColocationProfile] = None,
                        cfg: Optional[SelectionConfig] = None):
    """Exact optimum by enumerating every eligible subset of size <= budget.

    Returns (value, ids) where ids is the lexicographically smallest sorted
    tuple among the maximizers. Only thresholds independent of the
    selection are applied, so selected_only sensor constraints are rejected.
    """
    cfg = cfg or SelectionConfig()
    if len(m.sets) > MAX_BRUTE_FORCE_VEHICLES:
        raise ValueError(f"brute force supports at most {MAX_BRUTE_FORCE_VEHICLES} vehicles, got {len(m.sets)}")
    if cfg.min_sensor_colocations > 0 and cfg.sensor_colocation_mode == SELECTED_ONLY:
        raise ValueError("brute force does not support selected_only sensor constraints")
    weights = cfg.weights
    cands = _static_candidates(m, profile, cfg)
    cells = sorted(set().union(*(m.sets[v] for v in cands))) if cands else []
    bit = {c: i for i, c in enumerate(cells)}
    cell_w = [1 if weights is None else weights(c) for c in cells]
    masks = [sum(1 << bit[c] for c in m.sets[v]) for v in cands]

    def mask_value(mask):
        if weights is None or weights.is_uniform:
            return bin(mask).count("1")
        return math.fsum(cell_w[i] for i in range(len(cells)) if mask >> i & 1)

    best_val, best_set = 0, ()
    for size in range(1, min(budget, len(cands)) + 1):
        for combo in itertools.combinations(range(len(cands)), size):
            mask = 0
            for i in combo:
                mask |= masks[i]
            val = mask_value(mask)
            ids = tuple(cands[i] for i in combo)
            if val > best_val or (val == best_val and ids < best_set):
                best_val, best_set = val, ids
    if best_val == 0:
        best_set = ()
    return best_val, best_set


def _ordered_result(m: CoverageMatrix, chosen: list[int], budget: int, weights=None) -> SelectionResult:
    covered = set()
    gains = []
    gain = _gain_fn(m, weights)
    for v in chosen:
        gains.append(gain(v, covered))
        covered |= m.sets[v]
    full = len(chosen) >= budget
    return SelectionResult(
        chosen, gains, _value(covered, weights), full, BUDGET_EXHAUSTED if full else INFEASIBLE,
    )


def baseline_random_mp(m: CoverageMatrix, k_min_records: int, budget: int, seed: int,
                       weights: Optional[WeightMap] = None) -> SelectionResult:
    """Random-MP: a seeded uniform sample among vehicles reporting >= k_min_records records."""
    rng = random.Random(seed)
    eligible = [v for v in m.vehicles if m.record_counts.get(v, 0) >= k_min_records]
    chosen = rng.sample(eligible, min(budget, len(eligible)))
    return _ordered_result(m, chosen, budget, weights)


def baseline_max_points(m: CoverageMatrix, budget: int, weights: Optional[WeightMap] = None) -> SelectionResult:
    """Max Points: the `budget` vehicles with the most records, ties to the smaller id."""
    ranked = sorted(m.vehicles, key=lambda v: (-m.record_counts.get(v, 0), v))
    return _ordered_result(m, ranked[:budget], budget, weights)


def selection_value(m: CoverageMatrix, vehicles: Iterable[int], weights: Optional[WeightMap] = None):
    """Weighted coverage of a vehicle set (convenience for reports and checks)."""
    covered = set()
    for v in vehicles:
        covered |= m.sets[v]
    return weighted_value(covered, weights)
