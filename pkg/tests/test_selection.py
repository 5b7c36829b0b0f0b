import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fleetsense.coverage import CoverageCell, CoverageMatrix, WeightMap, union_coverage, weighted_value
from fleetsense.geo import GeoPoint
from fleetsense.selection import (
    BUDGET_EXHAUSTED,
    COVERAGE_REACHED,
    INFEASIBLE,
    NO_GAIN,
    SELECTED_ONLY,
    ColocationProfile,
    SelectionConfig,
    baseline_max_points,
    baseline_random_mp,
    brute_force_optimum,
    greedy_incremental,
    greedy_max_coverage,
    greedy_min_budget,
)
from fleetsense.store import MobilityRecord, ReferenceMonitor, StoreConfig, ingest

from oracles import exhaustive_best, naive_greedy, scan_pairs, scan_reference

a, b, c, d, e = (CoverageCell(i, 0) for i in range(5))
THREE = CoverageMatrix({1: frozenset({a, b, c}), 2: frozenset({c, d}), 3: frozenset({d, e})},
                       {1: 10, 2: 3, 3: 8})

# rational upper bound on e (e = 2.71828182845...), so 1 - 1/E_HI > 1 - 1/e
E_HI = Fraction(2718281829, 10**9)


def test_greedy_three_vehicle_example():
    r = greedy_max_coverage(THREE, None, SelectionConfig(budget_m=2))
    assert r.chosen == [1, 3]
    assert r.marginal_gains == [3, 2]
    assert r.total_weighted_coverage == 5
    assert r.feasible and r.stop_reason == BUDGET_EXHAUSTED


def test_greedy_zero_budget():
    r = greedy_max_coverage(THREE, None, SelectionConfig(budget_m=0))
    assert r.chosen == [] and r.total_weighted_coverage == 0


def test_greedy_weighted_example():
    w = WeightMap({d: 10, e: 10})
    r = greedy_max_coverage(THREE, None, SelectionConfig(budget_m=2, weights=w))
    assert r.chosen == [3, 1]
    assert r.marginal_gains == [20, 3]
    assert r.total_weighted_coverage == 23


def test_greedy_ref_constraint_example():
    profile = ColocationProfile({1: 0, 2: 2, 3: 2})
    r = greedy_max_coverage(THREE, profile, SelectionConfig(budget_m=2, min_ref_colocations=1))
    assert r.chosen == [2, 3]
    assert r.total_weighted_coverage == 3
    assert r.feasible


def test_greedy_stops_at_zero_gain():
    m = CoverageMatrix({1: frozenset({a}), 2: frozenset({a}), 3: frozenset()})
    r = greedy_max_coverage(m, None, SelectionConfig(budget_m=3))
    assert r.chosen == [1]
    assert r.stop_reason == NO_GAIN and r.feasible
    short = greedy_max_coverage(m, None, SelectionConfig(budget_m=4))
    assert short.chosen == [1] and not short.feasible


def test_greedy_too_few_feasible_vehicles():
    profile = ColocationProfile({1: 5})
    r = greedy_max_coverage(THREE, profile, SelectionConfig(budget_m=2, min_ref_colocations=1))
    assert r.chosen == [1]
    assert not r.feasible


def test_min_budget_examples():
    r0 = greedy_min_budget(THREE, 0)
    assert r0.chosen == [] and r0.stop_reason == COVERAGE_REACHED and r0.feasible
    r5 = greedy_min_budget(THREE, 5)
    assert r5.chosen == [1, 3] and r5.stop_reason == COVERAGE_REACHED
    r6 = greedy_min_budget(THREE, 6)
    assert r6.stop_reason == INFEASIBLE and not r6.feasible
    assert r6.total_weighted_coverage == 5
    with pytest.raises(ValueError):
        greedy_min_budget(THREE, -1)


def test_incremental_examples():
    cfg = SelectionConfig()
    r = greedy_incremental(THREE, None, [1], 1, cfg)
    assert r.chosen == [3] and r.marginal_gains == [2]
    assert r.base_weighted_coverage == 3 and r.total_weighted_coverage == 5
    assert greedy_incremental(THREE, None, [1], 0, cfg).chosen == []
    plain = greedy_max_coverage(THREE, None, SelectionConfig(budget_m=2))
    inc = greedy_incremental(THREE, None, [], 2, cfg)
    assert (inc.chosen, inc.marginal_gains, inc.total_weighted_coverage) == (
        plain.chosen, plain.marginal_gains, plain.total_weighted_coverage)
    with pytest.raises(KeyError):
        greedy_incremental(THREE, None, [99], 1, cfg)


def test_brute_force_examples():
    assert brute_force_optimum(THREE, 2) == (5, (1, 3))
    assert brute_force_optimum(THREE, 0) == (0, ())
    assert brute_force_optimum(THREE, 7)[0] == 5
    profile = ColocationProfile({1: 0, 2: 1, 3: 1})
    assert brute_force_optimum(THREE, 3, profile, SelectionConfig(min_ref_colocations=1)) == (3, (2, 3))
    big = CoverageMatrix({v: frozenset({CoverageCell(v, 0)}) for v in range(21)})
    with pytest.raises(ValueError):
        brute_force_optimum(big, 2)


def test_random_mp_examples():
    for seed in range(20):
        r = baseline_random_mp(THREE, 5, 2, seed)
        assert set(r.chosen) == {1, 3}
    assert sorted(baseline_random_mp(THREE, 0, 10, 4).chosen) == [1, 2, 3]
    assert baseline_random_mp(THREE, 0, 2, 7).chosen == baseline_random_mp(THREE, 0, 2, 7).chosen


def test_random_mp_is_a_uniform_sample():
    m = CoverageMatrix({v: frozenset() for v in range(6)}, {v: 1 for v in range(6)})
    hits = [0] * 6
    for seed in range(3000):
        for v in baseline_random_mp(m, 1, 2, seed).chosen:
            hits[v] += 1
    # each vehicle should be drawn with probability 1/3
    assert all(abs(h / 3000 - 1 / 3) < 0.04 for h in hits)


def test_max_points_examples():
    r = baseline_max_points(THREE, 2)
    assert r.chosen == [1, 3]
    assert r.total_weighted_coverage == 5
    assert baseline_max_points(THREE, 0).chosen == []
    tie = CoverageMatrix({1: frozenset(), 2: frozenset()}, {1: 5, 2: 5})
    assert baseline_max_points(tie, 1).chosen == [1]


def _instance(rng, n, cells, max_weight=5):
    universe = [CoverageCell(i, 0) for i in range(cells)]
    sets = {v: frozenset(rng.sample(universe, rng.randint(0, min(8, cells)))) for v in rng.sample(range(100), n)}
    weights = WeightMap({x: rng.randint(1, max_weight) for x in universe})
    return CoverageMatrix(sets), weights


def test_lazy_greedy_matches_plain_greedy():
    rng = random.Random(17)
    for _ in range(300):
        m, w = _instance(rng, rng.randint(1, 15), rng.randint(1, 30))
        if rng.random() < 0.5:
            w = None
        budget = rng.randint(0, 8)
        r = greedy_max_coverage(m, None, SelectionConfig(budget_m=budget, weights=w))
        chosen, gains = naive_greedy(m.sets, budget, w or (lambda x: 1))
        assert r.chosen == chosen
        assert r.marginal_gains == gains


def test_approximation_ratio_exact():
    rng = random.Random(23)
    for _ in range(150):
        m, w = _instance(rng, rng.randint(1, 12), rng.randint(1, 25))
        budget = rng.randint(1, 5)
        cfg = SelectionConfig(budget_m=budget, weights=w)
        g = Fraction(greedy_max_coverage(m, None, cfg).total_weighted_coverage)
        opt, best = brute_force_optimum(m, budget, None, cfg)
        opt = Fraction(opt)
        assert opt == Fraction(exhaustive_best(m.sets, budget, w))
        assert opt == Fraction(weighted_value(union_coverage(m, best), w))
        # a sufficient check: greedy >= (1 - 1/E_HI) * opt implies greedy >= (1 - 1/e) * opt
        assert g >= (1 - 1 / E_HI) * opt
        assert g <= opt


def _profile(rng, vehicles, hi=4):
    ref = {v: rng.randint(0, hi) for v in vehicles}
    pairs = {}
    vs = sorted(vehicles)
    for i, x in enumerate(vs):
        for y in vs[i + 1:]:
            if rng.random() < 0.3:
                pairs[(x, y)] = rng.randint(1, 3)
    return ColocationProfile(ref, pairs)


def test_constraints_are_respected():
    rng = random.Random(31)
    for _ in range(200):
        m, w = _instance(rng, rng.randint(1, 12), 20)
        profile = _profile(rng, m.vehicles)
        cfg = SelectionConfig(budget_m=rng.randint(0, 6), min_ref_colocations=rng.randint(0, 3),
                              min_sensor_colocations=rng.randint(0, 4), weights=w)
        r = greedy_max_coverage(m, profile, cfg)
        eligible = [v for v in m.vehicles
                    if profile.ref(v) >= cfg.min_ref_colocations and profile.sensor_total(v) >= cfg.min_sensor_colocations]
        for v in r.chosen:
            assert v in eligible
        chosen, gains = naive_greedy(m.sets, cfg.budget_m, w, eligible)
        assert r.chosen == chosen
        opt, _ = brute_force_optimum(m, cfg.budget_m, profile, cfg)
        assert opt == exhaustive_best(m.sets, cfg.budget_m, w, eligible)
        assert r.feasible == (len(eligible) >= cfg.budget_m)


@settings(max_examples=150)
@given(st.dictionaries(st.integers(0, 12), st.frozensets(st.builds(CoverageCell, st.integers(0, 8), st.integers(0, 2)),
                                                         max_size=6), min_size=1, max_size=12),
       st.integers(0, 8))
def test_gains_non_increasing_and_total_consistent(sets, budget):
    m = CoverageMatrix(sets)
    r = greedy_max_coverage(m, None, SelectionConfig(budget_m=budget))
    assert len(r.chosen) <= budget
    assert all(x >= y for x, y in zip(r.marginal_gains, r.marginal_gains[1:]))
    assert r.total_weighted_coverage == len(union_coverage(m, r.chosen)) == sum(r.marginal_gains)


def test_min_budget_minimality():
    rng = random.Random(41)
    for _ in range(200):
        m, w = _instance(rng, rng.randint(1, 10), 20)
        total = weighted_value(m.universe, w)
        k = rng.uniform(0, total)
        r = greedy_min_budget(m, k, None, SelectionConfig(weights=w))
        assert r.stop_reason == COVERAGE_REACHED
        assert weighted_value(union_coverage(m, r.chosen), w) >= k
        if r.chosen:
            assert weighted_value(union_coverage(m, r.chosen[:-1]), w) < k


def test_selected_only_mode():
    m = CoverageMatrix({1: frozenset({a}), 2: frozenset({b, c, d}), 3: frozenset({e}), 4: frozenset({CoverageCell(9, 9)})})
    profile = ColocationProfile({}, {(1, 3): 2, (3, 4): 1, (2, 4): 5})
    cfg = SelectionConfig(budget_m=3, min_sensor_colocations=1, sensor_colocation_mode=SELECTED_ONLY)
    # nobody is colocated with an empty selection
    r = greedy_max_coverage(m, profile, cfg)
    assert r.chosen == [] and not r.feasible
    # seeded with vehicle 1: 3 becomes eligible, then 4 through 3, then 2 through 4
    inc = greedy_incremental(m, profile, [1], 3, cfg)
    assert inc.chosen == [3, 4, 2]
    # all_fleet mode sees every pair up front, so the largest set goes first
    fleet = greedy_incremental(m, profile, [1], 3, SelectionConfig(min_sensor_colocations=1))
    assert fleet.chosen == [2, 3, 4]
    with pytest.raises(ValueError):
        brute_force_optimum(m, 2, profile, cfg)


def test_profile_validation_and_json():
    p = ColocationProfile({1: 2}, {(3, 1): 4})
    assert p.pair(1, 3) == p.pair(3, 1) == 4
    assert p.sensor_total(1) == 4 and p.sensor_total(1, [2]) == 0
    assert ColocationProfile.from_json(p.to_json()).sensor_pairs == {(1, 3): 4}
    with pytest.raises(ValueError):
        ColocationProfile({}, {(2, 2): 1})
    with pytest.raises(ValueError):
        ColocationProfile({}, {(1, 2): 1, (2, 1): 2})
    with pytest.raises(ValueError):
        SelectionConfig(budget_m=-1)
    with pytest.raises(ValueError):
        SelectionConfig(sensor_colocation_mode="some")


def test_profile_from_store_matches_scans():
    rng = random.Random(12)
    recs = [MobilityRecord(rng.randrange(5), rng.randrange(4 * 3600), rng.uniform(0, 0.002), rng.uniform(0, 0.002))
            for _ in range(800)]
    monitors = [ReferenceMonitor(1, GeoPoint(0.001, 0.001), 600)]
    store = ingest(recs, None, StoreConfig())
    p = ColocationProfile.from_store(store, monitors)
    for v in range(5):
        assert p.ref(v) == scan_reference(recs, v, monitors, 0, 50, 300)
        for u in range(v + 1, 5):
            assert p.pair(v, u) == scan_pairs(recs, v, u, 50, 300)


def test_determinism():
    rng = random.Random(5)
    m, w = _instance(rng, 12, 25)
    cfg = SelectionConfig(budget_m=4, weights=w)
    assert greedy_max_coverage(m, None, cfg).to_json() == greedy_max_coverage(m, None, cfg).to_json()
    assert baseline_random_mp(m, 0, 4, 9).to_json() == baseline_random_mp(m, 0, 4, 9).to_json()
