"""File-based pipeline stages: stratify, coverage, select, evaluate, synth.

Every stage returns a JSON-compatible report that embeds the effective
configuration and the package version. Reports contain no wall-clock data, so
identical inputs give byte-identical output.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .coverage import (
    WeightMap,
    build_coverage,
    holdout_split,
    percentage_coverage,
    read_coverage,
    write_coverage,
)
from .geo import BoundingBox
from .selection import (
    ALL_FLEET,
    RANDOM_MP_GENERATOR,
    ColocationProfile,
    SelectionConfig,
    baseline_max_points,
    baseline_random_mp,
    greedy_incremental,
    greedy_max_coverage,
    greedy_min_budget,
)
from .store import StoreConfig, ingest, read_monitors_csv, read_records_csv, write_records_csv
from .strata import Stratification, load_custom_strata, make_grid, read_strata, write_strata
from .synth import FleetSpec, gen_fleet

logger = logging.getLogger(__name__)

ALGORITHMS = ("greedy", "min-budget", "incremental", "random-mp", "max-points")


class UsageError(ValueError):
    """Bad or missing configuration; reported with exit status 2."""


@dataclass
class RunConfig:
    spatial_granularity_m: float = 100.0
    temporal_granularity_s: int = 7200
    epoch: int = 0
    extent: Optional[list] = None
    strata: Optional[str] = None
    index_geohash_precision: int = 6
    colocation_spatial_radius_m: float = 50.0
    colocation_temporal_radius_s: float = 300.0
    algorithm: str = "greedy"
    budget: int = 10
    min_ref_colocations: int = 0
    min_sensor_colocations: int = 0
    sensor_colocation_mode: str = ALL_FLEET
    weights: Optional[str] = None
    min_coverage: Optional[float] = None
    existing: list = field(default_factory=list)
    random_mp_min_records: int = 1
    random_mp_runs: int = 10
    budgets: list = field(default_factory=lambda: [10, 20, 30, 40, 50])
    split_boundary: Optional[int] = None
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        clean = {}
        for k, v in doc.items():
            key = k.replace("-", "_")
            if key not in known:
                raise UsageError(f"unknown config key {k!r}")
            clean[key] = v
        return cls(**clean)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def store_config(self) -> StoreConfig:
        try:
            return StoreConfig(
                temporal_granularity_s=self.temporal_granularity_s,
                epoch=self.epoch,
                index_geohash_precision=self.index_geohash_precision,
                colocation_spatial_radius_m=self.colocation_spatial_radius_m,
                colocation_temporal_radius_s=self.colocation_temporal_radius_s,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def selection_config(self, weights: Optional[WeightMap] = None) -> SelectionConfig:
        try:
            return SelectionConfig(
                budget_m=self.budget,
                min_ref_colocations=self.min_ref_colocations,
                min_sensor_colocations=self.min_sensor_colocations,
                weights=weights,
                sensor_colocation_mode=self.sensor_colocation_mode,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from None


def load_config(path: Optional[str], overrides: dict) -> RunConfig:
    """Config file values, then command-line overrides on top."""
    doc = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError(f"config {path} must be a JSON object")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(doc)


def _header(config: RunConfig, stage: str) -> dict:
    return {"version": __version__, "stage": stage, "config": config.to_json()}


def dump_report(report: dict, path=None) -> str:
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    return text


def stratification_for(config: RunConfig) -> Stratification:
    if config.strata:
        return read_strata(config.strata)
    if config.extent is None:
        raise UsageError("grid stratification needs an extent (--extent MIN_LON MIN_LAT MAX_LON MAX_LAT)")
    try:
        return make_grid(BoundingBox.from_list(config.extent), config.spatial_granularity_m)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def run_stratify(config: RunConfig, output) -> dict:
    if config.strata:
        strat = load_custom_strata(Path(config.strata).read_text(encoding="utf-8"))
        kind = "custom"
    else:
        strat = stratification_for(config)
        kind = "grid"
    write_strata(strat, output)
    report = _header(config, "stratify")
    report.update({"division_type": kind, "strata": len(strat), "extent": strat.extent.as_list(),
                   "output": str(output)})
    return report


def run_coverage(config: RunConfig, records_path, strata_path, output, monitors_path=None,
                 colocations_output=None) -> dict:
    strat = read_strata(strata_path)
    records, bad_lines = read_records_csv(records_path)
    store = ingest(records, strat, config.store_config())
    malformed = bad_lines + store.malformed_count
    m = build_coverage(store)
    header = _header(config, "coverage")
    header["malformed_records"] = malformed
    header["records"] = len(store)
    write_coverage(m, output, header)
    report = dict(header)
    report.update({"vehicles": len(m.sets), "universe_size": len(m.universe), "output": str(output)})
    if colocations_output:
        monitors = read_monitors_csv(monitors_path) if monitors_path else []
        profile = ColocationProfile.from_store(store, monitors)
        doc = _header(config, "colocations")
        doc.update(profile.to_json())
        dump_report(doc, colocations_output)
        report["colocations_output"] = str(colocations_output)
    return report


def _load_weights(config: RunConfig) -> Optional[WeightMap]:
    if not config.weights:
        return None
    try:
        return WeightMap.from_json(json.loads(Path(config.weights).read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read weights {config.weights}: {exc}") from None


def run_select(config: RunConfig, coverage_path, colocations_path=None) -> dict:
    if config.algorithm not in ALGORITHMS:
        raise UsageError(f"unknown algorithm {config.algorithm!r}; choose from {', '.join(ALGORITHMS)}")
    m = read_coverage(coverage_path)
    weights = _load_weights(config)
    cfg = config.selection_config(weights)
    profile = None
    if colocations_path:
        profile = ColocationProfile.from_json(json.loads(Path(colocations_path).read_text(encoding="utf-8")))
    elif cfg.constrained:
        raise UsageError("colocation thresholds need a colocations file (--colocations)")

    report = _header(config, "select")
    algo = config.algorithm
    if algo == "greedy":
        result = greedy_max_coverage(m, profile, cfg)
    elif algo == "min-budget":
        if config.min_coverage is None:
            raise UsageError("min-budget needs --min-coverage")
        result = greedy_min_budget(m, config.min_coverage, profile, cfg)
    elif algo == "incremental":
        unknown = [v for v in config.existing if v not in m]
        if unknown:
            raise UsageError(f"existing vehicles not in coverage: {unknown}")
        result = greedy_incremental(m, profile, config.existing, config.budget, cfg)
    elif algo == "random-mp":
        result = baseline_random_mp(m, config.random_mp_min_records, config.budget, config.seed, weights)
        report["rng"] = RANDOM_MP_GENERATOR
    else:
        result = baseline_max_points(m, config.budget, weights)
    report["algorithm"] = algo
    report["result"] = result.to_json()
    everyone = list(config.existing) + result.chosen if algo == "incremental" else result.chosen
    report["percentage_coverage"] = percentage_coverage(m, everyone)
    return report


def _split_inputs(config: RunConfig, train_path=None, test_path=None, records_path=None):
    if records_path:
        records, bad = read_records_csv(records_path)
        if not records:
            raise UsageError(f"{records_path}: no records")
        boundary = config.split_boundary
        if boundary is None:
            # midpoint of the observed period: two halves of equal length
            lo = min(r.timestamp for r in records)
            hi = max(r.timestamp for r in records)
            boundary = (lo + hi + 1) // 2
        train, test = holdout_split(records, boundary)
        return train, test, bad, 0, boundary
    if not (train_path and test_path):
        raise UsageError("evaluate needs --train and --test, or --records")
    train, bad_a = read_records_csv(train_path)
    test, bad_b = read_records_csv(test_path)
    return train, test, bad_a, bad_b, None


def run_evaluate(config: RunConfig, train_path=None, test_path=None, records_path=None, *,
                 train_records=None, test_records=None) -> dict:
    """Select on the train half with each method and score coverage on the test half.

    Records may be passed in memory (`train_records`/`test_records`) instead of files.
    """
    if config.min_ref_colocations or config.min_sensor_colocations:
        raise UsageError("evaluate does not apply colocation thresholds; use select")
    boundary = None
    bad_a = bad_b = 0
    if train_records is None:
        train_records, test_records, bad_a, bad_b, boundary = _split_inputs(config, train_path, test_path, records_path)
    if not train_records or not test_records:
        raise UsageError("evaluate needs non-empty train and test halves")
    strat = stratification_for(config)
    scfg = config.store_config()
    train_store = ingest(train_records, strat, scfg)
    test_store = ingest(test_records, strat, scfg)
    train = build_coverage(train_store)
    test = build_coverage(test_store)
    weights = _load_weights(config)
    seeds = [config.seed + i for i in range(config.random_mp_runs)]

    rows = []
    for b in config.budgets:
        cfg = SelectionConfig(budget_m=b, weights=weights)
        greedy = greedy_max_coverage(train, None, cfg)
        maxp = baseline_max_points(train, b)
        rand = [baseline_random_mp(train, config.random_mp_min_records, b, s) for s in seeds]
        rand_pc = [percentage_coverage(test, r.chosen) for r in rand]
        row = {
            "budget": b,
            "greedy": percentage_coverage(test, greedy.chosen),
            "max_points": percentage_coverage(test, maxp.chosen),
            "random_mp": {
                "values": rand_pc,
                "mean": statistics.fmean(rand_pc) if rand_pc else None,
                "std": statistics.stdev(rand_pc) if len(rand_pc) > 1 else None,
            },
            "chosen": {"greedy": greedy.chosen, "max_points": maxp.chosen},
            "train_coverage": {
                "greedy": percentage_coverage(train, greedy.chosen),
                "max_points": percentage_coverage(train, maxp.chosen),
            },
        }
        rows.append(row)

    report = _header(config, "evaluate")
    report.update({
        "rng": RANDOM_MP_GENERATOR,
        "random_mp_seeds": seeds,
        "split_boundary": boundary,
        "train": {"records": len(train_store), "vehicles": len(train.sets), "universe_size": len(train.universe),
                  "malformed_records": bad_a + train_store.malformed_count},
        "test": {"records": len(test_store), "vehicles": len(test.sets), "universe_size": len(test.universe),
                 "malformed_records": bad_b + test_store.malformed_count},
        "results": rows,
    })
    return report


def run_synth(spec_path, output) -> dict:
    try:
        spec = FleetSpec.from_json(json.loads(Path(spec_path).read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise UsageError(f"invalid fleet spec {spec_path}: {exc}") from None
    records = gen_fleet(spec)
    write_records_csv(records, output)
    return {"version": __version__, "stage": "synth", "spec": spec.to_json(), "records": len(records),
            "vehicles": spec.fixed_route_count + spec.random_route_count, "output": str(output)}
