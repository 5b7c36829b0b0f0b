"""Command line entry point: ``fleetsense {stratify,coverage,select,evaluate,synth}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .pipeline import (
    ALGORITHMS,
    UsageError,
    dump_report,
    load_config,
    run_coverage,
    run_evaluate,
    run_select,
    run_stratify,
    run_synth,
)
from .strata import StrataError

PROG = "fleetsense"


def _config_flags(p: argparse.ArgumentParser, *groups: str) -> None:
    """Add RunConfig override flags. Defaults are None so unset flags don't override the file."""
    p.add_argument("--config", help="JSON config file; flags take precedence")
    if "space" in groups:
        p.add_argument("--spatial-granularity-m", type=float)
        p.add_argument("--extent", type=float, nargs=4, metavar=("MIN_LON", "MIN_LAT", "MAX_LON", "MAX_LAT"))
        p.add_argument("--strata", help="custom strata GeoJSON (instead of a grid)")
    if "time" in groups:
        p.add_argument("--temporal-granularity-s", type=int)
        p.add_argument("--epoch", type=int)
        p.add_argument("--index-geohash-precision", type=int)
        p.add_argument("--colocation-spatial-radius-m", type=float)
        p.add_argument("--colocation-temporal-radius-s", type=float)
    if "select" in groups:
        p.add_argument("--algorithm", choices=ALGORITHMS)
        p.add_argument("--budget", type=int)
        p.add_argument("--min-ref-colocations", type=int)
        p.add_argument("--min-sensor-colocations", type=int)
        p.add_argument("--sensor-colocation-mode", choices=("all_fleet", "selected_only"))
        p.add_argument("--weights", help="weights JSON {default, weights: [[stratum, interval, w], ...]}")
        p.add_argument("--min-coverage", type=float, help="target weighted coverage for min-budget")
        p.add_argument("--existing", type=int, nargs="*", help="already deployed vehicles (incremental)")
        p.add_argument("--random-mp-min-records", type=int)
        p.add_argument("--seed", type=int)
    if "evaluate" in groups:
        p.add_argument("--budgets", type=int, nargs="+")
        p.add_argument("--random-mp-runs", type=int)
        p.add_argument("--split-boundary", type=int)


_NON_CONFIG = {"command", "config", "output", "records", "strata_file", "coverage", "colocations", "monitors",
               "colocations_output", "train", "test", "spec", "verbose", "report"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description="Select fleet vehicles for drive-by sensing.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stratify", help="write a strata GeoJSON (grid or custom)")
    _config_flags(p, "space")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("coverage", help="ingest records and write per-vehicle coverage")
    _config_flags(p, "time")
    p.add_argument("--records", required=True, help="records CSV: vehicle_id,timestamp,lat,lon")
    p.add_argument("--strata-file", required=True, help="strata GeoJSON from `stratify`")
    p.add_argument("--monitors", help="reference monitors CSV: monitor_id,lat,lon,period_s")
    p.add_argument("--colocations-output", help="also write a colocation profile here")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("select", help="choose vehicles from a coverage file")
    _config_flags(p, "select")
    p.add_argument("--coverage", required=True)
    p.add_argument("--colocations", help="colocation profile from `coverage --colocations-output`")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("evaluate", help="train/test comparison of greedy, Random-MP and Max Points")
    _config_flags(p, "space", "time", "select", "evaluate")
    p.add_argument("--train")
    p.add_argument("--test")
    p.add_argument("--records", help="single records CSV split at --split-boundary (default: mid-period)")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("synth", help="generate a synthetic fleet as records CSV")
    p.add_argument("--spec", required=True, help="fleet spec JSON")
    p.add_argument("-o", "--output", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format=f"{PROG}: %(levelname)s: %(message)s")
    try:
        if args.command == "synth":
            report = run_synth(args.spec, args.output)
            print(json.dumps(report, sort_keys=True))
            return 0
        overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
        config = load_config(args.config, overrides)
        if args.command == "stratify":
            report = run_stratify(config, args.output)
        elif args.command == "coverage":
            report = run_coverage(config, args.records, args.strata_file, args.output,
                                  args.monitors, args.colocations_output)
        elif args.command == "select":
            report = dump_report(run_select(config, args.coverage, args.colocations), args.output)
            report = json.loads(report)["result"]
        else:
            dump_report(run_evaluate(config, args.train, args.test, args.records), args.output)
            report = {"output": args.output}
    except UsageError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, StrataError) as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(report, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
