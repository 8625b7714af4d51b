"""Command line entry point: ``sanasim run|compare|sweep|scenario``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .runner import TRACE_LEVELS, compare, run, seed_sweep
from .scenario import CANONICAL, MODES, InvalidScenario, load_scenario


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sanasim", description="Immune-inspired network protection simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("scenario", help="scenario JSON file")
        p.add_argument("--out", type=Path, default=None, help="directory for the report and trace bundle")
        p.add_argument("--trace-level", choices=TRACE_LEVELS, default="summary")

    p_run = sub.add_parser("run", help="run one scenario")
    common(p_run)
    p_cmp = sub.add_parser("compare", help="run a scenario under several protection modes")
    common(p_cmp)
    p_cmp.add_argument("--modes", nargs="+", choices=MODES, required=True)
    p_sw = sub.add_parser("sweep", help="run a scenario over several seeds")
    common(p_sw)
    p_sw.add_argument("--seeds", type=_seeds, required=True, help="comma-separated seeds, e.g. 1,2,3")
    p_sc = sub.add_parser("scenario", help="write a canonical scenario file")
    p_sc.add_argument("name", choices=sorted(CANONICAL))
    p_sc.add_argument("--mode", choices=MODES, default=None)
    p_sc.add_argument("--out", type=Path, default=None, help="file to write (default: stdout)")
    return parser


def _summary(report) -> dict:
    return {
        "scenario": report.name,
        "mode": report.mode,
        "seed": report.seed,
        "final_infected": report.final_infected,
        "peak_infected": report.peak_infected,
        "detection_latency": report.detection_latency,
        "inspections_per_packet": report.inspections_per_packet,
        "redundant_per_packet": report.redundant_per_packet,
        "scorecard": report.scorecard,
    }


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "scenario":
        kwargs = {"mode": args.mode} if args.mode and args.name in ("A", "C") else {}
        text = json.dumps(CANONICAL[args.name](**kwargs), indent=2) + "\n"
        if args.out is None:
            sys.stdout.write(text)
        else:
            args.out.write_text(text)
        return 0
    try:
        scenario = load_scenario(args.scenario)
    except FileNotFoundError:
        print(f"error: no such scenario file: {args.scenario}", file=sys.stderr)
        return 2
    except InvalidScenario as exc:
        print("error: invalid scenario", file=sys.stderr)
        for loc, msg in exc.errors:
            print(f"  {loc}: {msg}", file=sys.stderr)
        return 2

    if args.command == "run":
        result = run(scenario, trace_level=args.trace_level, out=args.out)
        payload = _summary(result.report)
    elif args.command == "compare":
        try:
            payload = compare(scenario, args.modes, trace_level=args.trace_level, out=args.out)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    else:
        payload = seed_sweep(scenario, args.seeds, trace_level=args.trace_level, out=args.out)
        payload = {k: payload[k] for k in ("scenario", "mode", "seeds", "aggregate")}
    print(json.dumps(payload, sort_keys=True, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
