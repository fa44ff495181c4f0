"""Command line entry point.

    pbsim run --plan plan.yaml [--out DIR] [--jobs N]
    pbsim gen --params params.yaml --out trace.txt [--binary]
    pbsim inspect --trace trace.txt [--scheme cloak] [--config FILE]
    pbsim sim --trace trace.txt --scheme cloak [--set llc.size=4MB ...]

Exit status: 0 on success, 2 on a configuration or plan error, 3 on a trace error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from .config import ConfigError, SCHEMES, load_config
from .geometry import derive_geometry, tag_compare_cost
from .harness import load_plan, run_plan
from .hierarchy import simulate
from .metrics import finalize
from .workload import SynthParams, TraceError, footprint_bytes, generate, load_trace, save_trace

EXIT_CONFIG = 2
EXIT_TRACE = 3


def _parse_sets(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def cmd_run(args) -> int:
    plan = load_plan(args.plan)
    path = run_plan(plan, out=args.out, parallel=args.jobs)
    print(path)
    return 0


def cmd_gen(args) -> int:
    try:
        data = yaml.safe_load(Path(args.params).read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read params {args.params}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{args.params}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("params file must be a mapping")
    try:
        params = SynthParams(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad generator parameters: {exc}") from None
    trace = generate(params)
    save_trace(trace, args.out, binary=args.binary)
    print(f"{len(trace)} records -> {args.out}")
    return 0


def cmd_inspect(args) -> int:
    trace = load_trace(_existing(args.trace))
    reads = sum(1 for r in trace if r.op == "R")
    print(f"records       {len(trace)}")
    print(f"reads         {reads}")
    print(f"writes        {len(trace) - reads}")
    print(f"instructions  {sum(r.gap for r in trace) + len(trace)}")
    print(f"footprint     {footprint_bytes(trace) // 1024} KB ({len({r.vaddr >> 12 for r in trace})} pages)")
    if args.scheme or args.config:
        ov = {"core.scheme": args.scheme} if args.scheme else {}
        cfg = load_config(args.config, ov)
        print(f"scheme        {cfg.core.scheme}")
        if cfg.llc.layout == "page_row":
            geom = derive_geometry(cfg)
            for name, (hi, lo) in geom.fields().items():
                print(f"  {name:<9} {hi}:{lo}")
            cost = tag_compare_cost(geom)
            print(f"  tag bits  line {cost.clr_bits} page {cost.ptr_bits} ratio {cost.ratio:.3f}")
    return 0


def cmd_sim(args) -> int:
    ov = _parse_sets(args.set)
    ov["core.scheme"] = args.scheme
    cfg = load_config(args.config, ov)
    trace = load_trace(_existing(args.trace))
    report = finalize(simulate(cfg, trace), cfg)
    if not args.histograms:
        report.pop("refill_residency_hist")
        report.pop("ptr_population_hist")
    print(json.dumps(report, indent=2))
    return 0


def _existing(path: str) -> str:
    if not Path(path).exists():
        raise TraceError(f"trace file not found: {path}")
    return path


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pbsim", description="NVM last-level cache and page buffer simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment plan and write summary.csv")
    r.add_argument("--plan", required=True)
    r.add_argument("--out", help="output directory (default: plan 'output', or $PBSIM_OUT)")
    r.add_argument("--jobs", type=int, help="worker processes (default: plan 'parallel')")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("gen", help="generate a synthetic page-reuse trace")
    g.add_argument("--params", required=True, help="YAML mapping of generator parameters")
    g.add_argument("--out", required=True)
    g.add_argument("--binary", action="store_true", help="write the PBT1 binary format")
    g.set_defaults(func=cmd_gen)

    i = sub.add_parser("inspect", help="summarize a trace (and optionally a configuration)")
    i.add_argument("--trace", required=True)
    i.add_argument("--scheme", choices=SCHEMES)
    i.add_argument("--config")
    i.set_defaults(func=cmd_inspect)

    s = sub.add_parser("sim", help="simulate one trace and print the report as JSON")
    s.add_argument("--trace", required=True)
    s.add_argument("--scheme", choices=SCHEMES, default="cloak")
    s.add_argument("--config")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--histograms", action="store_true")
    s.set_defaults(func=cmd_sim)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TraceError as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return EXIT_TRACE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
