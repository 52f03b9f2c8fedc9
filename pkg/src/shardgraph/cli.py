"""Command line front end: run scenarios, sweep grids, print formula tables,
and regenerate the oracle fixtures.

Exit codes:
  0  success
  2  configuration error (bad key, bad value, invalid parameter combination)
  3  I/O error (unreadable config, unwritable output directory)
  4  invariant or acceptance failure during a run
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

from .config import ConfigError, ScenarioConfig, apply_setting, load_config
from .fixtures import round_robin_fixture
from .metrics import (
    MetricsError,
    analytic_comm_cost,
    analytic_comm_cost_sharded,
    analytic_cross_cost,
    analytic_replica_count,
)
from .simulation import SimulationError, run_scenario, write_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_INVARIANT = 4


def _default_out_root() -> str:
    return os.environ.get("SHARDGRAPH_OUT", "runs")


def _load(args) -> ScenarioConfig:
    if args.config:
        config = load_config(args.config)
    else:
        config = ScenarioConfig()
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        apply_setting(config, key.strip(), value.strip())
    config.validate()
    return config


def cmd_run(args) -> int:
    config = _load(args)
    report = run_scenario(config)
    out = Path(args.out or _default_out_root()) / "run"
    write_report(report, out)
    print(f"report written to {out}")
    print(f"  injected tx units: {report.metrics.injected_tx_units}")
    print(f"  empty event fraction: {report.metrics.empty_event_fraction:.3f}")
    for row in report.comparison:
        print(
            f"  {row['quantity']}: analytic={row['analytic']:.3f} "
            f"measured={row['measured']:.3f}"
        )
    if report.anomalies:
        for a in report.anomalies:
            print(f"  anomaly: {a}", file=sys.stderr)
    bad = report.tx_audit["missing_count"] + report.tx_audit["duplicate_count"]
    if bad and config.adversary_kind in ("none", "equivocator"):
        print(
            f"cross-shard exactly-once violated for {bad} transactions",
            file=sys.stderr,
        )
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_formulas(args) -> int:
    n, s = args.n, args.s
    rows = [
        ("comm_per_node_unsharded", analytic_comm_cost(n, args.throughput, args.event_size)),
        ("comm_per_node_sharded", analytic_comm_cost_sharded(n, s, args.throughput, args.event_size)),
        ("cross_send_cost", analytic_cross_cost(args.cross_throughput, args.event_size)),
        ("replica_count", analytic_replica_count(n, s)),
        ("storage_ratio", 1 / s),
    ]
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"{name:<{width}}  {value:g}")
    return EXIT_OK


def cmd_fixtures(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    specs = {
        "fixture_4n_12ev.txt": (4, 3),
        "fixture_4n_20ev.txt": (4, 5),
    }
    for name, (nodes, per_node) in specs.items():
        text = round_robin_fixture(nodes, per_node)
        (out / name).write_text(text, encoding="utf-8")
        print(f"wrote {out / name}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _load(args)
    param, _, values_text = args.sweep.partition("=")
    param = param.strip()
    values = [v.strip() for v in values_text.split(",") if v.strip()]
    if not param or not values:
        raise ConfigError(f"empty sweep grid in {args.sweep!r}")
    out_root = Path(args.out or _default_out_root()) / "sweep"
    combined = []
    failures = 0
    for value in values:
        point = ScenarioConfig(**config.to_dict())
        apply_setting(point, param, value)
        point.validate()
        point_dir = out_root / f"{param}-{value}"
        try:
            report = run_scenario(point)
            write_report(report, point_dir)
        except SimulationError as exc:
            print(f"{param}={value}: invariant failure: {exc}", file=sys.stderr)
            failures += 1
            continue
        for row in report.comparison:
            combined.append(
                [param, value, row["quantity"], row["analytic"],
                 row["measured"], row["relative_deviation"],
                 row["within_tolerance"]]
            )
        print(f"{param}={value}: report written to {point_dir}")
    out_root.mkdir(parents=True, exist_ok=True)
    with open(out_root / "combined.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["param", "value", "quantity", "analytic", "measured",
             "relative_deviation", "within_tolerance"]
        )
        w.writerows(combined)
    print(f"combined comparison written to {out_root / 'combined.csv'}")
    return EXIT_INVARIANT if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shardgraph",
        description="sharded hashgraph simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario and write a report")
    p_run.add_argument("--config", help="scenario config file (key = value)")
    p_run.add_argument("--out", help="output directory root")
    p_run.add_argument(
        "--set", action="append", metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    p_run.set_defaults(func=cmd_run)

    p_form = sub.add_parser("formulas", help="print the analytic cost table")
    p_form.add_argument("-n", type=int, default=100)
    p_form.add_argument("-s", type=int, default=10)
    p_form.add_argument("--throughput", type=float, default=1000.0)
    p_form.add_argument("--cross-throughput", type=float, default=50.0,
                        dest="cross_throughput")
    p_form.add_argument("--event-size", type=float, default=1.0,
                        dest="event_size")
    p_form.set_defaults(func=cmd_formulas)

    p_fix = sub.add_parser(
        "fixtures", help="regenerate the oracle fixture files"
    )
    p_fix.add_argument("--out", default="fixtures", help="output directory")
    p_fix.set_defaults(func=cmd_fixtures)

    p_sweep = sub.add_parser("sweep", help="run a parameter grid")
    p_sweep.add_argument("--config", help="base scenario config file")
    p_sweep.add_argument("--out", help="output directory root")
    p_sweep.add_argument(
        "--set", action="append", metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    p_sweep.add_argument(
        "--sweep", required=True, metavar="PARAM=V1,V2,...",
        help="parameter and comma-separated value grid",
    )
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, MetricsError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SimulationError as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
