"""Command-line entry point.

    energy-donation run    --config scenario.json --out out/
    energy-donation matrix --config matrix.json   --out out/ [--jobs 4]
    energy-donation synth  --config synth.json    --out readings.csv
    energy-donation report --out out/hed_bp0.5

Exit status: 0 success, 1 invalid configuration or input, 2 internal
invariant breach. Errors are printed to stderr as one JSON line.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

from .donation import DonationEvent, Source
from .engine import RunArtifacts, ScenarioConfig, load_matrix, run, run_matrix
from .errors import ConfigError, InvariantError, SimulationError
from .ingestion import SyntheticConfig, generate_synthetic, write_readings
from .metrics import DonationReport, ParticipationStats, aggregate, participation

EXIT_OK, EXIT_VALIDATION, EXIT_INVARIANT = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="energy-donation", description="Energy-donation community simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("table", "json", "csv"), default="table")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("matrix", help="simulate a scenario matrix and compare algorithms")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--format", choices=("table", "json", "csv"), default="table")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("synth", help="write synthetic hourly readings as CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("report", help="re-aggregate the logs of a finished run")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--format", choices=("table", "json", "csv"), default="table")
    return parser


# -- formatting ------------------------------------------------------------------

def report_rows(report: DonationReport, stats: ParticipationStats) -> list[tuple[str, str]]:
    cost = report.external_cost_cents_per_kwh
    rows = [
        ("external donated (Wh)", str(report.external_donated_wh)),
        ("  grid funded (Wh)", str(report.grid_funded_wh)),
        ("  peer funded (Wh)", str(report.peer_funded_wh)),
        ("internal donated (Wh)", str(report.internal_donated_wh)),
        ("total donated (Wh)", str(report.total_donated_wh)),
        ("funded payments (cents)", str(report.funded_payments_cents)),
        ("expenses (cents)", str(report.expenses_cents)),
        ("external cost (cents/kWh)", "undefined" if cost is None else f"{float(cost):.4f}"),
    ]
    for name, value in stats.to_dict().items():
        rows.append((name.replace("_", " ") + " (share)", f"{value:.4f}"))
    return rows


def format_report(report: DonationReport, stats: ParticipationStats, fmt: str) -> str:
    if fmt == "json":
        return json.dumps({"donation_report": report.to_dict(), "participation": stats.to_dict()},
                          indent=2, sort_keys=True) + "\n"
    rows = report_rows(report, stats)
    if fmt == "csv":
        return "metric,value\n" + "".join(f"{k.strip()},{v}\n" for k, v in rows)
    width = max(len(k) for k, _ in rows)
    return "".join(f"{k.ljust(width)}  {v}\n" for k, v in rows)


# -- subcommands -------------------------------------------------------------------

def _with_seed(config: ScenarioConfig, seed):
    return config if seed is None else dataclasses.replace(config, seed=seed)


def cmd_run(args) -> int:
    config = _with_seed(ScenarioConfig.load(args.config), args.seed)
    artifacts = run(config)
    artifacts.write(args.out)
    sys.stdout.write(format_report(artifacts.report, artifacts.participation, args.format))
    return EXIT_OK


def cmd_matrix(args) -> int:
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    configs = [_with_seed(c, args.seed) for c in load_matrix(args.config)]
    result = run_matrix(configs, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for scenario_id, artifacts in result.runs.items():
        if isinstance(artifacts, RunArtifacts):
            artifacts.write(out / scenario_id)
    comparison = result.comparison
    (out / "comparison.csv").write_text(comparison.to_csv())
    (out / "comparison.json").write_text(json.dumps(comparison.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "comparison.txt").write_text(comparison.render_table())
    if args.format == "json":
        sys.stdout.write(json.dumps(comparison.to_dict(), indent=2, sort_keys=True) + "\n")
    elif args.format == "csv":
        sys.stdout.write(comparison.to_csv())
    else:
        sys.stdout.write(comparison.render_table())
    failures = result.failures
    if not failures:
        return EXIT_OK
    for scenario_id, exc in failures.items():
        _error(exc, scenario=scenario_id)
    return max(_exit_code(exc) for exc in failures.values())


def cmd_synth(args) -> int:
    try:
        data = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from None
    if isinstance(data, dict) and "synthetic" in data:
        data = data["synthetic"]
    if not isinstance(data, dict):
        raise ConfigError("synthetic config must be an object")
    if args.seed is not None:
        data = {**data, "seed": args.seed}
    series = generate_synthetic(SyntheticConfig.from_dict(data))
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    write_readings(series, out)
    return EXIT_OK


def read_donation_log(path: Path) -> list[DonationEvent]:
    def ident(text):
        if text == "":
            return None
        return text if text == "grid" else int(text)

    with open(path, newline="") as fh:
        return [
            DonationEvent(int(r["timestep"]), int(r["donee"]), int(r["quantity_wh"]), Source(r["source"]),
                          ident(r["payee"]), int(r["payment_cents"]), ident(r["donor"]))
            for r in csv.DictReader(fh)
        ]


def cmd_report(args) -> int:
    run_dir = Path(args.out)
    try:
        events = read_donation_log(run_dir / "donations.csv")
        with open(run_dir / "steps.csv", newline="") as fh:
            prices = [int(r["clearing_price_cents"]) for r in csv.DictReader(fh)]
        state = json.loads((run_dir / "final_state.json").read_text())
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read run logs in {run_dir}: {exc}") from None
    peers = [p["id"] for p in state["peers"]]
    sys.stdout.write(format_report(aggregate(events, prices), participation(events, peers), args.format))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "matrix": cmd_matrix, "synth": cmd_synth, "report": cmd_report}


def _exit_code(exc: BaseException) -> int:
    return EXIT_INVARIANT if isinstance(exc, InvariantError) else EXIT_VALIDATION


def _error(exc: BaseException, **extra) -> None:
    kind = "invariant" if isinstance(exc, InvariantError) else "validation"
    sys.stderr.write(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc), **extra},
                                sort_keys=True) + "\n")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        _error(exc)
        return EXIT_VALIDATION
    except SimulationError as exc:
        _error(exc)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
