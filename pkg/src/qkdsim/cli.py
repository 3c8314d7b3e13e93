"""``qkdsim`` command line.

Exit codes: 0 success, 1 protocol aborted (attack detected), 2 usage or
configuration error. Nothing is simulated unless the configuration parses.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import CONFIG_DIR_ENV, apply_overrides, load_tree, preset_names, resolve_config_path, scenario_from_tree
from .harness import (
    ADVERSARIES,
    ADVERSARY_DESCRIPTIONS,
    CSV_HEADER,
    BatchResult,
    ConfigError,
    ScenarioConfig,
    ScenarioReport,
    TrialRow,
    run_batch,
    run_scenario,
)
from .transcript import to_jsonl

EXIT_OK, EXIT_ABORTED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class CliInvocation:
    subcommand: str
    config_path: Path | None = None
    overrides: list[str] = field(default_factory=list)
    output_path: Path | None = None
    format: str = "json"
    transcript_path: Path | None = None
    scenario: ScenarioConfig | None = None
    trials: int = 1
    workers: int = 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qkdsim", description="Seeded QKD protocol and attack simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def scenario_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", "-c", required=True,
                       help=f"scenario TOML file or preset name (also searched in ${CONFIG_DIR_ENV})")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. bb84.n_pulses=1000 (repeatable)")

    def output_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--output", "-o", type=Path, help="write the report here instead of stdout")
        p.add_argument("--format", "-f", choices=("json", "csv"), default="json")

    run = sub.add_parser("run", help="run one scenario")
    scenario_args(run)
    output_args(run)
    run.add_argument("--transcript", type=Path, help="also write the transcript as JSON Lines")

    batch = sub.add_parser("batch", help="run many seeded trials of a scenario")
    scenario_args(batch)
    output_args(batch)
    batch.add_argument("--trials", "-n", type=int, help="number of trials (overrides batch.trials)")
    batch.add_argument("--workers", type=int, help="parallel worker processes")

    sub.add_parser("attacks-list", help="list protocols and their adversaries")
    explain = sub.add_parser("explain", help="describe a scenario without running it")
    scenario_args(explain)
    return parser


def parse_and_validate(argv: Sequence[str]) -> CliInvocation:
    """Parse arguments and load the scenario. Raises :class:`UsageError`."""
    args = build_parser().parse_args(argv)
    inv = CliInvocation(args.subcommand)
    if args.subcommand == "attacks-list":
        return inv
    try:
        inv.config_path = resolve_config_path(args.config)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {args.config}") from None
    try:
        tree = load_tree(inv.config_path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {inv.config_path}: {exc}") from None
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "trials", None) is not None:
        overrides.append(f"batch.trials={args.trials}")
    if getattr(args, "workers", None) is not None:
        overrides.append(f"batch.workers={args.workers}")
    inv.overrides = overrides
    try:
        inv.scenario, batch = scenario_from_tree(apply_overrides(tree, overrides))
    except ConfigError as exc:
        raise UsageError("invalid configuration:\n  " + "\n  ".join(exc.problems)) from None
    inv.trials = batch.get("trials", 1)
    inv.workers = batch.get("workers", 1)
    inv.output_path = getattr(args, "output", None)
    inv.format = getattr(args, "format", "json")
    inv.transcript_path = getattr(args, "transcript", None)
    return inv


def _csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_HEADER, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: "" if r[k] is None else r[k] for k in CSV_HEADER})
    return buf.getvalue()


def render_report(report: ScenarioReport | BatchResult, fmt: str) -> str:
    if fmt == "json":
        return report.to_json()
    if isinstance(report, BatchResult):
        return _csv([asdict(r) for r in report.rows])
    row = TrialRow(0, report.seed, report.protocol, report.adversary, report.aborted, report.abort_step,
                   report.abort_reason, report.qber, report.sift_rate, report.eve_known_fraction,
                   report.recovered_bits, report.eve_bits)
    return _csv([asdict(row)])


def emit_report(report: ScenarioReport | BatchResult, fmt: str, output_path: Path | None) -> None:
    text = render_report(report, fmt)
    if output_path is None:
        sys.stdout.write(text)
        return
    with open(output_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _explain(cfg: ScenarioConfig, inv: CliInvocation) -> str:
    lines = [
        f"config:    {inv.config_path}",
        f"protocol:  {cfg.protocol}",
        f"adversary: {cfg.adversary.kind} ({ADVERSARY_DESCRIPTIONS[cfg.adversary.kind]})",
        f"seed:      {cfg.seed}",
    ]
    if cfg.adversary.params:
        lines.append("adversary parameters: " + ", ".join(f"{k}={v}" for k, v in cfg.adversary.params.items()))
    if cfg.protocol == "bb84":
        lines += [
            f"pulses:    {cfg.n_pulses}  mean photon number {cfg.mean_photon_number}"
            + (" (ideal single-photon source)" if cfg.mean_photon_number == 0 else ""),
            f"QBER sample fraction {cfg.sample_fraction}, abort above {cfg.qber_abort_threshold}",
        ]
    else:
        msg = cfg.message_bits or f"{cfg.message_length} random bits"
        lines.append(f"message:   {msg}")
    if cfg.protocol == "three_stage_auth":
        a = cfg.auth
        lines.append(f"freshness window {a.window_millis} ms, KDC relays pass 2: {a.relay_via_kdc}, "
                     f"KDC reachable: {a.kdc_available}")
    return "\n".join(lines) + "\n"


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        inv = parse_and_validate(argv)
    except UsageError as exc:
        print(f"qkdsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse
        return int(exc.code or 0)

    if inv.subcommand == "attacks-list":
        for proto, kinds in ADVERSARIES.items():
            for k in kinds:
                print(f"{proto:17} {k:17} {ADVERSARY_DESCRIPTIONS[k]}")
        print("presets: " + ", ".join(preset_names()))
        return EXIT_OK
    if inv.subcommand == "explain":
        sys.stdout.write(_explain(inv.scenario, inv))
        return EXIT_OK

    try:
        if inv.subcommand == "run":
            report = run_scenario(inv.scenario)
            aborted = report.aborted
            if inv.transcript_path is not None:
                inv.transcript_path.write_text(to_jsonl(report.transcript), encoding="utf-8")
        else:
            report = run_batch(inv.scenario, inv.trials, workers=inv.workers)
            aborted = report.detections > 0
        emit_report(report, inv.format, inv.output_path)
    except OSError as exc:
        print(f"qkdsim: error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_ABORTED if aborted else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
