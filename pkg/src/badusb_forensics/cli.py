"""Command-line entry points.

Exit codes: 0 success (possibly with parse warnings), 1 usage error,
2 when an input log has errors and no recoverable records.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional

from .detector import ConfigError, DetectionConfig, analyze_timeline, keystroke_rate_series, load_config
from .ducky_gen import BUNDLED_SCENARIOS, DuckyScriptError, ScenarioError, load_scenario, synthesize_scenario
from .event_model import HostEvent, KeystrokeEvent, TimeDomain
from .log_codec import LogRecordKind, ParseReport, parse_log
from .report import (
    FAMILY_KINDS,
    AnalysisReport,
    ParseSummary,
    emit_rate_plot,
    render_report,
)
from .timeline import build_timeline

EXIT_OK, EXIT_USAGE, EXIT_PARSE = 0, 1, 2

LOG_FILENAMES = {"keys": "keys.log", "processes": "processes.log", "images": "images.log", "pnp": "pnp.log"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None


def _warn(label: str, report: ParseReport):
    for err in report.errors:
        print(f"warning: {label}: offset {err.offset}: {err.reason}", file=sys.stderr)


def _fatal_parse(report: ParseReport) -> bool:
    return bool(report.errors) and not report.events


def run_analysis(inputs: dict, cfg: DetectionConfig):
    """Parse per-family log bytes and run detection.

    ``inputs`` maps family name ("keys", "processes", "images", "pnp") to
    raw log content. Returns ``(AnalysisReport, Analysis, parse_reports)``.
    """
    reports = {family: parse_log(data, [FAMILY_KINDS[family]]) for family, data in inputs.items()}
    keys = [e for r in reports.values() for e in r.events if isinstance(e, KeystrokeEvent)]
    hosts = [e for r in reports.values() for e in r.events if isinstance(e, HostEvent)]
    tl = build_timeline(keys, hosts)
    analysis = analyze_timeline(tl, cfg)
    report = AnalysisReport(
        findings=analysis.findings,
        parse_summary={f: ParseSummary.of(r) for f, r in reports.items()},
        unplaced_count=len(tl.unplaced),
        config_echo=cfg,
        suspect_count=len(tl.suspect),
    )
    return report, analysis, reports


def _write(out: Optional[str], data: bytes):
    if out is None or out == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(out).write_bytes(data)


def cmd_analyze(args) -> int:
    paths = {"keys": args.keys, "processes": args.procs, "images": args.images, "pnp": args.pnp}
    paths = {k: v for k, v in paths.items() if v}
    if not paths:
        raise UsageError("analyze needs at least one of --keys/--procs/--images/--pnp")
    inputs = {family: _read(p) for family, p in paths.items()}
    cfg = DetectionConfig()
    if args.config:
        try:
            cfg = load_config(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read {args.config}: {exc.strerror or exc}") from None
        except ConfigError as exc:
            raise UsageError(f"{args.config}: {exc}") from None
    report, analysis, reports = run_analysis(inputs, cfg)
    for family, r in reports.items():
        _warn(paths[family], r)
    _write(args.output, render_report(report, args.format))
    if args.plot:
        fmt = "csv" if args.plot.lower().endswith(".csv") else "svg"
        Path(args.plot).write_bytes(emit_rate_plot(analysis.series, fmt))
    return EXIT_PARSE if any(_fatal_parse(r) for r in reports.values()) else EXIT_OK


def cmd_generate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        logs = synthesize_scenario(scenario, redact=args.redact)
    except OSError as exc:
        raise UsageError(f"cannot read scenario {args.scenario}: {exc.strerror or exc}") from None
    except (ScenarioError, DuckyScriptError, ValueError) as exc:
        raise UsageError(f"scenario {args.scenario}: {exc}") from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for family, text in logs.as_dict().items():
        target = out / LOG_FILENAMES[family]
        target.write_text(text, encoding="utf-8", newline="\n")
        print(target)
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        cfg = DetectionConfig(window_seconds=args.window, stride_seconds=args.stride)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    report = parse_log(_read(args.keys), [LogRecordKind.KEY])
    _warn(args.keys, report)
    keys = sorted((e for e in report.events if e.time.domain is TimeDomain.ABSOLUTE),
                  key=lambda e: e.time.ticks)
    _write(args.output, emit_rate_plot(keystroke_rate_series(keys, cfg), args.format))
    return EXIT_PARSE if _fatal_parse(report) else EXIT_OK


_KIND_NAMES = {"key": LogRecordKind.KEY, "process": LogRecordKind.PROCESS,
               "image": LogRecordKind.IMAGE, "pnp": LogRecordKind.PNP}


def cmd_parse_check(args) -> int:
    kinds = None if args.kind is None else [_KIND_NAMES[args.kind]]
    report = parse_log(_read(args.file), kinds)
    print(f"{args.file}: records={report.records_seen} events={len(report.events)} "
          f"errors={len(report.errors)} skipped_bytes={report.skipped_bytes}")
    for err in report.errors:
        print(f"  offset {err.offset}: {err.reason}: {err.fragment!r}")
    return EXIT_PARSE if _fatal_parse(report) else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="badusb-forensics",
                     description="Detect keystroke-injection attacks in host telemetry logs.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("analyze", help="run the full detection pipeline")
    p.add_argument("--keys", help="KeyLog file")
    p.add_argument("--procs", help="ProcessLog file")
    p.add_argument("--images", help="ImageLog file")
    p.add_argument("--pnp", help="PnpLog file")
    p.add_argument("--config", help="key=value detection config")
    p.add_argument("--format", choices=["text", "structured"], default="text")
    p.add_argument("--output", "-o", help="report destination (default stdout)")
    p.add_argument("--plot", help="write the keystroke-rate plot here (.csv or .svg)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("generate", help="synthesize the four logs for a scenario")
    p.add_argument("--scenario", required=True,
                   help=f"scenario file, or a bundled name ({', '.join(BUNDLED_SCENARIOS)})")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--redact", action="store_true", help="write LOCK/OTHER instead of scan codes")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("plot", help="emit a keystroke-rate plot")
    p.add_argument("--keys", required=True)
    p.add_argument("--window", type=float, default=1.0, help="window length in seconds")
    p.add_argument("--stride", type=float, default=0.25, help="window stride in seconds")
    p.add_argument("--format", choices=["csv", "svg"], default="csv")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("parse-check", help="validate a log file")
    p.add_argument("--file", required=True)
    p.add_argument("--kind", choices=sorted(_KIND_NAMES))
    p.set_defaults(func=cmd_parse_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
