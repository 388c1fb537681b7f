"""Rendering of analysis results and keystroke-rate plots."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .detector import (
    BurstInterval,
    DetectionConfig,
    Evidence,
    Finding,
    Indicator,
    RateSeries,
    Severity,
)
from .event_model import NormalizedTime, ticks_to_utc
from .log_codec import LogRecordKind, ParseReport, emit_record, scan_records, parse_record
from .timeline import Entry, SourceClass, source_class

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ParseSummary:
    records_seen: int
    events: int
    errors: int

    @classmethod
    def of(cls, report: ParseReport) -> ParseSummary:
        return cls(report.records_seen, len(report.events), len(report.errors))


@dataclass
class AnalysisReport:
    findings: list
    parse_summary: dict = field(default_factory=dict)
    unplaced_count: int = 0
    config_echo: DetectionConfig = field(default_factory=DetectionConfig)
    suspect_count: int = 0


def _utc(ticks: int) -> str:
    return ticks_to_utc(NormalizedTime.absolute(ticks))


def _evidence_label(entry: Entry) -> str:
    ev = entry.event
    if entry.source is SourceClass.PNP_ATTACH:
        return ev.device_id.raw
    if entry.source is SourceClass.PROCESS_START:
        return f"pid {ev.pid}  {ev.path}"
    if entry.source is SourceClass.IMAGE_LOAD:
        return ev.path
    return "keystroke"


# Narrative order: device, driver, burst, processes, then keyboard anomalies.
_SECTIONS = [
    ("device", {Indicator.PNP_DEVICE, Indicator.VENDOR_WATCHLIST}),
    ("driver", {Indicator.HID_DRIVER_LOAD}),
    ("burst", set()),
    ("process", {Indicator.SUSPICIOUS_PROCESS}),
    ("lock", {Indicator.LOCK_KEY_ABUSE}),
    ("sleep", {Indicator.SLEEP_ANOMALY}),
]


def _render_finding_text(n: int, f: Finding) -> list[str]:
    names = ", ".join(sorted(i.name for i in f.indicators)) or "none"
    lines = [f"Finding {n}: severity {f.severity.name}", f"  indicators: {names}"]
    for label, wanted in _SECTIONS:
        if label == "burst":
            b = f.burst
            lines.append(
                f"  burst    {_utc(b.start)} -> {_utc(b.end)}  {b.key_count} keys over "
                f"{b.duration_seconds:.3f} s, peak {b.peak_rate:g} keys/s")
            continue
        grouped: dict[Entry, list[str]] = {}
        for ev in f.evidence:
            if ev.indicator in wanted:
                grouped.setdefault(ev.entry, []).append(ev.indicator.name)
        for entry, inds in grouped.items():
            tags = ", ".join(sorted(set(inds)))
            lines.append(f"  {label:<8} {_utc(entry.ticks)}  {_evidence_label(entry)}  [{tags}]")
    return lines


def render_text(r: AnalysisReport) -> str:
    lines = ["BadUSB keystroke-injection analysis", ""]
    lines.append("Inputs:")
    for family in sorted(r.parse_summary):
        s = r.parse_summary[family]
        lines.append(f"  {family:<10} records={s.records_seen} events={s.events} errors={s.errors}")
    lines.append(f"Unplaced events (no absolute time): {r.unplaced_count}")
    if r.suspect_count:
        lines.append(f"Suspect events (dated before 2000, excluded): {r.suspect_count}")
    lines.append("")
    if not r.findings:
        lines.append("Result: no findings.")
    else:
        lines.append(f"Result: {len(r.findings)} finding(s).")
        for n, f in enumerate(r.findings, 1):
            lines.append("")
            lines.extend(_render_finding_text(n, f))
    return "\n".join(lines) + "\n"


def _burst_doc(b: BurstInterval) -> dict:
    return {
        "start_ticks": b.start,
        "start_utc": _utc(b.start),
        "end_ticks": b.end,
        "end_utc": _utc(b.end),
        "key_count": b.key_count,
        "peak_rate": b.peak_rate,
        "span_start_ticks": b.span_start,
        "span_end_ticks": b.span_end,
        "first_point": b.first_point,
        "last_point": b.last_point,
    }


def report_to_dict(r: AnalysisReport) -> dict:
    findings = []
    for f in r.findings:
        findings.append({
            "severity": f.severity.name,
            "indicators": sorted(i.name for i in f.indicators),
            "burst": _burst_doc(f.burst),
            "evidence": [{
                "indicator": ev.indicator.name,
                "class": ev.entry.source.name,
                "ticks": ev.entry.ticks,
                "utc": _utc(ev.entry.ticks),
                "record": emit_record(ev.entry.event),
            } for ev in f.evidence],
        })
    return {
        "format_version": FORMAT_VERSION,
        "config": r.config_echo.as_dict(),
        "parse_summary": {k: vars(v) for k, v in sorted(r.parse_summary.items())},
        "unplaced_count": r.unplaced_count,
        "suspect_count": r.suspect_count,
        "findings": findings,
    }


def render_structured(r: AnalysisReport) -> str:
    return json.dumps(report_to_dict(r), indent=2, sort_keys=True) + "\n"


def render_report(r: AnalysisReport, format: str = "text") -> bytes:
    if format == "text":
        return render_text(r).encode("utf-8")
    if format in ("structured", "json"):
        return render_structured(r).encode("utf-8")
    raise ValueError(f"unknown report format {format!r}")


class ReportFormatError(ValueError):
    pass


def _event_from_record(line: str):
    records, errors, _ = scan_records(line)
    if errors or len(records) != 1:
        raise ReportFormatError(f"bad evidence record {line!r}")
    return parse_record(records[0].kind, records[0].body)


def ingest_structured(data) -> AnalysisReport:
    """Rebuild an AnalysisReport from ``render_structured`` output."""
    doc = json.loads(data)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ReportFormatError(f"unsupported format_version {doc.get('format_version')!r}")
    findings = []
    for fd in doc["findings"]:
        b = fd["burst"]
        burst = BurstInterval(b["start_ticks"], b["end_ticks"], b["key_count"], b["peak_rate"],
                              b["span_start_ticks"], b["span_end_ticks"], b["first_point"], b["last_point"])
        evidence = []
        for ed in fd["evidence"]:
            event = _event_from_record(ed["record"])
            entry = Entry(ed["ticks"], SourceClass[ed["class"]], event)
            if source_class(event) is not entry.source or event.time.ticks != entry.ticks:
                raise ReportFormatError(f"evidence record disagrees with its class/ticks: {ed}")
            evidence.append(Evidence(Indicator[ed["indicator"]], entry))
        indicators = frozenset(Indicator[i] for i in fd["indicators"])
        findings.append(Finding(burst, indicators, tuple(evidence), Severity[fd["severity"]]))
    return AnalysisReport(
        findings=findings,
        parse_summary={k: ParseSummary(**v) for k, v in doc["parse_summary"].items()},
        unplaced_count=doc["unplaced_count"],
        config_echo=DetectionConfig.from_dict(doc["config"]),
        suspect_count=doc.get("suspect_count", 0),
    )


# Rate plots

SVG_WIDTH, SVG_HEIGHT = 1000, 400
_LEFT, _RIGHT, _TOP, _BOTTOM = 70, 980, 30, 340


def rate_plot_csv(series: RateSeries) -> str:
    rows = ["window_start_utc,count,rate"]
    rows.extend(f"{_utc(p.start)},{p.count},{p.rate!r}" for p in series.points)
    return "\n".join(rows) + "\n"


def rate_plot_svg(series: RateSeries, title: Optional[str] = None) -> str:
    pts = series.points
    max_rate = max((p.rate for p in pts), default=0.0)
    y_top = max_rate if max_rate > 0 else 1.0
    if pts:
        t0, t1 = pts[0].start, pts[-1].start
    else:
        t0 = t1 = 0
    span = (t1 - t0) or 1

    def x(t):
        return _LEFT + (t - t0) * (_RIGHT - _LEFT) / span

    def y(rate):
        return _BOTTOM - rate * (_BOTTOM - _TOP) / y_top

    coords = " ".join(f"{x(p.start):.2f},{y(p.rate):.2f}" for p in pts)
    start_label = _utc(t0) if pts else ""
    end_label = _utc(t1) if pts else ""
    heading = title or "Keystrokes per second"
    window = f"window {series.window_seconds:g} s, stride {series.stride_seconds:g} s"
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" '
        f'viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">',
        f'<rect x="0" y="0" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>',
        f'<text x="{SVG_WIDTH // 2}" y="20" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{_xml(heading)} ({window})</text>',
        f'<line x1="{_LEFT}" y1="{_BOTTOM}" x2="{_RIGHT}" y2="{_BOTTOM}" stroke="black"/>',
        f'<line x1="{_LEFT}" y1="{_TOP}" x2="{_LEFT}" y2="{_BOTTOM}" stroke="black"/>',
        f'<text x="{_LEFT - 8}" y="{_BOTTOM}" text-anchor="end" font-family="sans-serif" font-size="11">0</text>',
        f'<text x="{_LEFT - 8}" y="{_TOP + 4}" text-anchor="end" font-family="sans-serif" '
        f'font-size="11">{y_top:g}</text>',
        f'<text x="18" y="{(_TOP + _BOTTOM) // 2}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12" transform="rotate(-90 18 {(_TOP + _BOTTOM) // 2})">keys/s</text>',
        f'<text x="{_LEFT}" y="{_BOTTOM + 18}" font-family="sans-serif" font-size="11">{_xml(start_label)}</text>',
        f'<text x="{_RIGHT}" y="{_BOTTOM + 18}" text-anchor="end" font-family="sans-serif" '
        f'font-size="11">{_xml(end_label)}</text>',
        f'<text x="{(_LEFT + _RIGHT) // 2}" y="{_BOTTOM + 45}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">window start (UTC)</text>',
        f'<polyline points="{coords}" fill="none" stroke="#1f4fbf" stroke-width="1.5"/>',
        "</svg>",
    ]) + "\n"


def _xml(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def emit_rate_plot(series: RateSeries, format: str = "csv") -> bytes:
    if format == "csv":
        return rate_plot_csv(series).encode("utf-8")
    if format == "svg":
        return rate_plot_svg(series).encode("utf-8")
    raise ValueError(f"unknown plot format {format!r}")


FAMILY_KINDS = {
    "keys": LogRecordKind.KEY,
    "processes": LogRecordKind.PROCESS,
    "images": LogRecordKind.IMAGE,
    "pnp": LogRecordKind.PNP,
}

