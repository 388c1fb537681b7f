"""Keystroke-rate anomaly detection and host-event correlation.

A burst of keystrokes far above human typing speed is the primary signal.
Each burst is then checked against host activity in a surrounding window:
suspicious process launches, HID driver loads, PnP attaches (optionally on a
vendor/VID-PID watchlist), lock-key spamming and long keyboard silences
between active periods. Confidence grows with the number of distinct
indicator classes found.
"""

from __future__ import annotations

import bisect
import dataclasses
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Sequence, Union

from .event_model import TICKS_PER_SECOND, HostEvent, HostKind, KeystrokeEvent, seconds_to_ticks
from .timeline import HOST_CLASSES, Entry, SourceClass, Timeline, window_query

# Both sides of a sleep gap must show this much typing activity.
SLEEP_CONTEXT_SECONDS = 10.0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DetectionConfig:
    burst_rate_threshold: float = 10.0
    burst_min_keys: int = 20
    window_seconds: float = 1.0
    stride_seconds: float = 0.25
    correlation_window_seconds: float = 30.0
    suspicious_process_names: frozenset = frozenset({
        "powershell.exe", "cmd.exe", "wscript.exe", "cscript.exe", "mshta.exe", "rundll32.exe",
    })
    hid_driver_names: frozenset = frozenset({"hidusb.sys", "kbdhid.sys", "kbdclass.sys"})
    vendor_watchlist: frozenset = frozenset({"ATMEL"})
    vid_pid_watchlist: frozenset = frozenset()
    lock_spam_min_count: int = 10
    lock_spam_max_gap_seconds: float = 0.5
    sleep_gap_seconds: float = 5.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (int, float)) and not value > 0:
                raise ConfigError(f"{f.name} must be strictly positive, got {value}")
        for name in ("burst_min_keys", "lock_spam_min_count"):
            if not isinstance(getattr(self, name), int):
                raise ConfigError(f"{name} must be an integer")
        if seconds_to_ticks(self.window_seconds) <= 0 or seconds_to_ticks(self.stride_seconds) <= 0:
            raise ConfigError("window and stride must be at least one tick")
        for name in ("suspicious_process_names", "hid_driver_names"):
            object.__setattr__(self, name, frozenset(s.lower() for s in getattr(self, name)))
        object.__setattr__(self, "vendor_watchlist", frozenset(self.vendor_watchlist))
        object.__setattr__(self, "vid_pid_watchlist",
                           frozenset((int(v), int(p)) for v, p in self.vid_pid_watchlist))

    def as_dict(self) -> dict:
        """Plain, deterministic representation (sets become sorted lists)."""
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "vid_pid_watchlist":
                value = [f"{v:04X}:{p:04X}" for v, p in sorted(value)]
            elif isinstance(value, frozenset):
                value = sorted(value)
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> DetectionConfig:
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kwargs = dict(data)
        if "vid_pid_watchlist" in kwargs:
            kwargs["vid_pid_watchlist"] = [_parse_vid_pid(s) if isinstance(s, str) else tuple(s)
                                           for s in kwargs["vid_pid_watchlist"]]
        return cls(**kwargs)


def _parse_vid_pid(text: str) -> tuple[int, int]:
    vid, sep, pid = text.partition(":")
    try:
        if not sep:
            raise ValueError
        return int(vid, 16), int(pid, 16)
    except ValueError:
        raise ConfigError(f"bad VID:PID pair {text!r}, expected hex like 03EB:2401") from None


def parse_config_text(text: str) -> DetectionConfig:
    """Load a ``key = value`` config; sets are comma separated, '#' starts a comment."""
    types = {f.name: f.type for f in dataclasses.fields(DetectionConfig)}
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value")
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        kind = types[key]
        try:
            if kind == "int":
                values[key] = int(raw)
            elif kind == "float":
                values[key] = float(raw)
            elif key == "vid_pid_watchlist":
                values[key] = [_parse_vid_pid(s.strip()) for s in raw.split(",") if s.strip()]
            else:
                values[key] = frozenset(s.strip() for s in raw.split(",") if s.strip())
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise ConfigError(f"line {lineno}: {exc}") from None
            raise ConfigError(f"line {lineno}: bad value for {key}: {raw!r}") from None
    return DetectionConfig(**values)


def load_config(path: Union[str, Path]) -> DetectionConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class RatePoint:
    start: int
    count: int
    rate: float


@dataclass(frozen=True)
class RateSeries:
    window_seconds: float
    stride_seconds: float
    points: tuple[RatePoint, ...] = ()
    # Sorted keystroke ticks the series was computed from.
    key_ticks: tuple[int, ...] = field(default=(), repr=False)

    @property
    def window_ticks(self) -> int:
        return seconds_to_ticks(self.window_seconds)

    @property
    def stride_ticks(self) -> int:
        return seconds_to_ticks(self.stride_seconds)

    def count_between(self, t0: int, t1: int) -> int:
        """Keystrokes with t0 <= ticks < t1."""
        return bisect.bisect_left(self.key_ticks, t1) - bisect.bisect_left(self.key_ticks, t0)


def _ticks_of(keys: Sequence[Union[KeystrokeEvent, int]]) -> list[int]:
    return [k if isinstance(k, int) else k.time.ticks for k in keys]


def keystroke_rate_series(keys: Sequence[KeystrokeEvent], cfg: DetectionConfig) -> RateSeries:
    """Sliding-window key counts over [start, start + window), stepped by stride.

    Windows start at the first keystroke and continue while the start is at
    or before the last keystroke.
    """
    ticks = _ticks_of(keys)
    if any(a > b for a, b in zip(ticks, ticks[1:])):
        raise ValueError("keystrokes must be sorted by time")
    if not ticks:
        return RateSeries(cfg.window_seconds, cfg.stride_seconds)
    window, stride = seconds_to_ticks(cfg.window_seconds), seconds_to_ticks(cfg.stride_seconds)
    points = []
    start, last = ticks[0], ticks[-1]
    lo = 0
    while start <= last:
        lo = bisect.bisect_left(ticks, start, lo)
        hi = bisect.bisect_left(ticks, start + window, lo)
        count = hi - lo
        points.append(RatePoint(start, count, count / cfg.window_seconds))
        start += stride
    return RateSeries(cfg.window_seconds, cfg.stride_seconds, tuple(points), tuple(ticks))


@dataclass(frozen=True)
class BurstInterval:
    """A merged run of above-threshold windows.

    ``start``/``end`` are the first and last keystroke inside the run's span
    ``[span_start, span_end)``; ``first_point``/``last_point`` index the
    series points of the run.
    """

    start: int
    end: int
    key_count: int
    peak_rate: float
    span_start: int = 0
    span_end: int = 0
    first_point: int = 0
    last_point: int = 0

    @property
    def duration_seconds(self) -> float:
        return (self.end - self.start) / TICKS_PER_SECOND


def detect_bursts(series: RateSeries, cfg: DetectionConfig) -> list[BurstInterval]:
    points = series.points
    runs = []
    i = 0
    while i < len(points):
        if points[i].rate >= cfg.burst_rate_threshold:
            j = i
            while j + 1 < len(points) and points[j + 1].rate >= cfg.burst_rate_threshold:
                j += 1
            runs.append([i, j, points[i].start, points[j].start + series.window_ticks])
            i = j + 1
        else:
            i += 1
    # A window longer than two strides lets neighbouring runs' spans overlap;
    # such runs describe one burst.
    merged: list[list[int]] = []
    for run in runs:
        if merged and run[2] < merged[-1][3]:
            merged[-1][1] = run[1]
            merged[-1][3] = max(merged[-1][3], run[3])
        else:
            merged.append(run)
    bursts = []
    ticks = series.key_ticks
    for first, last, span_start, span_end in merged:
        lo = bisect.bisect_left(ticks, span_start)
        hi = bisect.bisect_left(ticks, span_end)
        if hi - lo < cfg.burst_min_keys:
            continue
        peak = max(p.rate for p in points[first:last + 1])
        bursts.append(BurstInterval(ticks[lo], ticks[hi - 1], hi - lo, peak,
                                    span_start, span_end, first, last))
    return bursts


@dataclass(frozen=True)
class KeyInterval:
    """Run of keystrokes flagged by a detector; indices refer to the input sequence."""

    start: int
    end: int
    count: int
    first_index: int
    last_index: int

    @property
    def duration_seconds(self) -> float:
        return (self.end - self.start) / TICKS_PER_SECOND


def detect_lock_key_abuse(keys: Sequence[KeystrokeEvent], cfg: DetectionConfig) -> list[KeyInterval]:
    max_gap = seconds_to_ticks(cfg.lock_spam_max_gap_seconds)
    found = []
    run_start = None
    for i, key in enumerate(keys):
        if key.is_lock and run_start is not None and key.time.ticks - keys[i - 1].time.ticks <= max_gap:
            continue
        if run_start is not None:
            _close_lock_run(keys, run_start, i - 1, cfg, found)
        run_start = i if key.is_lock else None
    if run_start is not None:
        _close_lock_run(keys, run_start, len(keys) - 1, cfg, found)
    return found


def _close_lock_run(keys, first, last, cfg, found):
    if last - first + 1 >= cfg.lock_spam_min_count:
        found.append(KeyInterval(keys[first].time.ticks, keys[last].time.ticks,
                                 last - first + 1, first, last))


def detect_sleep_gaps(keys: Sequence[KeystrokeEvent], cfg: DetectionConfig) -> list[KeyInterval]:
    """Silences longer than ``sleep_gap_seconds`` between two active periods.

    Each returned interval spans the two keystrokes flanking the silence
    (``count`` is 2). Idle time before the first or after the last typing
    session does not qualify: both sides need ``burst_min_keys`` keystrokes
    within ten seconds of the gap.
    """
    ticks = _ticks_of(keys)
    min_gap = seconds_to_ticks(cfg.sleep_gap_seconds)
    context = seconds_to_ticks(SLEEP_CONTEXT_SECONDS)
    gaps = []
    for i in range(1, len(ticks)):
        a, b = ticks[i - 1], ticks[i]
        if b - a <= min_gap:
            continue
        before = bisect.bisect_right(ticks, a) - bisect.bisect_left(ticks, a - context)
        after = bisect.bisect_right(ticks, b + context) - bisect.bisect_left(ticks, b)
        if before >= cfg.burst_min_keys and after >= cfg.burst_min_keys:
            gaps.append(KeyInterval(a, b, 2, i - 1, i))
    return gaps


class Indicator(Enum):
    SUSPICIOUS_PROCESS = "SUSPICIOUS_PROCESS"
    HID_DRIVER_LOAD = "HID_DRIVER_LOAD"
    PNP_DEVICE = "PNP_DEVICE"
    VENDOR_WATCHLIST = "VENDOR_WATCHLIST"
    LOCK_KEY_ABUSE = "LOCK_KEY_ABUSE"
    SLEEP_ANOMALY = "SLEEP_ANOMALY"


class Severity(IntEnum):
    LOW = 1
    MEDIUM = 2
    HIGH = 3


def severity_for(indicators) -> Severity:
    n = len(set(indicators))
    if n >= 3:
        return Severity.HIGH
    if n == 2:
        return Severity.MEDIUM
    return Severity.LOW


@dataclass(frozen=True)
class Evidence:
    indicator: Indicator
    entry: Entry


@dataclass(frozen=True)
class Finding:
    burst: BurstInterval
    indicators: frozenset
    evidence: tuple[Evidence, ...]
    severity: Severity

    def evidence_for(self, indicator: Indicator) -> list[Entry]:
        return [ev.entry for ev in self.evidence if ev.indicator is indicator]


def _host_indicators(event: HostEvent, cfg: DetectionConfig) -> list[Indicator]:
    if event.kind is HostKind.PROCESS_START:
        return [Indicator.SUSPICIOUS_PROCESS] if event.basename in cfg.suspicious_process_names else []
    if event.kind is HostKind.IMAGE_LOAD:
        return [Indicator.HID_DRIVER_LOAD] if event.basename in cfg.hid_driver_names else []
    found = [Indicator.PNP_DEVICE]
    dev = event.device_id
    vendors = {v.casefold() for v in cfg.vendor_watchlist}
    if (dev.vendor_string is not None and dev.vendor_string.casefold() in vendors) or (
            (dev.vid, dev.pid) in cfg.vid_pid_watchlist):
        found.append(Indicator.VENDOR_WATCHLIST)
    return found


def correlate(tl: Timeline, cfg: DetectionConfig) -> list[Finding]:
    """One Finding per keystroke burst, with indicators from nearby host activity.

    Absolute times before 2000 are treated as untrustworthy and take no part
    in correlation.
    """
    key_entries = [e for e in tl.entries if e.source is SourceClass.KEY and not e.event.time.suspect]
    keys = [e.event for e in key_entries]
    series = keystroke_rate_series(keys, cfg)
    bursts = detect_bursts(series, cfg)
    lock_runs = detect_lock_key_abuse(keys, cfg)
    sleeps = detect_sleep_gaps(keys, cfg)
    pad = seconds_to_ticks(cfg.correlation_window_seconds)

    findings = []
    for burst in bursts:
        t0, t1 = max(burst.start - pad, 0), burst.end + pad
        evidence: list[Evidence] = []
        for entry in window_query(tl, t0, t1, HOST_CLASSES):
            if entry.event.time.suspect:
                continue
            for ind in _host_indicators(entry.event, cfg):
                evidence.append(Evidence(ind, entry))
        for indicator, intervals in ((Indicator.LOCK_KEY_ABUSE, lock_runs), (Indicator.SLEEP_ANOMALY, sleeps)):
            for iv in intervals:
                if iv.start <= t1 and iv.end >= t0:
                    evidence.append(Evidence(indicator, key_entries[iv.first_index]))
                    if iv.last_index != iv.first_index:
                        evidence.append(Evidence(indicator, key_entries[iv.last_index]))
        indicators = frozenset(ev.indicator for ev in evidence)
        findings.append(Finding(burst, indicators, tuple(evidence), severity_for(indicators)))
    findings.sort(key=lambda f: f.burst.start)
    return findings


@dataclass(frozen=True)
class Analysis:
    """Intermediate detector products kept for reporting and plotting."""

    series: RateSeries
    bursts: list
    lock_runs: list
    sleep_gaps: list
    findings: list


def analyze_timeline(tl: Timeline, cfg: DetectionConfig) -> Analysis:
    keys = [e.event for e in tl.entries if e.source is SourceClass.KEY and not e.event.time.suspect]
    series = keystroke_rate_series(keys, cfg)
    return Analysis(series, detect_bursts(series, cfg), detect_lock_key_abuse(keys, cfg),
                    detect_sleep_gaps(keys, cfg), correlate(tl, cfg))
