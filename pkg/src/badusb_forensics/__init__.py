"""Post-mortem detection of BadUSB keystroke injection from host telemetry logs."""

from .detector import DetectionConfig, Finding, Indicator, Severity, correlate
from .event_model import (
    DeviceInstanceId,
    HostEvent,
    HostKind,
    KeystrokeEvent,
    NormalizedTime,
    TimeDomain,
    decompose_device_id,
    normalize_timestamp,
    ticks_to_utc,
)
from .log_codec import ParseReport, emit_record, parse_log
from .timeline import Timeline, build_timeline, window_query

__version__ = "0.1.0"

__all__ = [
    "DetectionConfig", "DeviceInstanceId", "Finding", "HostEvent", "HostKind", "Indicator",
    "KeystrokeEvent", "NormalizedTime", "ParseReport", "Severity", "TimeDomain", "Timeline",
    "build_timeline", "correlate", "decompose_device_id", "emit_record", "normalize_timestamp",
    "parse_log", "ticks_to_utc", "window_query",
]
