"""Parsers and emitters for the KeyLog/ProcessLog/ImageLog/PnpLog record families.

Records are framed as ``<Kind>Log:<body>:End<Kind>Log``. Producers wrap long
records across physical lines and buffered writers can interleave unrelated
text, so scanning works on the newline-stripped stream and recovers from
broken records instead of aborting.
"""

from __future__ import annotations

import bisect
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Union

from .event_model import (
    DATETIME_PATTERN,
    Event,
    HostEvent,
    HostKind,
    KeystrokeEvent,
    NormalizedTime,
    RedactedCategory,
    TimeDomain,
    TimestampError,
    decompose_device_id,
    normalize_timestamp,
)


class CodecError(ValueError):
    """A record body that does not match its family grammar."""


class LogRecordKind(Enum):
    KEY = "Key"
    PROCESS = "Process"
    IMAGE = "Image"
    PNP = "Pnp"

    @property
    def prefix(self) -> str:
        return f"{self.value}Log:"

    @property
    def suffix(self) -> str:
        return f"End{self.value}Log"


_PREFIX_RE = re.compile(rb"(Key|Process|Image|Pnp)Log:")
_LEADING_TS_RE = re.compile(rf"({DATETIME_PATTERN}|\d+):")
_FRAGMENT_LEN = 80


@dataclass(frozen=True)
class RawRecord:
    kind: LogRecordKind
    body: str
    offset: int


@dataclass(frozen=True)
class RecordError:
    offset: int
    reason: str
    fragment: str


@dataclass
class ParseReport:
    events: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    records_seen: int = 0
    skipped_bytes: int = 0

    @property
    def ok(self) -> bool:
        return not self.errors


def _fragment(data: bytes) -> str:
    return data[:_FRAGMENT_LEN].decode("utf-8", errors="replace")


def scan_records(data: Union[bytes, str]) -> tuple[list[RawRecord], list[RecordError], int]:
    """Split a log stream into framed records.

    Returns ``(records, errors, skipped)`` where offsets are byte offsets into
    the original stream and ``skipped`` counts non-whitespace bytes found
    outside any record. A prefix whose suffix does not arrive before the next
    prefix (or end of stream) is reported as an orphan and scanning resumes
    right after it.
    """
    if isinstance(data, str):
        # Lone surrogates survive as invalid UTF-8 and surface as record errors.
        data = data.encode("utf-8", errors="surrogatepass")
    removed = [i for i, b in enumerate(data) if b in (0x0A, 0x0D)]
    joined = data.replace(b"\r", b"").replace(b"\n", b"")
    # removed[i] - i is the joined index at which the i-th newline was dropped.
    anchors = [pos - i for i, pos in enumerate(removed)]

    def original(j: int) -> int:
        return j + bisect.bisect_right(anchors, j)

    records: list[RawRecord] = []
    errors: list[RecordError] = []
    skipped = 0
    pos = 0
    n = len(joined)
    while pos < n:
        m = _PREFIX_RE.search(joined, pos)
        if m is None:
            skipped += len(joined[pos:].strip())
            break
        skipped += len(joined[pos:m.start()].strip())
        kind = LogRecordKind(m.group(1).decode("ascii"))
        body_start = m.end()
        suffix = b":" + kind.suffix.encode("ascii")
        end = joined.find(suffix, body_start)
        nxt = _PREFIX_RE.search(joined, body_start)
        if end < 0 or (nxt is not None and nxt.start() < end):
            errors.append(RecordError(
                original(m.start()),
                f"{kind.prefix} record has no matching {kind.suffix} suffix",
                _fragment(joined[m.start():]),
            ))
            pos = body_start
            continue
        raw_body = joined[body_start:end]
        try:
            body = raw_body.decode("utf-8")
        except UnicodeDecodeError:
            errors.append(RecordError(original(m.start()), "record body is not valid UTF-8",
                                      _fragment(joined[m.start():])))
        else:
            records.append(RawRecord(kind, body, original(m.start())))
        pos = end + len(suffix)
    return records, errors, skipped


def _split_leading_timestamp(body: str) -> Optional[tuple[NormalizedTime, str]]:
    m = _LEADING_TS_RE.match(body)
    if m is None:
        return None
    return normalize_timestamp(m.group(1)), body[m.end():]


def parse_process_record(body: str) -> HostEvent:
    split = _split_leading_timestamp(body)
    if split is None:
        raise CodecError(f"process record: unrecognizable timestamp in {body[:_FRAGMENT_LEN]!r}")
    time, rest = split
    pid_text, sep, path = rest.partition(":")
    if not sep or not pid_text.isascii() or not pid_text.isdigit():
        raise CodecError(f"process record: missing or non-numeric pid in {body[:_FRAGMENT_LEN]!r}")
    pid = int(pid_text)
    if not 0 < pid <= 0xFFFFFFFF:
        raise CodecError(f"process record: pid {pid} out of range")
    if not path:
        raise CodecError("process record: empty image path")
    return HostEvent.process_start(time, pid, path)


def parse_image_record(body: str) -> HostEvent:
    split = _split_leading_timestamp(body)
    if split is None:
        time, path = NormalizedTime.unknown(), body
    else:
        time, path = split
    if not path:
        raise CodecError("image record: empty image path")
    return HostEvent.image_load(time, path)


def parse_pnp_record(body: str) -> HostEvent:
    device, sep, stamp = body.partition(":")
    if not sep:
        raise CodecError(f"pnp record: no ':' between device id and timestamp in {body[:_FRAGMENT_LEN]!r}")
    if not device:
        raise CodecError("pnp record: empty device instance id")
    return HostEvent.pnp_attach(normalize_timestamp(stamp), decompose_device_id(device))


_HEX_KEY_RE = re.compile(r"0[xX]([0-9A-Fa-f]{1,4})")


def parse_key_record(body: str) -> KeystrokeEvent:
    split = _split_leading_timestamp(body)
    if split is None:
        raise CodecError(f"key record: unrecognizable timestamp in {body[:_FRAGMENT_LEN]!r}")
    time, token = split
    m = _HEX_KEY_RE.fullmatch(token)
    if m is not None:
        return KeystrokeEvent(time, int(m.group(1), 16))
    if token in ("LOCK", "OTHER"):
        return KeystrokeEvent(time, RedactedCategory(token))
    raise CodecError(f"key record: unknown key token {token!r}")


_PARSERS = {
    LogRecordKind.KEY: parse_key_record,
    LogRecordKind.PROCESS: parse_process_record,
    LogRecordKind.IMAGE: parse_image_record,
    LogRecordKind.PNP: parse_pnp_record,
}


def parse_record(kind: LogRecordKind, body: str) -> Event:
    return _PARSERS[kind](body)


def parse_log(data: Union[bytes, str], kinds: Optional[Iterable[LogRecordKind]] = None) -> ParseReport:
    """Scan and parse a whole log, collecting per-record errors.

    When ``kinds`` is given, records of any other family are counted as errors.
    """
    allowed = None if kinds is None else frozenset(kinds)
    records, scan_errors, skipped = scan_records(data)
    report = ParseReport(skipped_bytes=skipped)
    # Orphans and decode failures interleave with good records; keep stream order.
    items = [(r.offset, 1, r) for r in records] + [(e.offset, 0, e) for e in scan_errors]
    items.sort(key=lambda item: (item[0], item[1]))
    for _, _, item in items:
        report.records_seen += 1
        if isinstance(item, RecordError):
            report.errors.append(item)
            continue
        if allowed is not None and item.kind not in allowed:
            report.errors.append(RecordError(
                item.offset, f"unexpected {item.kind.name} record", item.body[:_FRAGMENT_LEN]))
            continue
        try:
            report.events.append(parse_record(item.kind, item.body))
        except (CodecError, TimestampError, ValueError) as exc:
            report.errors.append(RecordError(item.offset, str(exc), item.body[:_FRAGMENT_LEN]))
    return report


def _ticks_token(time: NormalizedTime) -> str:
    return str(time.ticks)


def record_kind(event: Event) -> LogRecordKind:
    if isinstance(event, KeystrokeEvent):
        return LogRecordKind.KEY
    return {
        HostKind.PROCESS_START: LogRecordKind.PROCESS,
        HostKind.IMAGE_LOAD: LogRecordKind.IMAGE,
        HostKind.PNP_ATTACH: LogRecordKind.PNP,
    }[event.kind]


def emit_body(event: Event) -> str:
    if isinstance(event, KeystrokeEvent):
        key = event.key.value if isinstance(event.key, RedactedCategory) else f"0x{event.key:02X}"
        return f"{_ticks_token(event.time)}:{key}"
    if event.kind is HostKind.PROCESS_START:
        return f"{_ticks_token(event.time)}:{event.pid}:{event.path}"
    if event.kind is HostKind.IMAGE_LOAD:
        if event.time.domain is TimeDomain.UNKNOWN:
            return event.path
        return f"{_ticks_token(event.time)}:{event.path}"
    return f"{event.device_id.raw}:{_ticks_token(event.time)}"


def emit_record(event: Event) -> str:
    """Serialize an event as one framed record line (no trailing newline).

    Times are always written as tick digits, so an ABSOLUTE time below 10**17
    reads back as RAW_RELATIVE; such events are outside the round-trip domain.
    """
    kind = record_kind(event)
    return f"{kind.prefix}{emit_body(event)}:{kind.suffix}"


def emit_log(events: Iterable[Event]) -> str:
    return "".join(emit_record(e) + "\n" for e in events)
