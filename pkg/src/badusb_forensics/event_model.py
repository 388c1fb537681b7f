"""Core event types and FILETIME timestamp normalization.

All times are carried as FILETIME ticks (100 ns units since 1601-01-01 UTC)
tagged with the clock domain they came from.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

TICKS_PER_MS = 10_000
TICKS_PER_SECOND = 10_000_000
TICKS_PER_DAY = 86_400 * TICKS_PER_SECOND
MAX_TICKS = 2**64 - 1

# Digit-run timestamps at or above this are FILETIME absolutes; below it they
# are boot-relative or otherwise epoch-less counters.
ABSOLUTE_DIGIT_FLOOR = 10**17

# 2000-01-01T00:00:00Z; absolute times before this are flagged suspect.
Y2K_TICKS = 125_911_584_000_000_000

# Days from 1601-01-01 to 1970-01-01.
_DAYS_1601_TO_1970 = 134_774

# Scan code set 1 make codes for CapsLock, NumLock, ScrollLock.
LOCK_SCAN_CODES = frozenset({0x3A, 0x45, 0x46})

_DATETIME_RE = re.compile(
    r"(\d{4,5})-(\d{2})-(\d{2}) (\d{2}):(\d{2}):(\d{2})\.(\d{3}) ([+-])(\d{2}):(\d{2})"
)
# Unanchored form, used by record parsers to find a leading timestamp token.
DATETIME_PATTERN = _DATETIME_RE.pattern


def seconds_to_ticks(seconds) -> int:
    return round(seconds * TICKS_PER_SECOND)


class TimestampError(ValueError):
    """Raised for malformed timestamp tokens."""


class TimeDomainError(ValueError):
    """Raised when an operation needs an absolute time and gets another domain."""


class TimeDomain(Enum):
    ABSOLUTE = "absolute"
    RAW_RELATIVE = "raw_relative"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class NormalizedTime:
    ticks: int
    domain: TimeDomain

    def __post_init__(self):
        if not 0 <= self.ticks <= MAX_TICKS:
            raise ValueError(f"ticks out of unsigned 64-bit range: {self.ticks}")

    @classmethod
    def absolute(cls, ticks: int) -> NormalizedTime:
        return cls(ticks, TimeDomain.ABSOLUTE)

    @classmethod
    def relative(cls, ticks: int) -> NormalizedTime:
        return cls(ticks, TimeDomain.RAW_RELATIVE)

    @classmethod
    def unknown(cls) -> NormalizedTime:
        return cls(0, TimeDomain.UNKNOWN)

    @property
    def is_absolute(self) -> bool:
        return self.domain is TimeDomain.ABSOLUTE

    @property
    def suspect(self) -> bool:
        """True for absolute times earlier than 2000-01-01."""
        return self.is_absolute and self.ticks < Y2K_TICKS


class RedactedCategory(Enum):
    LOCK = "LOCK"
    OTHER = "OTHER"


def is_lock_code(code: int) -> bool:
    return code in LOCK_SCAN_CODES


@dataclass(frozen=True)
class KeystrokeEvent:
    """One key make event.

    ``key`` is either the raw make code or, in redacted logs, only whether the
    key was a lock key.
    """

    time: NormalizedTime
    key: Union[int, RedactedCategory]

    def __post_init__(self):
        if isinstance(self.key, bool) or not isinstance(self.key, (int, RedactedCategory)):
            raise TypeError(f"key must be a scan code or RedactedCategory, got {self.key!r}")
        if isinstance(self.key, int) and not 0 <= self.key <= 0xFFFF:
            raise ValueError(f"scan code out of 16-bit range: {self.key:#x}")

    @property
    def is_lock(self) -> bool:
        if isinstance(self.key, RedactedCategory):
            return self.key is RedactedCategory.LOCK
        return is_lock_code(self.key)

    @property
    def redacted(self) -> bool:
        return isinstance(self.key, RedactedCategory)

    def redact(self) -> KeystrokeEvent:
        """Drop the scan code, keeping only the lock/other distinction."""
        category = RedactedCategory.LOCK if self.is_lock else RedactedCategory.OTHER
        return KeystrokeEvent(self.time, category)


@dataclass(frozen=True)
class DeviceInstanceId:
    raw: str
    bus: str
    vid: Optional[int] = None
    pid: Optional[int] = None
    vendor_string: Optional[str] = None


_VID_RE = re.compile(r"(?:^|[\\&])VID_([0-9A-Fa-f]{1,4})(?![0-9A-Fa-f])", re.IGNORECASE)
_PID_RE = re.compile(r"(?:^|[\\&])PID_([0-9A-Fa-f]{1,4})(?![0-9A-Fa-f])", re.IGNORECASE)
_VEN_RE = re.compile(r"(?:^|[\\&])Ven_([^&\\]+)", re.IGNORECASE)


def decompose_device_id(raw: str) -> DeviceInstanceId:
    """Split a PnP device instance ID into bus, VID/PID and vendor tokens.

    IDs without recognizable tokens simply leave the optional fields unset.
    """
    if not raw:
        raise ValueError("empty device instance id")
    bus = raw.split("\\", 1)[0]
    vid = _VID_RE.search(raw)
    pid = _PID_RE.search(raw)
    ven = _VEN_RE.search(raw)
    return DeviceInstanceId(
        raw=raw,
        bus=bus,
        vid=int(vid.group(1), 16) if vid else None,
        pid=int(pid.group(1), 16) if pid else None,
        vendor_string=ven.group(1) if ven else None,
    )


class HostKind(Enum):
    PROCESS_START = "process_start"
    IMAGE_LOAD = "image_load"
    PNP_ATTACH = "pnp_attach"


@dataclass(frozen=True)
class HostEvent:
    time: NormalizedTime
    kind: HostKind
    pid: Optional[int] = None
    path: Optional[str] = None
    device_id: Optional[DeviceInstanceId] = None

    def __post_init__(self):
        if self.kind is HostKind.PROCESS_START:
            if self.pid is None or not 0 < self.pid <= 0xFFFFFFFF:
                raise ValueError(f"process start needs a pid in 1..2^32-1, got {self.pid}")
            if not self.path:
                raise ValueError("process start needs a non-empty image path")
            if self.device_id is not None:
                raise ValueError("process start carries no device id")
        elif self.kind is HostKind.IMAGE_LOAD:
            if not self.path:
                raise ValueError("image load needs a non-empty path")
            if self.pid is not None or self.device_id is not None:
                raise ValueError("image load carries only a path")
        else:
            if self.device_id is None:
                raise ValueError("pnp attach needs a device id")
            if self.pid is not None or self.path is not None:
                raise ValueError("pnp attach carries only a device id")

    @classmethod
    def process_start(cls, time: NormalizedTime, pid: int, path: str) -> HostEvent:
        return cls(time, HostKind.PROCESS_START, pid=pid, path=path)

    @classmethod
    def image_load(cls, time: NormalizedTime, path: str) -> HostEvent:
        return cls(time, HostKind.IMAGE_LOAD, path=path)

    @classmethod
    def pnp_attach(cls, time: NormalizedTime, device_id: Union[str, DeviceInstanceId]) -> HostEvent:
        if isinstance(device_id, str):
            device_id = decompose_device_id(device_id)
        return cls(time, HostKind.PNP_ATTACH, device_id=device_id)

    @property
    def basename(self) -> str:
        """Final path component, lowercased; empty for PnP events."""
        if self.path is None:
            return ""
        return re.split(r"[\\/]", self.path)[-1].lower()


Event = Union[KeystrokeEvent, HostEvent]


# Proleptic Gregorian day arithmetic (H. Hinnant's civil-days algorithms),
# shifted so day 0 is 1601-01-01.

def days_from_civil(year: int, month: int, day: int) -> int:
    y = year - (month <= 2)
    era = y // 400
    yoe = y - era * 400
    mp = (month + 9) % 12
    doy = (153 * mp + 2) // 5 + day - 1
    doe = yoe * 365 + yoe // 4 - yoe // 100 + doy
    return era * 146097 + doe - 719468 + _DAYS_1601_TO_1970


def civil_from_days(days: int) -> tuple[int, int, int]:
    z = days - _DAYS_1601_TO_1970 + 719468
    era = z // 146097
    doe = z - era * 146097
    yoe = (doe - doe // 1460 + doe // 36524 - doe // 146096) // 365
    doy = doe - (365 * yoe + yoe // 4 - yoe // 100)
    mp = (5 * doy + 2) // 153
    day = doy - (153 * mp + 2) // 5 + 1
    month = mp + 3 if mp < 10 else mp - 9
    return yoe + era * 400 + (month <= 2), month, day


def _days_in_month(year: int, month: int) -> int:
    if month == 2:
        leap = year % 4 == 0 and (year % 100 != 0 or year % 400 == 0)
        return 29 if leap else 28
    return 30 if month in (4, 6, 9, 11) else 31


def _parse_datetime(token: str) -> int:
    m = _DATETIME_RE.fullmatch(token)
    if m is None:
        raise TimestampError(
            f"unrecognized timestamp {token!r}: expected a digit run of FILETIME ticks "
            "or 'YYYY-MM-DD HH:MM:SS.mmm +HH:MM'"
        )
    year, month, day, hour, minute, second, ms = (int(g) for g in m.group(1, 2, 3, 4, 5, 6, 7))
    sign, off_h, off_m = m.group(8), int(m.group(9)), int(m.group(10))
    if not (1 <= month <= 12 and 1 <= day <= _days_in_month(year, month)):
        raise TimestampError(f"invalid calendar date in {token!r}")
    if hour > 23 or minute > 59 or second > 59 or off_h > 23 or off_m > 59:
        raise TimestampError(f"invalid time of day or offset in {token!r}")
    local = (
        days_from_civil(year, month, day) * TICKS_PER_DAY
        + ((hour * 60 + minute) * 60 + second) * TICKS_PER_SECOND
        + ms * TICKS_PER_MS
    )
    offset = (off_h * 60 + off_m) * 60 * TICKS_PER_SECOND
    # Local = UTC + offset.
    ticks = local - offset if sign == "+" else local + offset
    if not 0 <= ticks <= MAX_TICKS:
        raise TimestampError(f"timestamp {token!r} falls outside the FILETIME range")
    return ticks


def normalize_timestamp(token: str) -> NormalizedTime:
    """Classify and convert a log timestamp token.

    Digit runs are raw FILETIME-style counts: ABSOLUTE when at least 10**17,
    otherwise RAW_RELATIVE. Datetime tokens with a numeric UTC offset are
    converted to absolute ticks.
    """
    if not token:
        raise TimestampError("empty timestamp token")
    if token.isascii() and token.isdigit():
        value = int(token)
        if value > MAX_TICKS:
            raise TimestampError(f"timestamp {token!r} exceeds unsigned 64-bit range")
        if value >= ABSOLUTE_DIGIT_FLOOR:
            return NormalizedTime.absolute(value)
        return NormalizedTime.relative(value)
    return NormalizedTime.absolute(_parse_datetime(token))


def ticks_to_utc(t: NormalizedTime) -> str:
    """Render absolute ticks as 'YYYY-MM-DD HH:MM:SS.mmm +00:00' (sub-ms truncated)."""
    if not t.is_absolute:
        raise TimeDomainError(f"cannot render {t.domain.name} time as a calendar date")
    days, rem = divmod(t.ticks, TICKS_PER_DAY)
    year, month, day = civil_from_days(days)
    secs, sub = divmod(rem, TICKS_PER_SECOND)
    hh, rest = divmod(secs, 3600)
    mm, ss = divmod(rest, 60)
    return f"{year:04d}-{month:02d}-{day:02d} {hh:02d}:{mm:02d}:{ss:02d}.{sub // TICKS_PER_MS:03d} +00:00"


def format_time(t: NormalizedTime) -> str:
    """Human-readable rendering for any domain."""
    if t.is_absolute:
        return ticks_to_utc(t)
    if t.domain is TimeDomain.RAW_RELATIVE:
        return f"raw:{t.ticks}"
    return "unknown"
