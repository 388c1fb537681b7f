"""Unified, time-ordered view over keystroke and host events."""

from __future__ import annotations

import bisect
from functools import cached_property
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable

from .event_model import Event, HostEvent, KeystrokeEvent
from .log_codec import emit_record


class SourceClass(IntEnum):
    # Value order is the tie-break order at equal ticks: causes before effects.
    PNP_ATTACH = 0
    IMAGE_LOAD = 1
    PROCESS_START = 2
    KEY = 3


ALL_CLASSES = frozenset(SourceClass)
HOST_CLASSES = frozenset({SourceClass.PNP_ATTACH, SourceClass.IMAGE_LOAD, SourceClass.PROCESS_START})


def source_class(event: Event) -> SourceClass:
    if isinstance(event, KeystrokeEvent):
        return SourceClass.KEY
    return SourceClass[event.kind.name]


@dataclass(frozen=True)
class Entry:
    ticks: int
    source: SourceClass
    event: Event


def _order_key(entry: Entry):
    # The record text makes ties between distinct events independent of input
    # order; identical events are interchangeable.
    return entry.ticks, entry.source, emit_record(entry.event)


@dataclass(frozen=True)
class Timeline:
    entries: tuple[Entry, ...] = ()
    unplaced: tuple[Entry, ...] = ()

    def __len__(self):
        return len(self.entries)

    @cached_property
    def ticks(self) -> list[int]:
        return [e.ticks for e in self.entries]

    def of_class(self, *classes: SourceClass) -> list[Entry]:
        wanted = set(classes)
        return [e for e in self.entries if e.source in wanted]

    @property
    def suspect(self) -> list[Entry]:
        """Absolute-time entries dated before 2000."""
        return [e for e in self.entries if e.event.time.suspect]


def build_timeline(keys: Iterable[KeystrokeEvent], hosts: Iterable[HostEvent]) -> Timeline:
    """Merge events into one ordering; non-absolute times go to ``unplaced``.

    Output is identical for every permutation of the inputs.
    """
    placed, unplaced = [], []
    for event in [*keys, *hosts]:
        entry = Entry(event.time.ticks, source_class(event), event)
        (placed if event.time.is_absolute else unplaced).append(entry)
    placed.sort(key=_order_key)
    unplaced.sort(key=lambda e: (e.source, e.event.time.domain.value, e.ticks, emit_record(e.event)))
    return Timeline(tuple(placed), tuple(unplaced))


def window_query(tl: Timeline, t0: int, t1: int, classes: Iterable[SourceClass] = ALL_CLASSES) -> list[Entry]:
    """Entries with t0 <= ticks <= t1 (closed interval) whose class is in ``classes``."""
    if t0 > t1:
        raise ValueError(f"window start {t0} is after window end {t1}")
    wanted = frozenset(classes)
    if not wanted:
        return []
    ticks = tl.ticks
    lo = bisect.bisect_left(ticks, t0)
    hi = bisect.bisect_right(ticks, t1)
    return [e for e in tl.entries[lo:hi] if e.source in wanted]

