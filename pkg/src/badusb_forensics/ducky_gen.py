"""Scenario generator: DuckyScript payloads, human typists and full log sets.

Generated logs go through the same emitters the parsers invert, so every
scenario doubles as a parse/detect oracle with a known ground truth.
"""

from __future__ import annotations

import math
import random
import shlex
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

from .event_model import (
    TICKS_PER_MS,
    HostEvent,
    KeystrokeEvent,
    NormalizedTime,
    TimestampError,
    normalize_timestamp,
    seconds_to_ticks,
)
from .log_codec import emit_log

# US layout, scan code set 1 make codes.
_BASE_ROWS = [
    (0x02, "1234567890-=", "!@#$%^&*()_+"),
    (0x10, "qwertyuiop[]", "QWERTYUIOP{}"),
    (0x1E, "asdfghjkl;'`", 'ASDFGHJKL:"~'),
    (0x2B, "\\", "|"),
    (0x2C, "zxcvbnm,./", "ZXCVBNM<>?"),
]
SCAN_SHIFT = 0x2A
SCAN_CTRL = 0x1D
SCAN_ALT = 0x38
SCAN_GUI = 0xE05B
SCAN_ENTER = 0x1C
SCAN_TAB = 0x0F
SCAN_SPACE = 0x39
SCAN_CAPSLOCK = 0x3A
SCAN_NUMLOCK = 0x45
SCAN_SCROLLLOCK = 0x46

_UNSHIFTED: dict[str, int] = {" ": SCAN_SPACE}
_SHIFTED: dict[str, int] = {}
for _first, _plain, _shifted in _BASE_ROWS:
    for _offset, (_p, _s) in enumerate(zip(_plain, _shifted)):
        _UNSHIFTED[_p] = _first + _offset
        _SHIFTED[_s] = _first + _offset


class UnsupportedCharacter(ValueError):
    pass


def char_to_scancodes(c: str) -> list[int]:
    """Make codes needed to type ``c``; shifted characters are prefixed by LShift."""
    if c in _UNSHIFTED:
        return [_UNSHIFTED[c]]
    if c in _SHIFTED:
        return [SCAN_SHIFT, _SHIFTED[c]]
    raise UnsupportedCharacter(f"no US-layout make code for {c!r}")


def _base_scancode(c: str) -> int:
    return char_to_scancodes(c.lower())[-1]


class DuckyScriptError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


_NO_ARG = {"ENTER", "TAB", "CAPSLOCK", "NUMLOCK", "SCROLLLOCK"}
_MODIFIERS = {"GUI": SCAN_GUI, "CTRL": SCAN_CTRL, "ALT": SCAN_ALT, "SHIFT": SCAN_SHIFT}
_SINGLE_KEYS = {"ENTER": SCAN_ENTER, "TAB": SCAN_TAB, "CAPSLOCK": SCAN_CAPSLOCK,
                "NUMLOCK": SCAN_NUMLOCK, "SCROLLLOCK": SCAN_SCROLLLOCK}
KEYWORDS = frozenset({"REM", "DELAY", "DEFAULT_DELAY", "STRING", "STRINGLN", *_NO_ARG, *_MODIFIERS})


@dataclass(frozen=True)
class DuckyCommand:
    keyword: str
    arg: Union[str, int, None] = None


def _printable(text: str) -> bool:
    return all(" " <= ch <= "~" for ch in text)


def parse_ducky(script: str) -> list[DuckyCommand]:
    commands = []
    for lineno, line in enumerate(script.splitlines(), 1):
        line = line.rstrip("\r")
        if not line.strip():
            continue
        parts = line.lstrip().split(" ", 1)
        keyword = parts[0]
        arg = parts[1] if len(parts) > 1 else None
        if keyword not in KEYWORDS:
            raise DuckyScriptError(lineno, f"unknown keyword {keyword!r}")
        if keyword == "REM":
            commands.append(DuckyCommand("REM", arg or ""))
        elif keyword in ("DELAY", "DEFAULT_DELAY"):
            if arg is None or not arg.strip().isdigit():
                raise DuckyScriptError(lineno, f"{keyword} needs a non-negative integer of milliseconds")
            commands.append(DuckyCommand(keyword, int(arg.strip())))
        elif keyword in ("STRING", "STRINGLN"):
            if not arg:
                raise DuckyScriptError(lineno, f"{keyword} needs text")
            if not _printable(arg):
                raise DuckyScriptError(lineno, f"{keyword} text must be printable ASCII")
            commands.append(DuckyCommand(keyword, arg))
        elif keyword in _MODIFIERS:
            if arg is not None:
                arg = arg.strip()
                if len(arg) != 1 or not _printable(arg) or arg == " ":
                    raise DuckyScriptError(lineno, f"{keyword} takes at most one key character")
            commands.append(DuckyCommand(keyword, arg))
        else:
            if arg is not None and arg.strip():
                raise DuckyScriptError(lineno, f"{keyword} takes no argument")
            commands.append(DuckyCommand(keyword))
    return commands


def _command_codes(cmd: DuckyCommand) -> list[int]:
    if cmd.keyword in ("STRING", "STRINGLN"):
        codes = [code for ch in cmd.arg for code in char_to_scancodes(ch)]
        if cmd.keyword == "STRINGLN":
            codes.append(SCAN_ENTER)
        return codes
    if cmd.keyword in _MODIFIERS:
        codes = [_MODIFIERS[cmd.keyword]]
        if cmd.arg is not None:
            codes.append(_base_scancode(cmd.arg))
        return codes
    if cmd.keyword in _SINGLE_KEYS:
        return [_SINGLE_KEYS[cmd.keyword]]
    return []


def _compile(cmds: Sequence[DuckyCommand], start: int, interval_ticks: int) -> tuple[list[KeystrokeEvent], int]:
    clock = start
    step = interval_ticks
    events = []
    for cmd in cmds:
        if cmd.keyword == "DELAY":
            clock += cmd.arg * TICKS_PER_MS
        elif cmd.keyword == "DEFAULT_DELAY":
            # 0 restores the base injection interval.
            step = cmd.arg * TICKS_PER_MS if cmd.arg else interval_ticks
        for code in _command_codes(cmd):
            events.append(KeystrokeEvent(NormalizedTime.absolute(clock), code))
            clock += step
    return events, clock


def interval_to_ticks(interval_ms) -> int:
    ticks = round(interval_ms * TICKS_PER_MS)
    if ticks <= 0:
        raise ValueError(f"keystroke interval must be positive, got {interval_ms} ms")
    return ticks


def compile_commands(cmds: Sequence[DuckyCommand], start: int, keystroke_interval_ms=5) -> list[KeystrokeEvent]:
    """Run commands on a virtual clock starting at ``start`` ticks.

    Every emitted make code advances the clock by the injection interval (or
    the active DEFAULT_DELAY); DELAY advances it without emitting keys.
    """
    return _compile(cmds, start, interval_to_ticks(keystroke_interval_ms))[0]


@dataclass(frozen=True)
class TypistProfile:
    wpm: float
    jitter_sigma: float = 0.35
    pause_probability: float = 0.02
    pause_seconds: float = 1.5
    seed: int = 0

    def __post_init__(self):
        for name in ("wpm", "jitter_sigma", "pause_probability", "pause_seconds"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.pause_probability < 1:
            raise ValueError("pause_probability must be below 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def mean_interval_seconds(self) -> float:
        # Five characters per word.
        return 60.0 / (self.wpm * 5)


# Rough English letter mix for duration-driven typing.
_FILLER = "etaoinshrdlucmfwypvbgkjqxz" + " " * 5 + "etaoinshr"


def _human_events(codes_source, profile: TypistProfile, start: int, stop: Optional[int]):
    rng = random.Random(profile.seed)
    sigma = profile.jitter_sigma
    mu = math.log(profile.mean_interval_seconds) - sigma * sigma / 2
    clock = start
    events = []
    for code in codes_source(rng):
        if stop is not None and clock > stop:
            break
        events.append(KeystrokeEvent(NormalizedTime.absolute(clock), code))
        gap = rng.lognormvariate(mu, sigma)
        if rng.random() < profile.pause_probability:
            gap += rng.expovariate(1.0 / profile.pause_seconds)
        clock += max(1, seconds_to_ticks(gap))
    return events


def human_typing(text_or_duration: Union[str, float], profile: TypistProfile, start: int) -> list[KeystrokeEvent]:
    """Simulate a person typing a text, or random text for a duration in seconds.

    Inter-key intervals are log-normal with the profile's mean, plus an
    occasional exponentially distributed thinking pause.
    """
    if isinstance(text_or_duration, str):
        codes = []
        for ch in text_or_duration:
            codes.extend([SCAN_ENTER] if ch == "\n" else char_to_scancodes(ch))
        return _human_events(lambda rng: iter(codes), profile, start, None)

    def filler(rng):
        while True:
            yield _UNSHIFTED[rng.choice(_FILLER)]

    return _human_events(filler, profile, start, start + seconds_to_ticks(text_or_duration))


# Scenario elements. ``at`` is seconds from scenario start; None means "right
# after the previous element".

@dataclass(frozen=True)
class AttachDevice:
    device_ids: tuple[str, ...]
    drivers: tuple[str, ...] = ()
    at: Optional[float] = None


@dataclass(frozen=True)
class RunPayload:
    script: str
    keystroke_interval_ms: float = 5.0
    at: Optional[float] = None


@dataclass(frozen=True)
class HumanTyping:
    profile: TypistProfile
    duration: Optional[float] = None
    text: Optional[str] = None
    at: Optional[float] = None

    def __post_init__(self):
        if (self.duration is None) == (self.text is None):
            raise ValueError("human typing needs exactly one of duration or text")


@dataclass(frozen=True)
class SpawnProcess:
    path: str
    pid: int
    at: Optional[float] = None


Element = Union[AttachDevice, RunPayload, HumanTyping, SpawnProcess]


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    start: int
    elements: tuple = ()

    def __post_init__(self):
        if self.start < 0:
            raise ScenarioError("scenario start must be non-negative ticks")
        last = 0.0
        for el in self.elements:
            if el.at is None:
                continue
            if el.at < 0 or el.at < last:
                raise ScenarioError(f"element offsets must be non-negative and non-decreasing (got {el.at})")
            last = el.at


@dataclass
class ScenarioLogs:
    keys: str
    processes: str
    images: str
    pnp: str

    def as_dict(self) -> dict[str, str]:
        return {"keys": self.keys, "processes": self.processes, "images": self.images, "pnp": self.pnp}


def scenario_events(s: Scenario) -> tuple[list[KeystrokeEvent], list[HostEvent], list[HostEvent], list[HostEvent]]:
    """Run a scenario, returning (keys, processes, images, pnp) events.

    Keys are time-ordered; host events follow element order.
    """
    keys: list[KeystrokeEvent] = []
    procs: list[HostEvent] = []
    images: list[HostEvent] = []
    pnp: list[HostEvent] = []
    cursor = s.start
    for el in s.elements:
        t = cursor if el.at is None else s.start + seconds_to_ticks(el.at)
        if isinstance(el, AttachDevice):
            when = NormalizedTime.absolute(t)
            pnp.extend(HostEvent.pnp_attach(when, dev) for dev in el.device_ids)
            images.extend(HostEvent.image_load(when, path) for path in el.drivers)
            cursor = t
        elif isinstance(el, SpawnProcess):
            procs.append(HostEvent.process_start(NormalizedTime.absolute(t), el.pid, el.path))
            cursor = t
        elif isinstance(el, RunPayload):
            typed, cursor = _compile(parse_ducky(el.script), t, interval_to_ticks(el.keystroke_interval_ms))
            keys.extend(typed)
        else:
            source = el.text if el.text is not None else el.duration
            typed = human_typing(source, el.profile, t)
            keys.extend(typed)
            cursor = typed[-1].time.ticks if typed else t
    keys.sort(key=lambda k: k.time.ticks)
    return keys, procs, images, pnp


def synthesize_scenario(s: Scenario, redact: bool = False) -> ScenarioLogs:
    """Render a scenario as the four log texts; ``redact`` drops scan codes."""
    keys, procs, images, pnp = scenario_events(s)
    if redact:
        keys = [k.redact() for k in keys]
    return ScenarioLogs(emit_log(keys), emit_log(procs), emit_log(images), emit_log(pnp))


def _split_options(tokens, allowed, lineno):
    positional, options = [], {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if sep and key in allowed:
            options.setdefault(key, []).append(value)
        else:
            positional.append(tok)
    return positional, options


def _single(options, key, convert, lineno, default=None):
    values = options.get(key)
    if not values:
        return default
    if len(values) > 1:
        raise ScenarioError(f"line {lineno}: {key}= given more than once")
    try:
        return convert(values[0])
    except ValueError:
        raise ScenarioError(f"line {lineno}: bad value for {key}: {values[0]!r}") from None


def _logical_lines(text: str):
    pending, first = "", 0
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not pending:
            first = lineno
        if stripped.endswith(" \\") or stripped == "\\":
            pending += stripped[:-1]
            continue
        yield first, (pending + stripped).strip()
        pending = ""
    if pending:
        yield first, pending.strip()


def parse_scenario(text: str, base_dir=None) -> Scenario:
    """Parse the line-oriented scenario format.

    Directives::

        start <ticks|datetime>
        attach <device-id>... [driver=<path>]... [at=<s>]
        payload <file> [interval_ms=<ms>] [at=<s>]
        human <wpm> <seconds> [seed=<n>] [at=<s>]
        spawn <path> pid=<n> [at=<s>]

    Payload files resolve against ``base_dir`` (a path or package resource
    directory). Blank lines and '#' comments are ignored; backslashes are
    literal, quotes group words, and a trailing " \\" continues a line.
    """
    base = Path(".") if base_dir is None else base_dir
    start = None
    elements: list[Element] = []
    for lineno, stripped in _logical_lines(text):
        if not stripped or stripped.startswith("#"):
            continue
        lexer = shlex.shlex(stripped, posix=True)
        lexer.whitespace_split = True
        lexer.escape = ""
        lexer.commenters = "#"
        try:
            tokens = list(lexer)
        except ValueError as exc:
            raise ScenarioError(f"line {lineno}: {exc}") from None
        directive, args = tokens[0], tokens[1:]
        if directive == "start":
            try:
                stamp = normalize_timestamp(" ".join(args))
            except TimestampError as exc:
                raise ScenarioError(f"line {lineno}: {exc}") from None
            if not stamp.is_absolute:
                raise ScenarioError(f"line {lineno}: scenario start must be an absolute time")
            start = stamp.ticks
        elif directive == "attach":
            pos, opts = _split_options(args, {"driver", "at"}, lineno)
            if not pos:
                raise ScenarioError(f"line {lineno}: attach needs at least one device id")
            elements.append(AttachDevice(tuple(pos), tuple(opts.get("driver", [])),
                                         _single(opts, "at", float, lineno)))
        elif directive == "payload":
            pos, opts = _split_options(args, {"interval_ms", "at"}, lineno)
            if len(pos) != 1:
                raise ScenarioError(f"line {lineno}: payload takes exactly one file")
            script = (base / pos[0]).read_text(encoding="utf-8")
            elements.append(RunPayload(script, _single(opts, "interval_ms", float, lineno, 5.0),
                                       _single(opts, "at", float, lineno)))
        elif directive == "human":
            pos, opts = _split_options(args, {"seed", "at"}, lineno)
            if len(pos) != 2:
                raise ScenarioError(f"line {lineno}: human takes <wpm> <seconds>")
            try:
                wpm, seconds = float(pos[0]), float(pos[1])
                profile = TypistProfile(wpm, seed=_single(opts, "seed", int, lineno, 0))
            except ValueError as exc:
                raise ScenarioError(f"line {lineno}: {exc}") from None
            elements.append(HumanTyping(profile, duration=seconds, at=_single(opts, "at", float, lineno)))
        elif directive == "spawn":
            pos, opts = _split_options(args, {"pid", "at"}, lineno)
            pid = _single(opts, "pid", int, lineno)
            if len(pos) != 1 or pid is None:
                raise ScenarioError(f"line {lineno}: spawn takes <path> pid=<n>")
            elements.append(SpawnProcess(pos[0], pid, _single(opts, "at", float, lineno)))
        else:
            raise ScenarioError(f"line {lineno}: unknown directive {directive!r}")
    if start is None:
        raise ScenarioError("scenario has no start directive")
    return Scenario(start, tuple(elements))


BUNDLED_SCENARIOS = ("paper-replay", "benign-razer")


def load_scenario(name_or_path: Union[str, Path]) -> Scenario:
    """Load a scenario file, or a bundled one by name."""
    if str(name_or_path) in BUNDLED_SCENARIOS:
        pkg = resources.files("badusb_forensics") / "scenarios"
        filename = str(name_or_path).replace("-", "_") + ".scn"
        return parse_scenario((pkg / filename).read_text(encoding="utf-8"), pkg)
    path = Path(name_or_path)
    return parse_scenario(path.read_text(encoding="utf-8"), path.parent)
