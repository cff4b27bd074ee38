"""Recorded robot experience: frames, actions and events of one episode.

An ``ExperienceLog`` is what crosses from the day phase to the night phase.
Logs are immutable values; :func:`record_tick` returns a new log. For long
episodes use :class:`LogWriter`, which owns a mutable buffer and produces the
same log in one shot.

On disk a log is UTF-8 JSON lines (``.explog``, optionally gzipped)::

    {"schema":1,"robot_id":"r0","episode_id":"e0","channels":["a","b"],"rng_seed":7}
    {"t":0,"s":[0.1,0.2],"a":"forward","e":[]}
"""
from __future__ import annotations

import gzip
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

SCHEMA_VERSION = 1
EVENT_KINDS = ("pain", "charge_start", "charge_stop", "episode_end")
_GZIP_MAGIC = b"\x1f\x8b"


class ExperienceError(ValueError):
    pass


class NonMonotonicTick(ExperienceError):
    pass


class ChannelMismatch(ExperienceError):
    pass


class InvalidEvent(ExperienceError):
    pass


class MalformedLog(ExperienceError):
    def __init__(self, offset: int, reason: str):
        super().__init__(f"malformed log at byte {offset}: {reason}")
        self.offset = offset
        self.reason = reason


@dataclass(frozen=True)
class SensorFrame:
    tick: int
    channels: tuple[tuple[str, float], ...]
    battery: float

    @property
    def channel_ids(self) -> tuple[str, ...]:
        return tuple(c for c, _ in self.channels)

    @property
    def values(self) -> tuple[float, ...]:
        return tuple(v for _, v in self.channels)

    def value(self, channel_id: str) -> float:
        if channel_id == "battery":
            return self.battery
        for c, v in self.channels:
            if c == channel_id:
                return v
        raise KeyError(channel_id)

    def as_dict(self) -> dict[str, float]:
        d = dict(self.channels)
        d["battery"] = self.battery
        return d


@dataclass(frozen=True)
class EventRecord:
    tick: int
    kind: str
    channel_id: Optional[str] = None


@dataclass(frozen=True)
class ExperienceLog:
    robot_id: str
    episode_id: str
    channels: tuple[str, ...] = ()
    frames: tuple[SensorFrame, ...] = ()
    actions: tuple[tuple[int, str], ...] = ()
    events: tuple[EventRecord, ...] = ()
    rng_seed: int = 0

    @property
    def last_tick(self) -> Optional[int]:
        return self.frames[-1].tick if self.frames else None

    def events_at(self, tick: int) -> list[EventRecord]:
        return [e for e in self.events if e.tick == tick]


# -- violations returned by validate_log ------------------------------------

@dataclass(frozen=True)
class Violation:
    tick: Optional[int]

    def __str__(self) -> str:
        return f"{type(self).__name__}(tick={self.tick})"


@dataclass(frozen=True)
class RangeViolation(Violation):
    channel: str = ""


@dataclass(frozen=True)
class MissingChannel(Violation):
    """Pain event without the offending channel."""


@dataclass(frozen=True)
class SchemaViolation(Violation):
    detail: str = ""


@dataclass(frozen=True)
class TickOrderViolation(Violation):
    detail: str = ""


@dataclass(frozen=True)
class ActionViolation(Violation):
    detail: str = ""


@dataclass(frozen=True)
class EventViolation(Violation):
    detail: str = ""


def _check_frame_schema(channels: tuple[str, ...], frame: SensorFrame) -> None:
    ids = frame.channel_ids
    if len(set(ids)) != len(ids):
        raise ChannelMismatch(f"duplicate channel ids at tick {frame.tick}: {ids}")
    if channels and ids != channels:
        raise ChannelMismatch(
            f"frame channels {ids} at tick {frame.tick} differ from log schema {channels}"
        )


def _check_events(frame: SensorFrame, events: Iterable[EventRecord]) -> tuple[EventRecord, ...]:
    out = []
    for ev in events:
        if ev.tick != frame.tick:
            raise InvalidEvent(f"event at tick {ev.tick} recorded with frame {frame.tick}")
        if ev.kind not in EVENT_KINDS:
            raise InvalidEvent(f"unknown event kind {ev.kind!r}")
        out.append(ev)
    return tuple(out)


def record_tick(log: ExperienceLog, frame: SensorFrame, action: str,
                events: Iterable[EventRecord] = ()) -> ExperienceLog:
    """Return a copy of ``log`` with one more tick appended."""
    last = log.last_tick
    if last is not None and frame.tick <= last:
        raise NonMonotonicTick(f"tick {frame.tick} does not follow {last}")
    _check_frame_schema(log.channels, frame)
    evs = _check_events(frame, events)
    return ExperienceLog(
        robot_id=log.robot_id,
        episode_id=log.episode_id,
        channels=log.channels or frame.channel_ids,
        frames=log.frames + (frame,),
        actions=log.actions + ((frame.tick, action),),
        events=log.events + evs,
        rng_seed=log.rng_seed,
    )


@dataclass
class LogWriter:
    """Single-owner append buffer; ``build()`` yields the immutable log."""

    robot_id: str
    episode_id: str
    rng_seed: int = 0
    channels: tuple[str, ...] = ()
    _frames: list = field(default_factory=list)
    _actions: list = field(default_factory=list)
    _events: list = field(default_factory=list)

    def record(self, frame: SensorFrame, action: str, events: Iterable[EventRecord] = ()) -> None:
        if self._frames and frame.tick <= self._frames[-1].tick:
            raise NonMonotonicTick(f"tick {frame.tick} does not follow {self._frames[-1].tick}")
        if not self.channels:
            self.channels = frame.channel_ids
        _check_frame_schema(self.channels, frame)
        self._events.extend(_check_events(frame, events))
        self._frames.append(frame)
        self._actions.append((frame.tick, action))

    def __len__(self) -> int:
        return len(self._frames)

    def build(self) -> ExperienceLog:
        return ExperienceLog(self.robot_id, self.episode_id, tuple(self.channels),
                             tuple(self._frames), tuple(self._actions),
                             tuple(self._events), self.rng_seed)


def validate_log(log: ExperienceLog) -> list[Violation]:
    """All invariant violations of ``log``; empty iff the log is valid."""
    out: list[Violation] = []
    prev = None
    for fr in log.frames:
        if fr.tick < 0:
            out.append(TickOrderViolation(fr.tick, "negative tick"))
        if prev is not None and fr.tick <= prev:
            out.append(TickOrderViolation(fr.tick, f"does not follow {prev}"))
        prev = fr.tick
        ids = fr.channel_ids
        if len(set(ids)) != len(ids):
            out.append(SchemaViolation(fr.tick, "duplicate channel ids"))
        if ids != tuple(log.channels):
            out.append(SchemaViolation(fr.tick, f"channels {ids} != {tuple(log.channels)}"))
        for c, v in fr.channels:
            if not 0.0 <= v <= 1.0:
                out.append(RangeViolation(fr.tick, c))
        if not 0.0 <= fr.battery <= 1.0:
            out.append(RangeViolation(fr.tick, "battery"))

    frame_ticks = [f.tick for f in log.frames]
    action_ticks = [t for t, _ in log.actions]
    if action_ticks != frame_ticks:
        missing = sorted(set(frame_ticks) ^ set(action_ticks))
        tick = missing[0] if missing else None
        out.append(ActionViolation(tick, "actions do not pair one-to-one with frame ticks"))

    ticks = set(frame_ticks)
    prev_ev = None
    for ev in log.events:
        if prev_ev is not None and ev.tick < prev_ev:
            out.append(EventViolation(ev.tick, "events not sorted by tick"))
        prev_ev = ev.tick
        if ev.kind not in EVENT_KINDS:
            out.append(EventViolation(ev.tick, f"unknown kind {ev.kind!r}"))
        if ev.tick not in ticks:
            out.append(EventViolation(ev.tick, "event tick outside recorded frames"))
        if ev.kind == "pain" and not ev.channel_id:
            out.append(MissingChannel(ev.tick))
    return out


# -- serialization ----------------------------------------------------------

def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def serialize_log(log: ExperienceLog) -> bytes:
    header = {
        "schema": SCHEMA_VERSION,
        "robot_id": log.robot_id,
        "episode_id": log.episode_id,
        "channels": list(log.channels),
        "rng_seed": int(log.rng_seed),
    }
    by_tick: dict[int, list] = {}
    for ev in log.events:
        item = {"k": ev.kind}
        if ev.channel_id is not None:
            item["c"] = ev.channel_id
        by_tick.setdefault(ev.tick, []).append(item)
    actions = dict(log.actions)
    lines = [_dumps(header)]
    for fr in log.frames:
        lines.append(_dumps({
            "t": fr.tick,
            "s": [float(v) for v in fr.values],
            "b": float(fr.battery),
            "a": actions.get(fr.tick),
            "e": by_tick.get(fr.tick, []),
        }))
    return ("\n".join(lines) + "\n").encode("utf-8")


def deserialize_log(data: bytes) -> ExperienceLog:
    if data[:2] == _GZIP_MAGIC:
        try:
            data = gzip.decompress(data)
        except (OSError, EOFError) as exc:
            raise MalformedLog(0, f"bad gzip stream: {exc}") from None
    if not data:
        raise MalformedLog(0, "empty stream")
    if not data.endswith(b"\n"):
        raise MalformedLog(len(data), "truncated stream (missing final newline)")

    offset = 0
    lines = data.split(b"\n")[:-1]
    header = None
    writer = None
    for raw in lines:
        try:
            obj = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedLog(offset, f"invalid JSON line: {exc}") from None
        if not isinstance(obj, dict):
            raise MalformedLog(offset, "line is not a JSON object")
        try:
            if header is None:
                if obj.get("schema") != SCHEMA_VERSION:
                    raise MalformedLog(offset, f"unsupported schema {obj.get('schema')!r}")
                header = obj
                writer = LogWriter(str(obj["robot_id"]), str(obj["episode_id"]),
                                   int(obj["rng_seed"]), tuple(obj["channels"]))
            else:
                t = int(obj["t"])
                vals = obj["s"]
                if len(vals) != len(writer.channels):
                    raise MalformedLog(offset, "sample count differs from channel schema")
                frame = SensorFrame(t, tuple(zip(writer.channels, (float(v) for v in vals))),
                                    float(obj["b"]))
                evs = [EventRecord(t, e["k"], e.get("c")) for e in obj["e"]]
                if obj["a"] is None:
                    raise MalformedLog(offset, "missing action")
                writer.record(frame, str(obj["a"]), evs)
        except MalformedLog:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedLog(offset, f"bad record: {exc!r}") from None
        offset += len(raw) + 1
    if header is None:
        raise MalformedLog(0, "missing header")
    return writer.build()


def write_log(path, log: ExperienceLog, compress: Optional[bool] = None) -> Path:
    path = Path(path)
    data = serialize_log(log)
    if compress is None:
        compress = path.suffix == ".gz"
    if compress:
        data = gzip.compress(data, mtime=0)
    path.write_bytes(data)
    return path


def read_log(path) -> ExperienceLog:
    return deserialize_log(Path(path).read_bytes())
