"""Deterministic grid world standing in for the robot platform.

Cells are ``(x, y)`` with ``0 <= x < width`` and ``0 <= y < height``; everything
outside the grid is wall. North is ``+y``.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .experience import EventRecord, ExperienceLog, LogWriter, SensorFrame
from .rules import RuleSet, match_rules

ACTIONS = ("forward", "turn_left", "turn_right", "stay")
HEADINGS = ("N", "E", "S", "W")
CHANNELS = ("prox_front", "prox_left", "prox_right", "hazard_front", "charger_gradient")
_DELTA = {"N": (0, 1), "E": (1, 0), "S": (0, -1), "W": (-1, 0)}
_EMPTY_BATTERY = 1e-9

Cell = tuple[int, int]


class WorldError(ValueError):
    pass


@dataclass(frozen=True)
class GridWorld:
    width: int = 12
    height: int = 12
    hazards: frozenset = frozenset()
    charger: Cell = (0, 0)
    obstacles: frozenset = frozenset()
    drain: float = 0.002
    charge_rate: float = 0.01
    battery_init: float = 1.0
    name: str = "world"

    def __post_init__(self):
        object.__setattr__(self, "hazards", frozenset(map(tuple, self.hazards)))
        object.__setattr__(self, "obstacles", frozenset(map(tuple, self.obstacles)))
        object.__setattr__(self, "charger", tuple(self.charger))
        if self.width < 1 or self.height < 1:
            raise WorldError("grid must be at least 1x1")
        if self.charger in self.hazards or self.charger in self.obstacles:
            raise WorldError("charger must not be a hazard or obstacle")
        if not self.in_bounds(self.charger):
            raise WorldError("charger out of bounds")
        if not 0 < self.drain < self.charge_rate:
            raise WorldError("need 0 < drain < charge_rate")
        for c in self.hazards | self.obstacles:
            if not self.in_bounds(c):
                raise WorldError(f"cell {c} out of bounds")

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def blocked(self, cell: Cell) -> bool:
        return not self.in_bounds(cell) or cell in self.obstacles

    def free_cells(self) -> list[Cell]:
        """Cells a robot may start in."""
        skip = self.hazards | self.obstacles | {self.charger}
        return [(x, y) for y in range(self.height) for x in range(self.width) if (x, y) not in skip]

    @property
    def max_manhattan(self) -> int:
        return max(1, self.width + self.height - 2)


@dataclass(frozen=True)
class RobotState:
    pos: Cell
    heading: str
    battery: float

    def __post_init__(self):
        if self.heading not in HEADINGS:
            raise WorldError(f"bad heading {self.heading!r}")


@dataclass
class EpisodeMetrics:
    episode_id: str
    seed: int
    ticks: int
    pain_count: int
    charge_ticks: int
    mean_battery: float

    CSV_FIELDS = ("episode_id", "seed", "ticks", "pain_count", "charge_ticks", "mean_battery")

    def row(self) -> list:
        return [self.episode_id, self.seed, self.ticks, self.pain_count,
                self.charge_ticks, f"{self.mean_battery:.6f}"]


def metrics_csv(rows: list[EpisodeMetrics], header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(EpisodeMetrics.CSV_FIELDS)
    for m in rows:
        w.writerow(m.row())
    return buf.getvalue()


def _rotate(heading: str, steps: int) -> str:
    return HEADINGS[(HEADINGS.index(heading) + steps) % 4]


def _ahead(pos: Cell, heading: str) -> Cell:
    dx, dy = _DELTA[heading]
    return (pos[0] + dx, pos[1] + dy)


def _free_distance(world: GridWorld, pos: Cell, heading: str) -> int:
    d = 0
    cell = _ahead(pos, heading)
    while not world.blocked(cell):
        d += 1
        cell = _ahead(cell, heading)
    return d


def sense(world: GridWorld, robot: RobotState, rng: Optional[np.random.Generator] = None,
          noise: float = 0.0, tick: int = 0) -> SensorFrame:
    ahead = _ahead(robot.pos, robot.heading)
    dist = abs(robot.pos[0] - world.charger[0]) + abs(robot.pos[1] - world.charger[1])
    values = [
        1.0 / (1.0 + _free_distance(world, robot.pos, robot.heading)),
        1.0 / (1.0 + _free_distance(world, robot.pos, _rotate(robot.heading, -1))),
        1.0 / (1.0 + _free_distance(world, robot.pos, _rotate(robot.heading, 1))),
        1.0 if ahead in world.hazards else 0.0,
        1.0 - min(1.0, dist / world.max_manhattan),
    ]
    if noise > 0.0 and rng is not None:
        values = [float(min(1.0, max(0.0, v + rng.normal(0.0, noise)))) for v in values]
    return SensorFrame(tick, tuple(zip(CHANNELS, values)), robot.battery)


def step_world(world: GridWorld, robot: RobotState, action: str,
               rng: Optional[np.random.Generator] = None,
               tick: int = 0) -> tuple[RobotState, list[EventRecord]]:
    """Apply one action; events are stamped with ``tick``."""
    if action not in ACTIONS:
        raise WorldError(f"unknown action {action!r}")
    events: list[EventRecord] = []
    pos, heading = robot.pos, robot.heading
    if action == "forward":
        target = _ahead(pos, heading)
        if world.blocked(target):
            pass
        elif target in world.hazards:
            events.append(EventRecord(tick, "pain", "hazard_front"))
        else:
            pos = target
    elif action == "turn_left":
        heading = _rotate(heading, -1)
    elif action == "turn_right":
        heading = _rotate(heading, 1)

    was_charging = robot.pos == world.charger
    charging = pos == world.charger
    if charging:
        battery = min(1.0, robot.battery + world.charge_rate)
    else:
        battery = robot.battery - world.drain
        if battery < _EMPTY_BATTERY:
            battery = 0.0
    if charging and not was_charging:
        events.append(EventRecord(tick, "charge_start"))
    elif was_charging and not charging:
        events.append(EventRecord(tick, "charge_stop"))
    if battery <= 0.0:
        events.append(EventRecord(tick, "episode_end"))
    return RobotState(pos, heading, battery), events


def initial_state(world: GridWorld, rng: np.random.Generator) -> RobotState:
    cells = world.free_cells()
    if not cells:
        raise WorldError("no free start cell")
    pos = cells[int(rng.integers(len(cells)))]
    heading = HEADINGS[int(rng.integers(4))]
    return RobotState(pos, heading, world.battery_init)


def choose_action(rs: RuleSet, frame: SensorFrame, rng: np.random.Generator,
                  exploration: float) -> str:
    action, _ = match_rules(rs, frame)
    if exploration > 0.0 and rng.random() < exploration:
        action = ACTIONS[int(rng.integers(len(ACTIONS)))]
    return action


def run_episode(world: GridWorld, rs: RuleSet, max_ticks: int, seed: int, *,
                robot_id: str = "robot-0", episode_id: Optional[str] = None,
                exploration: float = 0.0, noise: float = 0.0,
                start: Optional[RobotState] = None) -> tuple[ExperienceLog, EpisodeMetrics]:
    """Sense, match, act and record until the battery dies or ``max_ticks``."""
    if max_ticks < 1:
        raise WorldError("max_ticks must be >= 1")
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    rng = np.random.default_rng(seed)
    episode_id = episode_id or f"ep-{seed}"
    robot = start if start is not None else initial_state(world, rng)
    writer = LogWriter(robot_id, episode_id, seed)
    pain = charge = 0
    battery_sum = 0.0
    for t in range(max_ticks):
        frame = sense(world, robot, rng, noise, tick=t)
        action = choose_action(rs, frame, rng, exploration)
        robot, events = step_world(world, robot, action, rng, tick=t)
        writer.record(frame, action, events)
        battery_sum += frame.battery
        pain += sum(1 for e in events if e.kind == "pain")
        charge += robot.pos == world.charger
        if any(e.kind == "episode_end" for e in events):
            break
    n = len(writer)
    metrics = EpisodeMetrics(episode_id, seed, n, pain, charge, battery_sum / n)
    return writer.build(), metrics


# -- world files ------------------------------------------------------------

def world_from_json(obj: dict) -> GridWorld:
    return GridWorld(
        width=int(obj["width"]),
        height=int(obj["height"]),
        hazards=frozenset(tuple(c) for c in obj.get("hazards", [])),
        charger=tuple(obj["charger"]),
        obstacles=frozenset(tuple(c) for c in obj.get("obstacles", [])),
        drain=float(obj.get("drain", 0.002)),
        charge_rate=float(obj.get("charge_rate", 0.01)),
        battery_init=float(obj.get("battery_init", 1.0)),
        name=str(obj.get("name", "world")),
    )


def world_to_json(world: GridWorld) -> dict:
    return {
        "name": world.name,
        "width": world.width,
        "height": world.height,
        "hazards": sorted(list(c) for c in world.hazards),
        "charger": list(world.charger),
        "obstacles": sorted(list(c) for c in world.obstacles),
        "drain": world.drain,
        "charge_rate": world.charge_rate,
        "battery_init": world.battery_init,
    }


def load_world(path) -> GridWorld:
    return world_from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def render(world: GridWorld, robot: Optional[RobotState] = None) -> str:
    """ASCII map, north at the top."""
    arrows = {"N": "^", "E": ">", "S": "v", "W": "<"}
    rows = []
    for y in reversed(range(world.height)):
        row = []
        for x in range(world.width):
            c = (x, y)
            if robot is not None and c == robot.pos:
                row.append(arrows[robot.heading])
            elif c in world.obstacles:
                row.append("#")
            elif c in world.hazards:
                row.append("x")
            elif c == world.charger:
                row.append("C")
            else:
                row.append(".")
        rows.append("".join(row))
    return "\n".join(rows)
