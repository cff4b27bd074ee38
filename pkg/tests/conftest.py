import json
from pathlib import Path

import pytest

from dreamcycle.config import DEFAULTS, load_config
from dreamcycle.experience import EventRecord, LogWriter, SensorFrame
from dreamcycle.rules import load_rules
from dreamcycle.world import load_world

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def root():
    return ROOT


@pytest.fixture(scope="session")
def basic_world():
    return load_world(ROOT / "worlds" / "basic.json")


@pytest.fixture(scope="session")
def basic_rules():
    return load_rules(ROOT / "rules" / "basic.rules")


@pytest.fixture(scope="session")
def default_cfg():
    return load_config(ROOT / "config.default.json")


@pytest.fixture
def make_config(tmp_path):
    """Write a config into tmp_path that points at the shipped fixtures."""

    def make(**over):
        raw = {"world": str(ROOT / "worlds" / "basic.json"),
               "rules": str(ROOT / "rules" / "basic.rules"),
               "out_dir": str(tmp_path / "out")}
        for k, v in over.items():
            if isinstance(v, dict) and isinstance(raw.get(k), dict):
                raw[k].update(v)
            else:
                raw[k] = v
        path = tmp_path / f"cfg-{len(list(tmp_path.glob('cfg-*.json')))}.json"
        path.write_text(json.dumps(raw))
        return path

    return make


def frame(t, values, battery=0.5, channels=("a", "b")):
    return SensorFrame(t, tuple(zip(channels, values)), battery)


def small_log(values, actions=None, events=(), channels=("a", "b"), robot="r0", episode="e0"):
    """Log from per-tick value tuples; ``events`` are (tick, kind[, channel])."""
    w = LogWriter(robot, episode, 7)
    evs = {}
    for e in events:
        evs.setdefault(e[0], []).append(EventRecord(*e))
    for t, vals in enumerate(values):
        a = actions[t] if actions else "stay"
        w.record(frame(t, vals, channels=channels), a, evs.get(t, ()))
    return w.build()
