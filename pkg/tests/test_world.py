import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dreamcycle.experience import serialize_log
from dreamcycle.rules import RuleSet
from dreamcycle.world import (ACTIONS, GridWorld, RobotState, WorldError, render, run_episode,
                              sense, step_world, world_from_json, world_to_json)

W = GridWorld(width=5, height=5, hazards={(2, 3)}, charger=(0, 0), obstacles={(4, 2)},
              drain=0.01, charge_rate=0.05)


def values(frame):
    return dict(frame.channels)


def test_world_invariants():
    with pytest.raises(WorldError):
        GridWorld(hazards={(1, 1)}, charger=(1, 1))
    with pytest.raises(WorldError):
        GridWorld(drain=0.02, charge_rate=0.01)


def test_facing_wall():
    v = values(sense(W, RobotState((2, 4), "N", 0.5)))
    assert v["prox_front"] == 1.0
    # west of (2,4) has two free cells
    assert v["prox_left"] == pytest.approx(1 / 3)


def test_hazard_ahead():
    assert values(sense(W, RobotState((2, 2), "N", 0.5)))["hazard_front"] == 1.0
    assert values(sense(W, RobotState((2, 2), "E", 0.5)))["hazard_front"] == 0.0


def test_on_charger():
    v = values(sense(W, RobotState((0, 0), "N", 0.5)))
    assert v["charger_gradient"] == 1.0
    far = values(sense(W, RobotState((4, 4), "N", 0.5)))
    assert far["charger_gradient"] == 0.0


def test_obstacle_counts_as_wall():
    assert values(sense(W, RobotState((3, 2), "E", 0.5)))["prox_front"] == 1.0


def test_stay_drains():
    r, ev = step_world(W, RobotState((2, 2), "N", 0.5), "stay")
    assert r.battery == pytest.approx(0.49) and ev == []


def test_forward_into_obstacle():
    r, _ = step_world(W, RobotState((3, 2), "E", 0.5), "forward")
    assert (r.pos, r.heading) == ((3, 2), "E")


def test_forward_into_hazard_bounces_with_pain():
    r, ev = step_world(W, RobotState((2, 2), "N", 0.5), "forward", tick=7)
    assert r.pos == (2, 2)
    assert [(e.tick, e.kind, e.channel_id) for e in ev] == [(7, "pain", "hazard_front")]


def test_charger_transitions():
    r, ev = step_world(W, RobotState((1, 0), "W", 0.5), "forward", tick=1)
    assert r.pos == (0, 0) and r.battery == pytest.approx(0.55)
    assert [e.kind for e in ev] == ["charge_start"]
    r, ev = step_world(W, r, "turn_right", tick=2)
    assert ev == [] and r.heading == "N"
    r, ev = step_world(W, r, "forward", tick=3)
    assert [e.kind for e in ev] == ["charge_stop"]


def test_turns():
    r, _ = step_world(W, RobotState((2, 2), "N", 0.5), "turn_left")
    assert r.heading == "W"
    r, _ = step_world(W, r, "turn_right")
    assert r.heading == "N"


def test_unknown_action():
    with pytest.raises(WorldError):
        step_world(W, RobotState((2, 2), "N", 0.5), "jump")


def test_max_ticks_precondition(basic_world):
    with pytest.raises(WorldError):
        run_episode(basic_world, RuleSet((), "stay"), 0, 1)


def test_depletion_by_arithmetic(basic_world):
    log, m = run_episode(basic_world, RuleSet((), "stay"), 2000, 3)
    assert m.ticks == math.ceil(basic_world.battery_init / basic_world.drain) == 500
    assert log.events[-1].kind == "episode_end"
    assert m.pain_count == 0 and m.charge_ticks == 0


def test_episode_determinism(basic_world, basic_rules):
    a = run_episode(basic_world, basic_rules, 300, 11, exploration=0.1, noise=0.05)
    b = run_episode(basic_world, basic_rules, 300, 11, exploration=0.1, noise=0.05)
    assert serialize_log(a[0]) == serialize_log(b[0]) and a[1] == b[1]


def test_pain_count_matches_events(basic_world, basic_rules):
    for seed in range(5):
        log, m = run_episode(basic_world, basic_rules, 400, seed, exploration=0.3)
        assert m.pain_count == sum(e.kind == "pain" for e in log.events)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(ACTIONS), min_size=1, max_size=120), st.integers(0, 10_000),
       st.floats(0.0, 1.0))
def test_battery_and_obstacle_invariants(actions, seed, battery):
    world = GridWorld(width=6, height=6, hazards={(1, 1), (4, 4)}, charger=(3, 3),
                      obstacles={(2, 2), (2, 3), (5, 0)}, drain=0.05, charge_rate=0.2)
    rng = np.random.default_rng(seed)
    cells = world.free_cells()
    r = RobotState(cells[int(rng.integers(len(cells)))], "N", battery)
    for a in actions:
        r, _ = step_world(world, r, a)
        assert 0.0 <= r.battery <= 1.0
        assert r.pos not in world.obstacles and world.in_bounds(r.pos)


def test_world_json_roundtrip(basic_world):
    assert world_from_json(world_to_json(basic_world)) == basic_world
    assert basic_world.width == 12 and len(basic_world.hazards) == 6


def test_render_marks_robot():
    text = render(W, RobotState((1, 1), "E", 1.0))
    assert ">" in text and len(text.splitlines()) == 5
