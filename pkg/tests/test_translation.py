import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import frame, small_log
from dreamcycle.snn import Network, replay
from dreamcycle.translation import (ChannelSpec, MissingSpec, OutOfRange, PAIN_POP, TranslationParams,
                                    apply_plan_tick, charging_ticks, detect_pain, encode_complement,
                                    encode_value, forced_count, literal_threshold, plan_stimulation,
                                    schedule_replay, spike_probability, stim_from_probs)

SPECS = (ChannelSpec("a", pain_threshold=0.9), ChannelSpec("b", pain_threshold=0.9))


def test_encode_midpoint():
    s = ChannelSpec("a", k=10, x0=0.5, r_min=5, r_max=100)
    assert encode_value(s, 0.5) == pytest.approx(52.5)


def test_encode_saturates_for_steep_curve():
    s = ChannelSpec("a", k=50, x0=0.5, r_min=5, r_max=100)
    assert abs(encode_value(s, 0.0) - 5) < 1e-3 * 95
    assert abs(encode_value(s, 1.0) - 100) < 1e-3 * 95


def test_encode_rejects_out_of_range():
    with pytest.raises(OutOfRange):
        encode_value(SPECS[0], 1.01)
    with pytest.raises(OutOfRange):
        encode_complement(SPECS[0], 0.5, -0.1)


def test_missing_spec():
    log = small_log([(0.1, 0.2)])
    with pytest.raises(MissingSpec):
        plan_stimulation(log, SPECS[:1])


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.5, 60), st.floats(0, 1))
def test_encoding_monotone(x, y, k, x0):
    s = ChannelSpec("a", k=k, x0=x0)
    lo, hi = sorted((x, y))
    assert encode_value(s, lo) <= encode_value(s, hi)
    assert encode_complement(s, 0.5, lo) >= encode_complement(s, 0.5, hi)
    assert s.r_min <= encode_value(s, x) <= s.r_max


def test_literal_threshold_inverts_encoder():
    s = ChannelSpec("prox", k=20, x0=0.9)
    theta = literal_threshold(s, 5.0, decimals=12)
    assert encode_value(s, theta) == pytest.approx(5.0)
    assert literal_threshold(s, 5.0) == 0.72
    assert literal_threshold(s, 1.0) is None
    # complement crosses the same rate at theta
    assert encode_complement(s, theta, theta) == pytest.approx(5.0)


def test_pain_above_threshold_fires_one_burst():
    log = small_log([(0.2, 0.2), (0.95, 0.1)])
    plan = plan_stimulation(log, SPECS)
    assert plan.pain_excitations == [(1, PAIN_POP, 0.8)]
    assert plan.pain_injections == [(1, 0.3)]


def test_pain_at_threshold_is_silent():
    plan = plan_stimulation(small_log([(0.9, 0.9)]), SPECS)
    assert plan.pain_excitations == [] and plan.pain_injections == []


def test_pain_tie_break_takes_first_channel():
    ev = detect_pain(frame(4, (0.95, 0.99)), SPECS)
    assert (ev.tick, ev.channel_id, ev.value) == (4, "a", 0.95)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.sampled_from([0.0, 0.5, 0.9, 0.91, 1.0]),
                          st.sampled_from([0.0, 0.5, 0.9, 0.91, 1.0])), min_size=1, max_size=15))
def test_pain_completeness(rows):
    plan = plan_stimulation(small_log(rows), SPECS)
    expected = [t for t, (a, b) in enumerate(rows) if a > 0.9 or b > 0.9]
    assert [t for t, _, _ in plan.pain_excitations] == expected
    assert [t for t, _ in plan.pain_injections] == expected


def test_charging_interval_releases_dopamine_per_tick():
    rows = [(0.1, 0.1)] * 20
    log = small_log(rows, events=[(10, "charge_start"), (14, "charge_stop")])
    assert charging_ticks(log) == [10, 11, 12, 13]
    plan = plan_stimulation(log, SPECS, TranslationParams(d_charge=0.05))
    assert [t for t, _ in plan.dopamine_injections] == [10, 11, 12, 13]
    assert plan.total_dopamine == pytest.approx(4 * 0.05)


def test_forced_count():
    assert forced_count(0.8, 32) == 26
    assert forced_count(0.25, 32) == 8
    assert forced_count(1.0, 32) == 32
    assert forced_count(0.0, 32) == 0


def test_pain_burst_forces_26_of_32():
    net = Network([("sens:a", 32), ("sens:b", 32), (PAIN_POP, 32)])
    plan = plan_stimulation(small_log([(0.95, 0.1)]), SPECS)
    stim = apply_plan_tick(net, plan, 0, np.random.default_rng(0))
    assert stim[PAIN_POP].sum() == 26
    assert net.modulators.pain_mod == pytest.approx(0.3)


def test_poisson_rate_within_five_percent():
    net = Network([("sens:a", 32)])
    rate, dt, n = 40.0, 10.0, 10_000
    p = spike_probability(rate, dt)
    rng = np.random.default_rng(11)
    total = sum(stim_from_probs(net, {"sens:a": p}, {}, rng)["sens:a"].sum() for _ in range(n))
    measured = total / (32 * n * dt / 1000.0)
    assert abs(measured - rate) / rate < 0.05


def test_spike_probability_clips():
    assert spike_probability(200.0, 10.0) == 1.0
    assert spike_probability(0.0, 10.0) == 0.0


def test_schedule_layout():
    net = Network([("sens:a", 32), ("sens:b", 32), (PAIN_POP, 32)])
    log = small_log([(0.1, 0.1), (0.95, 0.1), (0.1, 0.1)],
                    events=[(0, "charge_start"), (2, "charge_stop")])
    plan = plan_stimulation(log, SPECS)
    sched = schedule_replay(plan, net, bin_width=5)
    assert sched.n_ticks == 3 * 3 * 5
    pain_col = net.pop_names.index(PAIN_POP)
    # pain of log tick 1 lands on the first tick of its outcome bin
    assert sched.forced_k[15, pain_col] == 26
    assert np.count_nonzero(sched.forced_k[:, pain_col]) == 1
    # dopamine of tick 0 is released at the outcome bin of tick 1, tick 1's at tick 2
    dopa = np.nonzero(sched.injections[:, 0])[0].tolist()
    assert dopa == [15, 30]


def test_replay_is_deterministic():
    def run():
        net = Network([("sens:a", 32), ("sens:b", 32), (PAIN_POP, 32)], seed=3)
        net.connect("sens:a", "sens:b", 0.1, 0.3, (1, 3))
        plan = plan_stimulation(small_log([(0.3, 0.6), (0.95, 0.2)] * 5), SPECS)
        s = schedule_replay(plan, net)
        return replay(net, 10.0, s.probs, s.forced_k, s.injections, np.random.default_rng(5)).counts

    assert np.array_equal(run(), run())
