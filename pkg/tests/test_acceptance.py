"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""
import asyncio
import itertools
import math
import statistics
import time

import numpy as np
import pytest

from dreamcycle.cli import main
from dreamcycle.cycle import brain_from_config, derive_seed, run_dream
from dreamcycle.night import run_night
from dreamcycle.protocol import MESSAGE_TYPES, decode_frame, encode_frame
from dreamcycle.reverse import ActivationTrace, mine_chains
from dreamcycle.rules import ConditionExpr, Literal, Rule, RuleSet
from dreamcycle.server import BrainService, DreamServer, RobotClient, ServerThread
from dreamcycle.snn import (ModulatorState, Network, NeuronParams, PlasticityParams, apply_stdp,
                            consolidate, simulate, step)
from dreamcycle.translation import (ChannelSpec, plan_stimulation, spike_probability,
                                    stim_from_probs)
from dreamcycle.world import load_world, run_episode

from conftest import small_log
from test_night import planted_log
from test_reverse import ROLE_LAYOUTS, brute_force_chains, layout_columns, make_trace


@pytest.fixture
def verdict(capsys):
    def report(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail
    return report


def test_ac1_lif_analytic_rate(verdict):
    dt, current = 0.1, 3.0
    params = NeuronParams()
    expected_ms = params.isi(current, dt) * dt
    net = Network([("a", 1)], neuron=params)
    t0 = time.perf_counter()
    net_ticks = int(1010 * expected_ms / dt) + 1000
    log = simulate(net, dt, net_ticks, {"a": current})
    elapsed = time.perf_counter() - t0
    isi_ms = np.diff(log.spike_ticks) * dt
    err = abs(isi_ms.mean() - expected_ms) / expected_ms
    ok = isi_ms.size >= 1000 and err < 0.02 and elapsed < 5.0
    verdict(1, ok, f"ISI {isi_ms.mean():.3f} ms vs {expected_ms:.3f} ms (rel err {err:.4f}) "
                   f"over {isi_ms.size} intervals in {elapsed:.2f} s")


def test_ac2_stdp_signs(verdict):
    dt = 10.0
    out = {}
    for order in ("pre_post", "post_pre"):
        net = Network([("pre", 1), ("post", 1)])
        net.add_synapses([0], [1], 0.2, 1)
        first, second = ("pre", "post") if order == "pre_post" else ("post", "pre")
        net, s = step(net, dt, {first: [0]})
        apply_stdp(net, s, dt)
        net, s = step(net, dt, {second: [0]})
        apply_stdp(net, s, dt)
        out[order] = net.syn_elig[0]
    sp = net.stdp
    want_plus = sp.a_plus * math.exp(-dt / sp.tau_plus)
    want_minus = -sp.a_minus * math.exp(-dt / sp.tau_minus)
    ok = (out["pre_post"] > 0 > out["post_pre"]
          and abs(out["pre_post"] - want_plus) <= 1e-9 * abs(want_plus)
          and abs(out["post_pre"] - want_minus) <= 1e-9 * abs(want_minus))
    verdict(2, ok, f"pre->post {out['pre_post']:.12g} (want {want_plus:.12g}), "
                   f"post->pre {out['post_pre']:.12g} (want {want_minus:.12g})")


def test_ac3_dopamine_gating(verdict):
    plast = PlasticityParams()
    mods = ModulatorState(dopamine=plast.d_baseline, dopamine_rest=plast.d_baseline)
    net = Network([("a", 20), ("b", 20)], plasticity=plast, modulators=mods, syn_gain=2.0, seed=1)
    net.connect("a", "b", 0.3, 0.5, (1, 4))
    net.connect("b", "a", 0.3, 0.5, (1, 4))
    w0 = net.syn_w.copy()
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        net, s = step(net, 10.0, {"a": rng.random(20) < 0.2, "b": rng.random(20) < 0.1})
        apply_stdp(net, s, 10.0)
        consolidate(net)
    frozen = np.array_equal(net.syn_w, w0)
    nonzero = int(np.count_nonzero(net.syn_elig))
    pulse = 0.4
    net.modulators.dopamine = plast.d_baseline + pulse
    predicted = np.clip(w0 + plast.eta * pulse * net.syn_elig, plast.w_min, plast.w_max)
    consolidate(net)
    exact = np.allclose(net.syn_w, predicted, rtol=0, atol=1e-15)
    changed = np.flatnonzero(net.syn_w != w0)
    ok = frozen and nonzero > 0 and exact and set(changed) == set(np.flatnonzero(predicted != w0))
    verdict(3, ok, f"10^4 baseline steps froze weights: {frozen}; pulse changed {changed.size} "
                   f"weights, all matching the oracle: {exact}")


def test_ac4_encoder_statistics(verdict):
    net = Network([("sens:a", 32)])
    rate, dt, n = 40.0, 10.0, 10_000
    rng = np.random.default_rng(2024)
    p = spike_probability(rate, dt)
    total = sum(int(stim_from_probs(net, {"sens:a": p}, {}, rng)["sens:a"].sum()) for _ in range(n))
    measured = total / (32 * n * dt / 1000.0)
    rate_ok = abs(measured - rate) / rate < 0.05

    specs = (ChannelSpec("a", pain_threshold=0.9), ChannelSpec("b", pain_threshold=0.9))
    grid = (0.0, 0.5, 0.9, 0.9000001, 1.0)
    cases = 0
    complete = True
    for length in (1, 2, 3):
        for frames in itertools.product(itertools.product(grid, grid), repeat=length):
            plan = plan_stimulation(small_log(list(frames)), specs)
            want = [t for t, (a, b) in enumerate(frames) if a > 0.9 or b > 0.9]
            complete &= [t for t, _, _ in plan.pain_excitations] == want
            cases += 1
    verdict(4, rate_ok and complete, f"rate {measured:.2f} Hz vs {rate} Hz; pain plan exact on {cases} "
                                     f"enumerated logs: {complete}")


def test_ac5_mining_oracle(verdict):
    rng = np.random.default_rng(5)
    checked = mismatches = 0
    for roles in ROLE_LAYOUTS:
        cols = layout_columns(roles)
        for n_bins in range(1, 13):
            for _ in range(25):
                density = rng.uniform(0.1, 0.9)
                rows = (rng.random((n_bins, len(cols))) < density).astype(int).tolist()
                tr = make_trace(rows, cols, rng.uniform(-1, 1, n_bins))
                for support_min in (1, 2, 3):
                    for delta_max in (1, 2, 3):
                        got = {c.labels: (c.support, c.total, round(c.mean_valence, 12))
                               for c in mine_chains(tr, support_min, delta_max)}
                        want = {k: (s, t, round(v, 12))
                                for k, (s, t, v) in brute_force_chains(tr, support_min, delta_max).items()}
                        mismatches += got != want
                        checked += 1
    verdict(5, mismatches == 0, f"{checked} fixture traces (<=12 bins, <=6 columns), {mismatches} mismatches")


def _lit(c, p, t):
    return ConditionExpr((Literal(c, p, t),))


PLANTED_RULES = (
    Rule("user.hazard", _lit("hazard_front", "ge", 0.32), "turn_left", _lit("hazard_front", "lt", 0.32), 1.0, 30, 10),
    Rule("user.wall", _lit("prox_front", "ge", 0.72), "turn_right", _lit("prox_front", "lt", 0.72), 1.0, 30, 10),
    Rule("user.charge", _lit("charger_gradient", "ge", 0.98), "stay", _lit("charger_gradient", "ge", 0.98),
         1.0, 30, 10),
)


def test_ac6_round_trip_recovery(verdict, default_cfg, basic_world):
    t0 = time.perf_counter()
    rs = RuleSet(PLANTED_RULES, "forward")
    logs = [run_episode(basic_world, rs, 500, derive_seed(7, i), robot_id="r0", episode_id=f"e{i}",
                        exploration=0.2)[0] for i in range(10)]
    brain = brain_from_config(default_cfg, 7)
    res = run_night(brain, [("r0", lg) for lg in logs], {"r0": RuleSet((), "forward")}, "ac6")
    elapsed = time.perf_counter() - t0
    found = {}
    for e in res.robots["r0"].extracted:
        found[(e.rule.if_cond, e.rule.do_action, e.rule.then_cond)] = e.p
    ps = [found.get((r.if_cond, r.do_action, r.then_cond)) for r in PLANTED_RULES]
    ok = all(p is not None and p >= 0.8 for p in ps) and elapsed < 60
    detail = ", ".join(f"{r.id.split('.')[1]} p={p if p is None else round(p, 3)}"
                       for r, p in zip(PLANTED_RULES, ps))
    verdict(6, ok, f"{detail}; {elapsed:.1f} s")


def test_ac7_end_to_end_improvement(verdict, default_cfg):
    t0 = time.perf_counter()
    first_pain, last_pain, first_ticks, last_ticks = [], [], [], []
    for seed in range(20):
        reports = run_dream(default_cfg, seed, cycles=5, episodes=10)
        first_pain += [m.pain_count for m in reports[0].metrics]
        last_pain += [m.pain_count for m in reports[-1].metrics]
        first_ticks += [m.ticks for m in reports[0].metrics]
        last_ticks += [m.ticks for m in reports[-1].metrics]
    elapsed = time.perf_counter() - t0
    p1, p5 = statistics.median(first_pain), statistics.median(last_pain)
    t1, t5 = statistics.median(first_ticks), statistics.median(last_ticks)
    ok = p5 <= 0.5 * p1 and t5 >= t1 and elapsed < 600
    verdict(7, ok, f"median pain {p1:g} -> {p5:g}, median ticks {t1:g} -> {t5:g}, "
                   f"20 seeds x 5 cycles x 10 episodes in {elapsed:.0f} s")


def test_ac8_protocol(verdict, default_cfg, tmp_path):
    codec = all(decode_frame(encode_frame({"type": k, "x": [1, "é", None]}))[0] == {"type": k, "x": [1, "é", None]}
                and encode_frame(decode_frame(encode_frame({"type": k}))[0]) == encode_frame({"type": k})
                for k in MESSAGE_TYPES)
    factory = lambda: brain_from_config(default_cfg)
    service = BrainService(factory, tmp_path / "spool")
    with ServerThread(DreamServer(service, "127.0.0.1", 0)) as srv:

        async def robot(rid):
            def go():
                with RobotClient.connect("127.0.0.1", srv.port, timeout=300) as c:
                    c.hello(rid)
                    c.upload(planted_log(60, robot=rid))
                    done = c.run_night()
                    return done["run_id"], c.fetch_patch()
            return await asyncio.to_thread(go)

        async def all_robots():
            return await asyncio.gather(*(robot(f"r{i}") for i in range(3)))

        results = asyncio.run(all_robots())
    service.close()
    concurrent_ok = service.violations == 0 and all(p.provenance.get("run_id") for _, p in results)

    spool = tmp_path / "spool2"
    first = BrainService(factory, spool)
    first.register("r0")
    first.enqueue("r0", planted_log(40, episode="a"))
    first.close()
    second = BrainService(factory, spool)
    recovered = second.pending() == 1
    run_id, stats = second.run_night()
    recovered &= run_id is not None and stats["logs_replayed"] == 1
    second.close()
    verdict(8, codec and concurrent_ok and recovered,
            f"codec byte-exact for {len(MESSAGE_TYPES)} types: {codec}; 3 clients, "
            f"{service.violations} serialization violations; spool recovery: {recovered}")


def test_ac9_determinism(verdict, make_config, tmp_path):
    cfg = make_config(day={"max_ticks": 600})
    for out in ("a", "b"):
        assert main(["dream", "--config", str(cfg), "--seed", "3", "--cycles", "2", "--episodes", "3",
                     "--dump-night", "--out", str(tmp_path / out)]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    same = files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    diffs = [str(f) for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
    n_patches = sum(f.suffix == ".patch" for f in files)
    n_logs = sum(f.suffix == ".explog" for f in files)
    verdict(9, same and not diffs, f"{len(files)} files ({n_patches} patches, {n_logs} logs), "
                                   f"differing: {diffs or 'none'}")
