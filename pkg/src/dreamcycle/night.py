"""Night phase: build the shared brain, replay logs into it, extract patches."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .experience import ExperienceLog, validate_log
from .reverse import (ActivationTrace, CandidateChain, Column, ColumnMap, ExtractedRule,
                      convolve_chains, diff_rules, extract_activations, mine_chains,
                      summarize_appraisal)
from .rules import Literal, RulePatch, RuleSet
from .snn import (AppraisalParams, ModulatorState, Network, NeuronParams, PlasticityParams,
                  STDPParams, SpikeLog, consolidate, replay)
from .translation import (PAIN_POP, ChannelSpec, TranslationParams, act_pop, literal_threshold,
                          out_pop, plan_stimulation, schedule_replay)
from .world import ACTIONS


@dataclass(frozen=True)
class BrainParams:
    dt: float = 10.0
    pop_size: int = 32
    p_conn: float = 0.05
    w_init: float = 0.2
    syn_gain: float = 0.5
    neuron: NeuronParams = NeuronParams()
    stdp: STDPParams = STDPParams()
    plasticity: PlasticityParams = PlasticityParams()
    modulators: ModulatorState = field(default_factory=ModulatorState)
    appraisal: AppraisalParams = AppraisalParams()


@dataclass(frozen=True)
class ReverseParams:
    bin_width: int = 5
    activation_min: Optional[int] = None
    delta_max: int = 3
    support_min: int = 3
    co_min: float = 0.9
    gate: float = 0.5
    conf_eps: float = 0.05
    lambda_v: float = 0.25

    def activation_for(self, pop_size: int) -> int:
        if self.activation_min is not None:
            return int(self.activation_min)
        return math.ceil(0.25 * pop_size)


@dataclass
class Brain:
    """A network together with the layout needed to read it."""

    net: Network
    specs: tuple[ChannelSpec, ...]
    thresholds: dict[str, float]
    cmap: ColumnMap
    params: BrainParams
    reverse: ReverseParams
    translation: TranslationParams
    actions: tuple[str, ...] = ACTIONS


def column_thresholds(specs: Sequence[ChannelSpec], pop_size: int, bin_width: int,
                      activation_min: int, dt: float) -> dict[str, float]:
    """Per-channel literal threshold: the value whose encoded rate just reaches
    activation in expectation."""
    target = activation_min / (pop_size * bin_width * dt / 1000.0)
    out = {}
    for s in specs:
        theta = literal_threshold(s, target)
        if theta is not None:
            out[s.channel_id] = theta
    return out


def build_column_map(specs: Sequence[ChannelSpec], thresholds: dict[str, float],
                     actions: Sequence[str] = ACTIONS) -> ColumnMap:
    cols = []
    for s in specs:
        if s.channel_id in thresholds:
            cols.append(Column(s.population, "condition", Literal(s.channel_id, "ge", thresholds[s.channel_id])))
    for a in actions:
        cols.append(Column(act_pop(a), "action", a))
    for s in specs:
        if s.channel_id in thresholds:
            theta = thresholds[s.channel_id]
            cols.append(Column(out_pop(s.channel_id, "ge"), "outcome", Literal(s.channel_id, "ge", theta)))
            cols.append(Column(out_pop(s.channel_id, "lt"), "outcome", Literal(s.channel_id, "lt", theta)))
    return ColumnMap(tuple(cols))


def build_brain(specs: Sequence[ChannelSpec], params: BrainParams = BrainParams(),
                reverse: ReverseParams = ReverseParams(),
                translation: TranslationParams = TranslationParams(),
                seed: int = 0, actions: Sequence[str] = ACTIONS) -> Brain:
    """Sensory, pain, action and outcome populations; sparse plastic
    projections from sensory and action populations onto outcome populations."""
    n = params.pop_size
    act_min = reverse.activation_for(n)
    thresholds = column_thresholds(specs, n, reverse.bin_width, act_min, params.dt)
    pops = [(s.population, n) for s in specs] + [(PAIN_POP, n)]
    pops += [(act_pop(a), n) for a in actions]
    outs = []
    for s in specs:
        if s.channel_id in thresholds:
            outs += [out_pop(s.channel_id, "ge"), out_pop(s.channel_id, "lt")]
    pops += [(o, n) for o in outs]
    mods = ModulatorState(**asdict(params.modulators))
    net = Network(pops, params.neuron, params.stdp, params.plasticity, mods, params.syn_gain, seed)
    max_delay = max(1, reverse.bin_width)
    for src in [s.population for s in specs] + [act_pop(a) for a in actions]:
        for dst in outs:
            net.connect(src, dst, params.p_conn, params.w_init, (1, max_delay))
    cmap = build_column_map(specs, thresholds, actions)
    return Brain(net, tuple(specs), thresholds, cmap, params, reverse, translation, tuple(actions))


def replay_log(brain: Brain, log: ExperienceLog, plastic: bool = True) -> SpikeLog:
    """Replay one log through the brain and consolidate at its end."""
    plan = plan_stimulation(log, brain.specs, brain.translation, brain.thresholds, brain.actions)
    sched = schedule_replay(plan, brain.net, brain.reverse.bin_width, brain.params.dt)
    spikes = replay(brain.net, brain.params.dt, sched.probs, sched.forced_k, sched.injections,
                    brain.net.rng, plastic=plastic)
    if plastic:
        consolidate(brain.net)
    return spikes


def trace_log(brain: Brain, log: ExperienceLog, plastic: bool = True) -> ActivationTrace:
    spikes = replay_log(brain, log, plastic)
    r = brain.reverse
    return extract_activations(spikes, brain.cmap, r.bin_width,
                               r.activation_for(brain.params.pop_size), brain.params.appraisal)


@dataclass
class RobotNight:
    trace: Optional[ActivationTrace]
    chains: list[CandidateChain]
    extracted: list[ExtractedRule]
    patch: RulePatch


@dataclass
class NightResult:
    run_id: str
    robots: dict[str, RobotNight]
    failed: list[dict]
    logs_replayed: int

    @property
    def patches(self) -> dict[str, RulePatch]:
        return {k: v.patch for k, v in self.robots.items()}

    def stats(self) -> dict:
        return {
            "logs_replayed": self.logs_replayed,
            "failed": list(self.failed),
            "robots": {k: {"adds": len(v.patch.adds), "modifies": len(v.patch.modifies),
                           "removes": len(v.patch.removes), "chains": len(v.chains)}
                       for k, v in sorted(self.robots.items())},
        }


def extract_patch(brain: Brain, trace: ActivationTrace, shadow: RuleSet,
                  provenance: dict) -> tuple[list[CandidateChain], list[ExtractedRule], RulePatch]:
    r = brain.reverse
    chains = mine_chains(trace, r.support_min, r.delta_max)
    extracted = convolve_chains(chains, r.delta_max, r.bin_width, r.co_min, r.lambda_v)
    patch = diff_rules(shadow, extracted, r.gate, r.conf_eps, provenance)
    return chains, extracted, patch


def run_night(brain: Brain, queue: Sequence[tuple[str, ExperienceLog]],
              shadows: dict[str, RuleSet], run_id: str) -> NightResult:
    """Replay every queued log in order, then mine one patch per robot.

    A log that fails validation or replay is reported and skipped. Modulators
    start the run at rest: a day has passed since the previous night.
    """
    mods = brain.net.modulators
    mods.dopamine, mods.pain_mod = mods.dopamine_rest, mods.pain_rest
    traces: dict[str, list[ActivationTrace]] = {}
    failed = []
    done = 0
    for robot_id, log in queue:
        traces.setdefault(robot_id, [])
        try:
            problems = validate_log(log)
            if problems:
                raise ValueError(f"invalid log: {problems[0]}")
            traces[robot_id].append(trace_log(brain, log))
            done += 1
        except Exception as exc:  # one bad log must not sink the others
            failed.append({"robot_id": robot_id, "episode_id": log.episode_id, "error": str(exc)})
    robots = {}
    for robot_id in sorted(traces):
        shadow = shadows.get(robot_id) or RuleSet((), "stay")
        ts = traces[robot_id]
        if not ts:
            robots[robot_id] = RobotNight(None, [], [], RulePatch(provenance={
                "run_id": run_id, "robot_id": robot_id, "appraisal": summarize_appraisal_empty()}))
            continue
        trace = ActivationTrace.concat(ts, gap=brain.reverse.delta_max)
        prov = {"run_id": run_id, "robot_id": robot_id, "appraisal": summarize_appraisal(trace)}
        chains, extracted, patch = extract_patch(brain, trace, shadow, prov)
        robots[robot_id] = RobotNight(trace, chains, extracted, patch)
    return NightResult(run_id, robots, failed, done)


def summarize_appraisal_empty() -> dict:
    return {"mean_valence": 0.0, "mean_arousal": 0.0}
