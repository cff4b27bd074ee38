"""Direct translation: recorded sensor streams to network stimulation.

Each channel is rate coded through a logistic curve. Values above a channel's
pain threshold force a burst in the pain population and raise the pain
modulator; ticks spent charging release dopamine.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .experience import EventRecord, ExperienceLog, SensorFrame
from .snn import Network, inject_modulator

PAIN_POP = "pain"


class TranslationError(ValueError):
    pass


class OutOfRange(TranslationError):
    pass


class MissingSpec(TranslationError):
    def __init__(self, channel_id: str):
        super().__init__(f"no channel spec for {channel_id!r}")
        self.channel_id = channel_id


def sens_pop(channel: str) -> str:
    return f"sens:{channel}"


def act_pop(action: str) -> str:
    return f"act:{action}"


def out_pop(channel: str, pred: str) -> str:
    return f"out:{channel}:{pred}"


@dataclass(frozen=True)
class ChannelSpec:
    channel_id: str
    population: str = ""
    k: float = 10.0
    x0: float = 0.5
    r_min: float = 2.0
    r_max: float = 120.0
    pain_threshold: float = 1.0

    def __post_init__(self):
        if not self.population:
            object.__setattr__(self, "population", sens_pop(self.channel_id))
        if not self.r_min < self.r_max:
            raise TranslationError(f"{self.channel_id}: need r_min < r_max")
        if self.r_min < 0:
            raise TranslationError(f"{self.channel_id}: r_min must be >= 0")
        if not 0.0 < self.pain_threshold <= 1.0:
            raise TranslationError(f"{self.channel_id}: pain_threshold must be in (0, 1]")
        if self.k <= 0:
            raise TranslationError(f"{self.channel_id}: slope k must be positive")

    @classmethod
    def from_json(cls, obj: Mapping) -> "ChannelSpec":
        return cls(channel_id=str(obj["channel_id"]), population=str(obj.get("population", "")),
                   k=float(obj.get("k", 10.0)), x0=float(obj.get("x0", 0.5)),
                   r_min=float(obj.get("r_min", 2.0)), r_max=float(obj.get("r_max", 120.0)),
                   pain_threshold=float(obj.get("pain_threshold", 1.0)))

    def to_json(self) -> dict:
        return {"channel_id": self.channel_id, "population": self.population, "k": self.k,
                "x0": self.x0, "r_min": self.r_min, "r_max": self.r_max,
                "pain_threshold": self.pain_threshold}


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def encode_value(spec: ChannelSpec, x: float) -> float:
    """Firing rate (Hz) for a channel value in [0, 1]."""
    if not 0.0 <= x <= 1.0:
        raise OutOfRange(f"{spec.channel_id}: value {x!r} outside [0, 1]")
    return spec.r_min + (spec.r_max - spec.r_min) * _sigmoid(spec.k * (x - spec.x0))


def literal_threshold(spec: ChannelSpec, target_rate: float, decimals: int = 2) -> Optional[float]:
    """Channel value whose encoded rate equals ``target_rate``.

    Returns None when the rate lies outside the encoder's range, in which case
    the column can never (or always) reach activation.
    """
    if not spec.r_min < target_rate < spec.r_max:
        return None
    q = (target_rate - spec.r_min) / (spec.r_max - spec.r_min)
    theta = spec.x0 + math.log(q / (1.0 - q)) / spec.k
    if not 0.0 < theta < 1.0:
        return None
    return round(theta, decimals)


def encode_complement(spec: ChannelSpec, theta: float, x: float) -> float:
    """Rate for the ``x < theta`` outcome column: the mirror image of the
    channel curve about ``theta``, decreasing in ``x``."""
    if not 0.0 <= x <= 1.0:
        raise OutOfRange(f"{spec.channel_id}: value {x!r} outside [0, 1]")
    return spec.r_min + (spec.r_max - spec.r_min) * _sigmoid(-spec.k * (x - (2.0 * theta - spec.x0)))


@dataclass(frozen=True)
class PainEvent:
    tick: int
    channel_id: str
    value: float


def _spec_map(specs: Sequence[ChannelSpec]) -> dict[str, ChannelSpec]:
    return {s.channel_id: s for s in specs}


def detect_pain(frame: SensorFrame, specs: Sequence[ChannelSpec]) -> Optional[PainEvent]:
    by_id = _spec_map(specs)
    for ch, x in frame.channels:
        s = by_id.get(ch)
        if s is not None and x > s.pain_threshold:
            return PainEvent(frame.tick, ch, x)
    return None


@dataclass(frozen=True)
class TranslationParams:
    pain_fraction: float = 0.8
    pain_inject: float = 0.3
    d_charge: float = 0.05
    action_rate: float = 100.0

    def __post_init__(self):
        if not 0.0 <= self.pain_fraction <= 1.0:
            raise TranslationError("pain_fraction must be in [0, 1]")
        if self.pain_inject < 0 or self.d_charge < 0 or self.action_rate < 0:
            raise TranslationError("injection amounts and rates must be non-negative")


@dataclass
class StimulationPlan:
    """Per log tick: population rates (Hz), pain bursts and modulator pulses."""

    ticks: tuple[int, ...]
    populations: tuple[str, ...]
    rates: np.ndarray
    dopamine_injections: list[tuple[int, float]] = field(default_factory=list)
    pain_injections: list[tuple[int, float]] = field(default_factory=list)
    pain_excitations: list[tuple[int, str, float]] = field(default_factory=list)

    def row(self, tick: int) -> int:
        try:
            return self._rows[tick]
        except AttributeError:
            self._rows = {t: i for i, t in enumerate(self.ticks)}
            return self._rows[tick]
        except KeyError:
            raise TranslationError(f"tick {tick} not in plan") from None

    def rate(self, tick: int, population: str) -> float:
        return float(self.rates[self.row(tick), self.populations.index(population)])

    @property
    def total_dopamine(self) -> float:
        return sum(a for _, a in self.dopamine_injections)

    def to_json(self) -> dict:
        return {
            "ticks": list(self.ticks),
            "populations": list(self.populations),
            "rates": np.round(self.rates, 6).tolist(),
            "dopamine_injections": [list(x) for x in self.dopamine_injections],
            "pain_injections": [list(x) for x in self.pain_injections],
            "pain_excitations": [list(x) for x in self.pain_excitations],
        }


def charging_ticks(log: ExperienceLog) -> list[int]:
    """Frame ticks inside ``[charge_start, charge_stop)`` intervals."""
    ticks = [f.tick for f in log.frames]
    marks: dict[int, str] = {}
    for ev in log.events:
        if ev.kind in ("charge_start", "charge_stop"):
            marks[ev.tick] = ev.kind
    out = []
    charging = False
    for t in ticks:
        kind = marks.get(t)
        if kind == "charge_start":
            charging = True
        elif kind == "charge_stop":
            charging = False
        if charging:
            out.append(t)
    return out


def plan_stimulation(log: ExperienceLog, specs: Sequence[ChannelSpec],
                     params: TranslationParams = TranslationParams(),
                     outcome_thresholds: Optional[Mapping[str, float]] = None,
                     actions: Sequence[str] = ()) -> StimulationPlan:
    """Translate a log into a stimulation plan.

    Sensory populations always appear. When ``outcome_thresholds`` is given the
    plan also drives the ``out:<ch>:ge`` / ``out:<ch>:lt`` outcome columns, and
    when ``actions`` is given the taken action's population is driven at
    ``action_rate``.
    """
    by_id = _spec_map(specs)
    for ch in log.channels:
        if ch not in by_id:
            raise MissingSpec(ch)
    chans = list(log.channels)
    pops = [by_id[c].population for c in chans]
    out_cols: list[tuple[str, str, float]] = []
    for c in chans:
        theta = (outcome_thresholds or {}).get(c)
        if theta is not None:
            out_cols.append((c, "ge", theta))
            out_cols.append((c, "lt", theta))
    pops += [out_pop(c, p) for c, p, _ in out_cols]
    pops += [act_pop(a) for a in actions]
    col = {p: i for i, p in enumerate(pops)}

    n = len(log.frames)
    rates = np.zeros((n, len(pops)))
    pain_exc: list[tuple[int, str, float]] = []
    pain_inj: list[tuple[int, float]] = []
    acts = dict(log.actions)
    for i, fr in enumerate(log.frames):
        vals = dict(fr.channels)
        for c in chans:
            rates[i, col[by_id[c].population]] = encode_value(by_id[c], vals[c])
        for c, pred, theta in out_cols:
            s = by_id[c]
            r = encode_value(s, vals[c]) if pred == "ge" else encode_complement(s, theta, vals[c])
            rates[i, col[out_pop(c, pred)]] = r
        a = acts.get(fr.tick)
        if actions and a in actions:
            rates[i, col[act_pop(a)]] = params.action_rate
        if detect_pain(fr, specs) is not None:
            pain_exc.append((fr.tick, PAIN_POP, params.pain_fraction))
            pain_inj.append((fr.tick, params.pain_inject))
    dopa = [(t, params.d_charge) for t in charging_ticks(log)]
    return StimulationPlan(tuple(f.tick for f in log.frames), tuple(pops), rates,
                           dopa, pain_inj, pain_exc)


def spike_probability(rate: float, dt: float) -> float:
    """Per-neuron, per-tick Poisson spike probability (``dt`` in ms)."""
    return min(1.0, max(0.0, rate * dt / 1000.0))


def forced_count(fraction: float, size: int) -> int:
    # tolerance guards against 0.8*32 = 25.600000000000001 style rounding
    return min(size, math.ceil(fraction * size - 1e-9))


def apply_plan_tick(net: Network, plan: StimulationPlan, tick: int,
                    rng: np.random.Generator, dt: float = 10.0) -> dict:
    """Stimulation for one plan tick; modulator pulses are applied to ``net``.

    Returns the ``stim`` mapping for :func:`dreamcycle.snn.step`.
    """
    i = plan.row(tick)
    probs = {p: spike_probability(r, dt) for p, r in zip(plan.populations, plan.rates[i])}
    forced = {p: int(k) for p, k in _pain_at(plan, tick, net).items()}
    for t, a in plan.dopamine_injections:
        if t == tick:
            inject_modulator(net, "dopamine", a)
    for t, a in plan.pain_injections:
        if t == tick:
            inject_modulator(net, "pain", a)
    return stim_from_probs(net, probs, forced, rng)


def _pain_at(plan: StimulationPlan, tick: int, net: Network) -> dict[str, int]:
    out: dict[str, int] = {}
    for t, pop, frac in plan.pain_excitations:
        if t == tick:
            out[pop] = max(out.get(pop, 0), forced_count(frac, net.pop_size(pop)))
    return out


def stim_from_probs(net: Network, probs: Mapping[str, float], forced: Mapping[str, int],
                    rng: np.random.Generator) -> dict:
    """Draw Poisson spikes per population in network order, then add forced heads.

    Draw order matches :func:`dreamcycle.snn.replay`, so the two paths agree.
    """
    stim = {}
    for name in net.pop_names:
        pr = probs.get(name, 0.0)
        k = forced.get(name, 0)
        if pr <= 0.0 and k == 0:
            continue
        size = net.pop_size(name)
        mask = rng.random(size) < pr if pr > 0.0 else np.zeros(size, dtype=bool)
        mask[:k] = True
        stim[name] = mask
    return stim


# -- phased replay schedule -------------------------------------------------

PHASES = ("outcome", "condition", "action")


@dataclass
class ReplaySchedule:
    """Network-tick level drive for :func:`dreamcycle.snn.replay`."""

    probs: np.ndarray
    forced_k: np.ndarray
    injections: np.ndarray
    bin_width: int

    @property
    def n_ticks(self) -> int:
        return self.probs.shape[0]


def schedule_replay(plan: StimulationPlan, net: Network, bin_width: int = 5,
                    dt: float = 10.0) -> ReplaySchedule:
    """Lay each plan tick out as three bins: outcome, condition, action.

    The outcome bin of tick ``t`` shows the sensory state reached after the
    action of tick ``t - 1``, so a condition, action and its consequence occupy
    consecutive bins. Pain bursts and pain-modulator pulses land on the first
    tick of the outcome bin; dopamine earned during tick ``t - 1`` is released
    there as well. Dopamine of the final tick has no outcome bin and is dropped.
    """
    if bin_width < 1:
        raise TranslationError("bin_width must be >= 1")
    names = net.pop_names
    index = {p: i for i, p in enumerate(names)}
    for p in plan.populations:
        if p not in index:
            from .snn import UnknownPopulation
            raise UnknownPopulation(p)
    n = len(plan.ticks)
    per = 3 * bin_width
    probs = np.zeros((n * per, len(names)))
    forced = np.zeros((n * per, len(names)), dtype=np.int64)
    inj = np.zeros((n * per, 2))
    phase_of = {}
    for p in plan.populations:
        phase_of[p] = 0 if p.startswith("out:") else 2 if p.startswith("act:") else 1
    p_rate = np.vectorize(lambda r: spike_probability(r, dt))(plan.rates) if plan.rates.size else plan.rates
    for j, p in enumerate(plan.populations):
        ph = phase_of[p]
        col = index[p]
        for k in range(bin_width):
            probs[ph * bin_width + k::per, col] = p_rate[:, j]
    row = {t: i for i, t in enumerate(plan.ticks)}
    for t, pop, frac in plan.pain_excitations:
        forced[row[t] * per, index[pop]] = forced_count(frac, net.pop_size(pop))
    for t, a in plan.pain_injections:
        inj[row[t] * per, 1] += a
    for t, a in plan.dopamine_injections:
        i = row[t] + 1
        if i < n:
            inj[i * per, 0] += a
    return ReplaySchedule(probs, forced, inj, bin_width)
