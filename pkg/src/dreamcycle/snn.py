"""Leaky integrate-and-fire network with STDP eligibility and neuromodulation.

State lives in flat numpy arrays so the per-tick work can run inside numba
kernels. The public operations (:func:`step`, :func:`apply_stdp`,
:func:`consolidate`, :func:`inject_modulator`) mutate the network in place and
return it; :func:`replay` runs many ticks in one kernel call and produces the
same spikes as the equivalent sequence of single steps.

Units: time in ms, potentials in mV, resistance in MOhm, current in nA.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from numba import njit

SNAPSHOT_VERSION = 1
MODULATORS = ("dopamine", "pain")


class SNNError(ValueError):
    pass


class UnknownPopulation(SNNError):
    pass


class UnknownModulator(SNNError):
    pass


class NonFiniteState(SNNError):
    pass


@dataclass(frozen=True)
class NeuronParams:
    tau_m: float = 20.0
    v_rest: float = -65.0
    v_reset: float = -70.0
    v_th: float = -50.0
    r_in: float = 10.0
    t_ref: float = 20.0

    def __post_init__(self):
        if not self.v_reset < self.v_th:
            raise SNNError("v_reset must be below v_th")
        if self.tau_m <= 0:
            raise SNNError("tau_m must be positive")
        if self.t_ref < 0:
            raise SNNError("t_ref must be non-negative")

    def isi(self, current: float, dt: float) -> float:
        """Closed-form inter-spike interval in ticks for a constant current."""
        drive = self.r_in * current
        lo = drive - (self.v_reset - self.v_rest)
        hi = drive - (self.v_th - self.v_rest)
        if hi <= 0:
            return math.inf
        return self.t_ref / dt + self.tau_m / dt * math.log(lo / hi)


@dataclass(frozen=True)
class STDPParams:
    a_plus: float = 0.01
    a_minus: float = 0.012
    tau_plus: float = 20.0
    tau_minus: float = 20.0
    tau_elig: float = 1000.0


@dataclass(frozen=True)
class PlasticityParams:
    eta: float = 0.1
    d_baseline: float = 0.1
    w_min: float = 0.0
    w_max: float = 1.0


@dataclass
class ModulatorState:
    dopamine: float = 0.0
    pain_mod: float = 0.0
    tau_d: float = 30.0
    tau_p: float = 30.0
    dopamine_rest: float = 0.0
    pain_rest: float = 0.0

    def decay(self, dt: float) -> None:
        self.dopamine = self.dopamine_rest + (self.dopamine - self.dopamine_rest) * math.exp(-dt / self.tau_d)
        self.pain_mod = self.pain_rest + (self.pain_mod - self.pain_rest) * math.exp(-dt / self.tau_p)


@dataclass(frozen=True)
class EmotionalState:
    valence: float
    arousal: float


@dataclass(frozen=True)
class AppraisalParams:
    epsilon: float = 0.01
    a_sat: float = 1.0


@dataclass(frozen=True)
class Synapse:
    pre: int
    post: int
    w: float
    delay: int
    elig: float


def emotional_appraisal(mods: ModulatorState, params: AppraisalParams = AppraisalParams()) -> EmotionalState:
    d, p = mods.dopamine, mods.pain_mod
    valence = min(1.0, max(-1.0, (d - p) / (d + p + params.epsilon)))
    arousal = min(1.0, max(0.0, (d + p) / params.a_sat))
    return EmotionalState(valence, arousal)


def appraise_levels(dopamine: np.ndarray, pain: np.ndarray,
                    params: AppraisalParams = AppraisalParams()) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`emotional_appraisal` over level arrays."""
    d = np.asarray(dopamine, dtype=float)
    p = np.asarray(pain, dtype=float)
    valence = np.clip((d - p) / (d + p + params.epsilon), -1.0, 1.0)
    arousal = np.clip((d + p) / params.a_sat, 0.0, 1.0)
    return valence, arousal


# -- kernels ----------------------------------------------------------------

@njit(cache=True)
def _lif_kernel(v, ref_until, tau_m, v_rest, v_reset, v_th, r_in, t_ref,
                i_ext, forced, buf, tick, dt, pre_ptr, syn_post, syn_w, syn_delay,
                gain, spiked):
    n_slots = buf.shape[0]
    slot = tick % n_slots
    ns = 0
    bad = -1
    for i in range(v.shape[0]):
        i_syn = buf[slot, i]
        buf[slot, i] = 0.0
        fire = forced[i]
        if not fire:
            if tick <= ref_until[i]:
                v[i] = v_reset[i]
            else:
                vi = v[i] + dt / tau_m[i] * (v_rest[i] - v[i] + r_in[i] * (i_ext[i] + i_syn))
                if not np.isfinite(vi):
                    bad = i
                v[i] = vi
                fire = vi >= v_th[i]
        if fire:
            v[i] = v_reset[i]
            ref_until[i] = tick + np.int64(t_ref[i] / dt + 0.5)
            spiked[ns] = i
            ns += 1
    for k in range(ns):
        i = spiked[k]
        for s in range(pre_ptr[i], pre_ptr[i + 1]):
            buf[(tick + syn_delay[s]) % n_slots, syn_post[s]] += syn_w[s] * gain
    return ns, bad


@njit(cache=True)
def _stdp_kernel(spiked, ns, x_pre, y_post, elig, syn_pre, syn_post, pre_ptr,
                 post_order, post_ptr, decay_plus, decay_minus, decay_elig,
                 a_plus, a_minus):
    for s in range(elig.shape[0]):
        elig[s] *= decay_elig
    for i in range(x_pre.shape[0]):
        x_pre[i] *= decay_plus
        y_post[i] *= decay_minus
    for k in range(ns):
        j = spiked[k]
        for q in range(post_ptr[j], post_ptr[j + 1]):
            s = post_order[q]
            elig[s] += a_plus * x_pre[syn_pre[s]]
    for k in range(ns):
        i = spiked[k]
        for s in range(pre_ptr[i], pre_ptr[i + 1]):
            elig[s] -= a_minus * y_post[syn_post[s]]
    for k in range(ns):
        i = spiked[k]
        x_pre[i] += 1.0
        y_post[i] += 1.0


@njit(cache=True)
def _replay_kernel(v, ref_until, tau_m, v_rest, v_reset, v_th, r_in, t_ref,
                   buf, tick0, dt, pre_ptr, syn_pre, syn_post, syn_w, syn_delay, gain,
                   x_pre, y_post, elig, post_order, post_ptr,
                   decay_plus, decay_minus, decay_elig, a_plus, a_minus, plastic,
                   mods, mod_rest, mod_decay,
                   pop_start, pop_stop, probs, forced_k, inj, uniforms,
                   counts, levels):
    n = v.shape[0]
    n_pops = pop_start.shape[0]
    forced = np.zeros(n, dtype=np.bool_)
    i_ext = np.zeros(n)
    spiked = np.empty(n, dtype=np.int64)
    pop_of = np.empty(n, dtype=np.int64)
    for p in range(n_pops):
        for i in range(pop_start[p], pop_stop[p]):
            pop_of[i] = p
    u = 0
    for t in range(probs.shape[0]):
        mods[0] += inj[t, 0]
        mods[1] += inj[t, 1]
        forced[:] = False
        for p in range(n_pops):
            pr = probs[t, p]
            if pr > 0.0:
                for i in range(pop_start[p], pop_stop[p]):
                    forced[i] = uniforms[u] < pr
                    u += 1
            k = forced_k[t, p]
            for i in range(pop_start[p], pop_start[p] + k):
                forced[i] = True
        ns, bad = _lif_kernel(v, ref_until, tau_m, v_rest, v_reset, v_th, r_in, t_ref,
                              i_ext, forced, buf, tick0 + t, dt, pre_ptr, syn_post,
                              syn_w, syn_delay, gain, spiked)
        if bad >= 0:
            return t, bad
        if plastic:
            _stdp_kernel(spiked, ns, x_pre, y_post, elig, syn_pre, syn_post, pre_ptr,
                         post_order, post_ptr, decay_plus, decay_minus, decay_elig,
                         a_plus, a_minus)
        for k in range(ns):
            counts[t, pop_of[spiked[k]]] += 1
        for m in range(2):
            mods[m] = mod_rest[m] + (mods[m] - mod_rest[m]) * mod_decay[m]
            levels[t, m] = mods[m]
    return probs.shape[0], -1


# -- network ----------------------------------------------------------------

class Network:
    """Spiking network state; single writer, mutated in place."""

    def __init__(self, populations: Sequence[tuple[str, int]],
                 neuron: NeuronParams | Mapping[str, NeuronParams] = NeuronParams(),
                 stdp: STDPParams = STDPParams(),
                 plasticity: PlasticityParams = PlasticityParams(),
                 modulators: Optional[ModulatorState] = None,
                 syn_gain: float = 1.0, seed: int = 0):
        names = [name for name, _ in populations]
        if len(set(names)) != len(names):
            raise SNNError("population names must be unique")
        self.populations: dict[str, tuple[int, int]] = {}
        start = 0
        for name, size in populations:
            if size < 1:
                raise SNNError(f"population {name!r} must have at least one neuron")
            self.populations[name] = (start, start + int(size))
            start += int(size)
        self.n = start
        self.neuron_params: dict[str, NeuronParams] = {}
        for name in names:
            self.neuron_params[name] = neuron[name] if isinstance(neuron, Mapping) else neuron
        self._fill_params()
        self.v = self.v_rest.copy()
        self.ref_until = np.full(self.n, -1, dtype=np.int64)
        self.x_pre = np.zeros(self.n)
        self.y_post = np.zeros(self.n)
        self.stdp = stdp
        self.plasticity = plasticity
        self.modulators = modulators if modulators is not None else ModulatorState()
        self.syn_gain = float(syn_gain)
        self.tick = 0
        self.rng = np.random.default_rng(seed)
        self.syn_pre = np.zeros(0, dtype=np.int64)
        self.syn_post = np.zeros(0, dtype=np.int64)
        self.syn_w = np.zeros(0)
        self.syn_delay = np.zeros(0, dtype=np.int64)
        self.syn_elig = np.zeros(0)
        self._index()
        self.buf = np.zeros((2, self.n))

    def _fill_params(self) -> None:
        arrays = {k: np.empty(self.n) for k in ("tau_m", "v_rest", "v_reset", "v_th", "r_in", "t_ref")}
        for name, (a, b) in self.populations.items():
            p = self.neuron_params[name]
            for k, arr in arrays.items():
                arr[a:b] = getattr(p, k)
        for k, arr in arrays.items():
            setattr(self, k, arr)

    def _index(self) -> None:
        order = np.lexsort((self.syn_post, self.syn_pre))
        for attr in ("syn_pre", "syn_post", "syn_w", "syn_delay", "syn_elig"):
            setattr(self, attr, np.ascontiguousarray(getattr(self, attr)[order]))
        self.pre_ptr = np.zeros(self.n + 1, dtype=np.int64)
        np.add.at(self.pre_ptr, self.syn_pre + 1, 1)
        self.pre_ptr = np.cumsum(self.pre_ptr)
        self.post_order = np.argsort(self.syn_post, kind="stable").astype(np.int64)
        self.post_ptr = np.zeros(self.n + 1, dtype=np.int64)
        np.add.at(self.post_ptr, self.syn_post + 1, 1)
        self.post_ptr = np.cumsum(self.post_ptr)

    # populations ----------------------------------------------------------
    def pop(self, name: str) -> tuple[int, int]:
        try:
            return self.populations[name]
        except KeyError:
            raise UnknownPopulation(name) from None

    def pop_size(self, name: str) -> int:
        a, b = self.pop(name)
        return b - a

    @property
    def pop_names(self) -> list[str]:
        return list(self.populations)

    def pop_index(self) -> np.ndarray:
        out = np.empty(self.n, dtype=np.int64)
        for k, (a, b) in enumerate(self.populations.values()):
            out[a:b] = k
        return out

    # synapses -------------------------------------------------------------
    def add_synapses(self, pre, post, w, delay) -> None:
        pre = np.asarray(pre, dtype=np.int64).ravel()
        post = np.asarray(post, dtype=np.int64).ravel()
        w = np.broadcast_to(np.asarray(w, dtype=float), pre.shape).copy()
        delay = np.broadcast_to(np.asarray(delay, dtype=np.int64), pre.shape).copy()
        if pre.shape != post.shape:
            raise SNNError("pre and post must have the same length")
        if pre.size and (pre.min() < 0 or post.min() < 0 or pre.max() >= self.n or post.max() >= self.n):
            raise SNNError("synapse index out of range")
        if delay.size and delay.min() < 1:
            raise SNNError("synaptic delay must be >= 1 tick")
        p = self.plasticity
        w = np.clip(w, p.w_min, p.w_max)
        self.syn_pre = np.concatenate([self.syn_pre, pre])
        self.syn_post = np.concatenate([self.syn_post, post])
        self.syn_w = np.concatenate([self.syn_w, w])
        self.syn_delay = np.concatenate([self.syn_delay, delay])
        self.syn_elig = np.concatenate([self.syn_elig, np.zeros(pre.size)])
        self._index()
        slots = int(self.syn_delay.max()) + 1 if self.syn_delay.size else 2
        if slots > self.buf.shape[0]:
            old = self.buf
            self.buf = np.zeros((slots, self.n))
            for k in range(old.shape[0]):
                self.buf[(self.tick + k) % slots] = old[(self.tick + k) % old.shape[0]]

    def connect(self, pre_pop: str, post_pop: str, p: float, w: float,
                delays: tuple[int, int] = (1, 1)) -> int:
        """Random sparse projection drawn from the network's generator."""
        a0, a1 = self.pop(pre_pop)
        b0, b1 = self.pop(post_pop)
        mask = self.rng.random((a1 - a0, b1 - b0)) < p
        pre, post = np.nonzero(mask)
        delay = self.rng.integers(delays[0], delays[1] + 1, size=pre.size)
        self.add_synapses(pre + a0, post + b0, w, delay)
        return int(pre.size)

    def synapses(self) -> list[Synapse]:
        return [Synapse(int(a), int(b), float(w), int(d), float(e)) for a, b, w, d, e in
                zip(self.syn_pre, self.syn_post, self.syn_w, self.syn_delay, self.syn_elig)]

    def state(self) -> dict:
        """Copy of the full dynamic state, for equality checks."""
        return {
            "v": self.v.copy(), "ref_until": self.ref_until.copy(), "w": self.syn_w.copy(),
            "elig": self.syn_elig.copy(), "x_pre": self.x_pre.copy(), "y_post": self.y_post.copy(),
            "buf": self.buf.copy(), "tick": self.tick,
            "modulators": asdict(self.modulators),
        }

    # persistence ----------------------------------------------------------
    def save(self, path) -> None:
        meta = {
            "version": SNAPSHOT_VERSION,
            "populations": [[k, b - a] for k, (a, b) in self.populations.items()],
            "neuron_params": {k: asdict(v) for k, v in self.neuron_params.items()},
            "stdp": asdict(self.stdp),
            "plasticity": asdict(self.plasticity),
            "modulators": asdict(self.modulators),
            "syn_gain": self.syn_gain,
            "tick": self.tick,
            "rng": self.rng.bit_generator.state,
        }
        arrays = dict(v=self.v, ref_until=self.ref_until, x_pre=self.x_pre, y_post=self.y_post,
                      syn_pre=self.syn_pre, syn_post=self.syn_post, syn_w=self.syn_w,
                      syn_delay=self.syn_delay, syn_elig=self.syn_elig, buf=self.buf)
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path) -> "Network":
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode("utf-8"))
            if meta.get("version") != SNAPSHOT_VERSION:
                raise SNNError(f"unsupported snapshot version {meta.get('version')!r}")
            arrays = {k: z[k].copy() for k in z.files if k != "meta"}
        neuron = {k: NeuronParams(**v) for k, v in meta["neuron_params"].items()}
        net = cls([tuple(p) for p in meta["populations"]], neuron, STDPParams(**meta["stdp"]),
                  PlasticityParams(**meta["plasticity"]), ModulatorState(**meta["modulators"]),
                  meta["syn_gain"])
        for k, arr in arrays.items():
            setattr(net, k, arr)
        net._index()
        net.buf = arrays["buf"]
        net.tick = int(meta["tick"])
        net.rng.bit_generator.state = meta["rng"]
        return net


# -- operations -------------------------------------------------------------

def _resolve_stim(net: Network, stim: Optional[Mapping]) -> tuple[np.ndarray, np.ndarray]:
    i_ext = np.zeros(net.n)
    forced = np.zeros(net.n, dtype=np.bool_)
    for name, value in (stim or {}).items():
        a, b = net.pop(name)
        if np.isscalar(value):
            i_ext[a:b] += float(value)
        else:
            idx = np.asarray(value)
            if idx.dtype == np.bool_:
                forced[a:b] |= idx
            else:
                idx = idx.astype(np.int64)
                if idx.size and (idx.min() < 0 or idx.max() >= b - a):
                    raise SNNError(f"forced index out of range for population {name!r}")
                forced[a + idx] = True
    return i_ext, forced


def step(net: Network, dt: float, stim: Optional[Mapping] = None,
         rng: Optional[np.random.Generator] = None) -> tuple[Network, np.ndarray]:
    """Advance one tick.

    ``stim`` maps population name to either an input current (scalar, nA,
    applied to every neuron) or a forced-spike set (local indices or a boolean
    mask). Returns the network and the indices of neurons that spiked.
    """
    if dt <= 0:
        raise SNNError("dt must be positive")
    i_ext, forced = _resolve_stim(net, stim)
    spiked = np.empty(net.n, dtype=np.int64)
    ns, bad = _lif_kernel(net.v, net.ref_until, net.tau_m, net.v_rest, net.v_reset, net.v_th,
                          net.r_in, net.t_ref, i_ext, forced, net.buf, net.tick, float(dt),
                          net.pre_ptr, net.syn_post, net.syn_w, net.syn_delay, net.syn_gain, spiked)
    if bad >= 0:
        raise NonFiniteState(f"membrane potential of neuron {bad} became non-finite at tick {net.tick}")
    net.modulators.decay(dt)
    net.tick += 1
    return net, spiked[:ns].copy()


def apply_stdp(net: Network, spikes, dt: float) -> Network:
    """Update eligibility traces from this tick's spikes; weights are untouched."""
    s = net.stdp
    spiked = np.asarray(spikes, dtype=np.int64)
    _stdp_kernel(spiked, spiked.size, net.x_pre, net.y_post, net.syn_elig, net.syn_pre,
                 net.syn_post, net.pre_ptr, net.post_order, net.post_ptr,
                 math.exp(-dt / s.tau_plus), math.exp(-dt / s.tau_minus),
                 math.exp(-dt / s.tau_elig), s.a_plus, s.a_minus)
    return net


def consolidate(net: Network) -> Network:
    """Dopamine-gated conversion of eligibility into weight change."""
    p = net.plasticity
    gate = net.modulators.dopamine - p.d_baseline
    net.syn_w = np.clip(net.syn_w + p.eta * gate * net.syn_elig, p.w_min, p.w_max)
    return net


def inject_modulator(net: Network, kind: str, amount: float) -> Network:
    if amount < 0 or not math.isfinite(amount):
        raise SNNError("modulator amount must be a finite non-negative number")
    if kind == "dopamine":
        net.modulators.dopamine += amount
    elif kind == "pain":
        net.modulators.pain_mod += amount
    else:
        raise UnknownModulator(kind)
    return net


@dataclass
class SpikeLog:
    """Per-tick spike counts by population plus modulator levels after each tick."""

    populations: list[str]
    counts: np.ndarray
    dopamine: np.ndarray
    pain: np.ndarray
    start_tick: int = 0

    @property
    def n_ticks(self) -> int:
        return self.counts.shape[0]

    @classmethod
    def from_events(cls, net: Network, n_ticks: int, ticks, neurons, dopamine=None, pain=None,
                    start_tick: int = 0) -> "SpikeLog":
        counts = np.zeros((n_ticks, len(net.populations)), dtype=np.int64)
        pops = net.pop_index()
        np.add.at(counts, (np.asarray(ticks, dtype=np.int64) - start_tick,
                           pops[np.asarray(neurons, dtype=np.int64)]), 1)
        zeros = np.zeros(n_ticks)
        return cls(net.pop_names, counts,
                   zeros if dopamine is None else np.asarray(dopamine, float),
                   zeros if pain is None else np.asarray(pain, float), start_tick)

    @classmethod
    def concat(cls, logs: Sequence["SpikeLog"]) -> "SpikeLog":
        if not logs:
            raise SNNError("nothing to concatenate")
        return cls(logs[0].populations,
                   np.concatenate([l.counts for l in logs]),
                   np.concatenate([l.dopamine for l in logs]),
                   np.concatenate([l.pain for l in logs]),
                   logs[0].start_tick)


def replay(net: Network, dt: float, probs: np.ndarray, forced_k: np.ndarray,
           injections: np.ndarray, rng: np.random.Generator, plastic: bool = True,
           chunk: int = 4096) -> SpikeLog:
    """Run ``len(probs)`` ticks of Poisson-driven stimulation in one kernel.

    ``probs[t, p]`` is the per-neuron spike probability for population ``p``,
    ``forced_k[t, p]`` forces the first k neurons of ``p`` to spike and
    ``injections[t] = (dopamine, pain)`` is added before tick ``t``. Uniforms
    are drawn per driven population in population order, exactly as a loop of
    :func:`step` calls fed by the same generator would draw them.
    """
    probs = np.ascontiguousarray(probs, dtype=float)
    forced_k = np.ascontiguousarray(forced_k, dtype=np.int64)
    injections = np.ascontiguousarray(injections, dtype=float)
    n_ticks, n_pops = probs.shape
    if n_pops != len(net.populations):
        raise SNNError("probability matrix does not match populations")
    starts = np.array([a for a, _ in net.populations.values()], dtype=np.int64)
    stops = np.array([b for _, b in net.populations.values()], dtype=np.int64)
    sizes = stops - starts
    counts = np.zeros((n_ticks, n_pops), dtype=np.int64)
    levels = np.zeros((n_ticks, 2))
    mods = np.array([net.modulators.dopamine, net.modulators.pain_mod])
    rest = np.array([net.modulators.dopamine_rest, net.modulators.pain_rest])
    decay = np.array([math.exp(-dt / net.modulators.tau_d), math.exp(-dt / net.modulators.tau_p)])
    s = net.stdp
    start_tick = net.tick
    for c0 in range(0, n_ticks, chunk):
        c1 = min(n_ticks, c0 + chunk)
        n_uniform = int(((probs[c0:c1] > 0) @ sizes).sum())
        uniforms = rng.random(n_uniform)
        done, bad = _replay_kernel(
            net.v, net.ref_until, net.tau_m, net.v_rest, net.v_reset, net.v_th, net.r_in, net.t_ref,
            net.buf, net.tick, float(dt), net.pre_ptr, net.syn_pre, net.syn_post, net.syn_w,
            net.syn_delay, net.syn_gain, net.x_pre, net.y_post, net.syn_elig, net.post_order,
            net.post_ptr, math.exp(-dt / s.tau_plus), math.exp(-dt / s.tau_minus),
            math.exp(-dt / s.tau_elig), s.a_plus, s.a_minus, plastic, mods, rest, decay,
            starts, stops, probs[c0:c1], forced_k[c0:c1], injections[c0:c1], uniforms,
            counts[c0:c1], levels[c0:c1])
        net.tick += done
        net.modulators.dopamine, net.modulators.pain_mod = float(mods[0]), float(mods[1])
        if bad >= 0:
            raise NonFiniteState(f"membrane potential of neuron {bad} became non-finite at tick {net.tick}")
    return SpikeLog(net.pop_names, counts, levels[:, 0].copy(), levels[:, 1].copy(), start_tick)


def simulate(net: Network, dt: float, n_ticks: int,
             currents: Optional[Mapping[str, float]] = None) -> SpikeLog:
    """Deterministic run under constant currents (no Poisson input, no plasticity)."""
    i_ext, _ = _resolve_stim(net, currents)
    n_pops = len(net.populations)
    spikes = _simulate_kernel(net.v, net.ref_until, net.tau_m, net.v_rest, net.v_reset, net.v_th,
                              net.r_in, net.t_ref, i_ext, net.buf, net.tick, float(dt),
                              net.pre_ptr, net.syn_post, net.syn_w, net.syn_delay, net.syn_gain,
                              n_ticks)
    ticks, neurons = spikes
    log = SpikeLog.from_events(net, n_ticks, ticks, neurons, start_tick=net.tick)
    mods = net.modulators
    d = np.empty(n_ticks)
    p = np.empty(n_ticks)
    for t in range(n_ticks):
        mods.decay(dt)
        d[t], p[t] = mods.dopamine, mods.pain_mod
    log.dopamine, log.pain = d, p
    log.spike_ticks, log.spike_neurons = ticks, neurons
    net.tick += n_ticks
    if neurons.size and not np.all(np.isfinite(net.v)):
        raise NonFiniteState("membrane potential became non-finite")
    return log


@njit(cache=True)
def _simulate_kernel(v, ref_until, tau_m, v_rest, v_reset, v_th, r_in, t_ref, i_ext, buf,
                     tick0, dt, pre_ptr, syn_post, syn_w, syn_delay, gain, n_ticks):
    n = v.shape[0]
    forced = np.zeros(n, dtype=np.bool_)
    spiked = np.empty(n, dtype=np.int64)
    cap = 1024
    ticks = np.empty(cap, dtype=np.int64)
    neurons = np.empty(cap, dtype=np.int64)
    m = 0
    for t in range(n_ticks):
        ns, bad = _lif_kernel(v, ref_until, tau_m, v_rest, v_reset, v_th, r_in, t_ref, i_ext,
                              forced, buf, tick0 + t, dt, pre_ptr, syn_post, syn_w, syn_delay,
                              gain, spiked)
        for k in range(ns):
            if m == cap:
                cap *= 2
                t2 = np.empty(cap, dtype=np.int64)
                n2 = np.empty(cap, dtype=np.int64)
                t2[:m] = ticks[:m]
                n2[:m] = neurons[:m]
                ticks, neurons = t2, n2
            ticks[m] = tick0 + t
            neurons[m] = spiked[k]
            m += 1
        if bad >= 0:
            break
    return ticks[:m], neurons[:m]
