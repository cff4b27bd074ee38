"""Reverse translation: network activity back into IF-DO-THEN rules.

Pass 1 mines (condition, action, outcome) chains from a binarised activation
trace, pass 2 merges chains into rules by condition co-occurrence and pools
their counts, and pass 3 diffs the result against a robot's rule set.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .rules import ConditionExpr, Literal, Rule, RulePatch, RuleSet, with_confidence
from .snn import AppraisalParams, SpikeLog, UnknownPopulation, appraise_levels

ROLES = ("condition", "action", "outcome")


@dataclass(frozen=True)
class Column:
    population: str
    role: str
    label: object  # Literal for condition/outcome, action name for action

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"bad column role {self.role!r}")

    def key(self) -> tuple:
        return (self.role, self.label)


@dataclass(frozen=True)
class ColumnMap:
    columns: tuple[Column, ...]

    def __post_init__(self):
        keys = [c.key() for c in self.columns]
        if len(set(keys)) != len(keys):
            raise ValueError("column labels must be unique")
        pops = [c.population for c in self.columns]
        if len(set(pops)) != len(pops):
            raise ValueError("a population may carry only one label")

    def indices(self, role: str) -> list[int]:
        return [i for i, c in enumerate(self.columns) if c.role == role]

    def check(self, populations: Sequence[str]) -> None:
        have = set(populations)
        for c in self.columns:
            if c.population not in have:
                raise UnknownPopulation(c.population)


@dataclass
class ActivationTrace:
    bin_width: int
    columns: tuple[Column, ...]
    matrix: np.ndarray  # bins x columns, uint8
    valence: np.ndarray
    arousal: np.ndarray

    @property
    def n_bins(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def concat(cls, traces: Sequence["ActivationTrace"], gap: int = 0) -> "ActivationTrace":
        """Join traces with ``gap`` silent bins so no chain spans a boundary."""
        if not traces:
            raise ValueError("nothing to concatenate")
        cols = traces[0].columns
        pad_m = np.zeros((gap, len(cols)), dtype=np.uint8)
        pad_v = np.zeros(gap)
        mats, vals, aro = [], [], []
        for i, t in enumerate(traces):
            if t.columns != cols or t.bin_width != traces[0].bin_width:
                raise ValueError("traces differ in layout")
            if i:
                mats.append(pad_m)
                vals.append(pad_v)
                aro.append(pad_v)
            mats.append(t.matrix)
            vals.append(t.valence)
            aro.append(t.arousal)
        return cls(traces[0].bin_width, cols, np.concatenate(mats), np.concatenate(vals),
                   np.concatenate(aro))

    def to_json(self) -> dict:
        return {
            "bin_width": self.bin_width,
            "columns": [[c.population, c.role] for c in self.columns],
            "active": [np.flatnonzero(self.matrix[:, j]).tolist() for j in range(len(self.columns))],
            "valence": np.round(self.valence, 6).tolist(),
            "arousal": np.round(self.arousal, 6).tolist(),
        }


def extract_activations(spikes: SpikeLog, cmap: ColumnMap, bin_width: int, activation_min: int,
                        appraisal: AppraisalParams = AppraisalParams()) -> ActivationTrace:
    if bin_width < 1:
        raise ValueError("bin_width must be >= 1")
    if activation_min < 1:
        raise ValueError("activation_min must be >= 1")
    cmap.check(spikes.populations)
    idx = [spikes.populations.index(c.population) for c in cmap.columns]
    n_ticks = spikes.n_ticks
    n_bins = -(-n_ticks // bin_width)
    counts = spikes.counts[:, idx] if idx else np.zeros((n_ticks, 0), dtype=np.int64)
    pad = n_bins * bin_width - n_ticks
    if pad:
        counts = np.vstack([counts, np.zeros((pad, counts.shape[1]), dtype=counts.dtype)])
    binned = counts.reshape(n_bins, bin_width, -1).sum(axis=1)
    ends = np.minimum(np.arange(1, n_bins + 1) * bin_width, n_ticks) - 1
    if n_ticks:
        valence, arousal = appraise_levels(spikes.dopamine[ends], spikes.pain[ends], appraisal)
    else:
        valence = arousal = np.zeros(0)
    return ActivationTrace(bin_width, cmap.columns, (binned >= activation_min).astype(np.uint8),
                           valence, arousal)


# -- pass 1 -----------------------------------------------------------------

@dataclass
class CandidateChain:
    condition: Literal
    action: str
    outcome: Literal
    support: int
    total: int
    mean_valence: float
    cooccurrence: dict = field(default_factory=dict)
    outcome_rate: float = 1.0  # fraction of bins with the outcome column active

    @property
    def labels(self) -> tuple:
        return (self.condition, self.action, self.outcome)

    @property
    def p(self) -> float:
        return self.support / self.total if self.total else 0.0

    def to_json(self) -> dict:
        return {"if": self.condition.to_json(), "do": self.action, "then": self.outcome.to_json(),
                "support": self.support, "total": self.total,
                "mean_valence": round(self.mean_valence, 6)}


def _any_ahead(x: np.ndarray, delta: int) -> np.ndarray:
    """out[b] = any(x[b+1 .. b+delta])."""
    c = np.concatenate([[0], np.cumsum(x, dtype=np.int64)])
    n = x.shape[0]
    b = np.arange(n)
    hi = np.minimum(b + delta, n - 1)
    return (c[hi + 1] - c[np.minimum(b + 1, n)]) > 0


def _any_behind(x: np.ndarray, delta: int) -> np.ndarray:
    """out[b] = any(x[b-delta .. b-1])."""
    c = np.concatenate([[0], np.cumsum(x, dtype=np.int64)])
    b = np.arange(x.shape[0])
    lo = np.maximum(b - delta, 0)
    return (c[b] - c[lo]) > 0


def mine_chains(trace: ActivationTrace, support_min: int = 3, delta_max: int = 3) -> list[CandidateChain]:
    if support_min < 1 or delta_max < 1:
        raise ValueError("support_min and delta_max must be >= 1")
    m = trace.matrix.astype(bool)
    cols = trace.columns
    conds = [i for i, c in enumerate(cols) if c.role == "condition"]
    acts = [i for i, c in enumerate(cols) if c.role == "action"]
    outs = [i for i, c in enumerate(cols) if c.role == "outcome"]
    if m.shape[0] == 0:
        return []
    ahead_out = {o: _any_ahead(m[:, o], delta_max) for o in outs}
    ahead_act = {a: _any_ahead(m[:, a], delta_max) for a in acts}
    behind_cond = {c: _any_behind(m[:, c], delta_max) for c in conds}
    cond_block = m[:, conds]
    rate = m.mean(axis=0)
    chains = []
    for c in conds:
        mc = m[:, c]
        if not mc.any():
            continue
        for a in acts:
            total = int(np.count_nonzero(mc & ahead_act[a]))
            if total < support_min:
                continue
            a_after_c = m[:, a] & behind_cond[c]
            for o in outs:
                ao = m[:, a] & ahead_out[o]
                supp_mask = mc & _any_ahead(ao, delta_max)
                support = int(np.count_nonzero(supp_mask))
                if support < support_min:
                    continue
                contrib = m[:, o] & _any_behind(a_after_c, delta_max)
                mv = float(trace.valence[contrib].mean()) if contrib.any() else 0.0
                co_counts = cond_block[supp_mask].sum(axis=0)
                cooc = {cols[k].label: int(v) for k, v in zip(conds, co_counts) if k != c}
                chains.append(CandidateChain(cols[c].label, cols[a].label, cols[o].label,
                                             support, total, mv, cooc, rate[o]))
    return chains


# -- pass 2 -----------------------------------------------------------------

@dataclass
class ExtractedRule:
    rule: Rule
    chains: tuple[CandidateChain, ...]
    support: int
    total: int
    mean_valence: float
    outcome_rate: float = 1.0

    @property
    def p(self) -> float:
        return self.support / self.total if self.total else 0.0

    @property
    def lift(self) -> float:
        """How much more likely the outcome is after this condition and action."""
        return self.p / self.outcome_rate if self.outcome_rate > 0 else 0.0

    def to_json(self) -> dict:
        return {"rule": self.rule.to_json(), "support": self.support, "total": self.total,
                "p": round(self.p, 6), "mean_valence": round(self.mean_valence, 6),
                "lift": round(self.lift, 6),
                "chains": [c.to_json() for c in self.chains]}


def rule_id(if_cond: ConditionExpr, action: str, then_cond: ConditionExpr, prefix: str = "night.") -> str:
    blob = json.dumps([if_cond.to_json(), action, then_cond.to_json()], separators=(",", ":"))
    return prefix + hashlib.sha1(blob.encode("utf-8")).hexdigest()[:10]


def scaled_confidence(p: float, valence: float, lambda_v: float) -> float:
    return min(1.0, max(0.0, p * (1.0 + lambda_v * valence)))


def convolve_chains(chains: Sequence[CandidateChain], delta_max: int = 3, bin_width: int = 5,
                    co_min: float = 0.9, lambda_v: float = 0.25) -> list[ExtractedRule]:
    groups: dict[tuple, list[CandidateChain]] = {}
    for ch in chains:
        groups.setdefault((ch.action, ch.outcome), []).append(ch)

    merged: list[tuple[ConditionExpr, str, Literal, list[CandidateChain]]] = []
    for (action, outcome), group in groups.items():
        present = {ch.condition for ch in group}
        buckets: dict[frozenset, list[CandidateChain]] = {}
        for ch in group:
            lits = {ch.condition}
            for other in present - {ch.condition}:
                if ch.support and ch.cooccurrence.get(other, 0) >= co_min * ch.support:
                    lits.add(other)
            buckets.setdefault(frozenset(lits), []).append(ch)
        for lits, members in buckets.items():
            try:
                cond = ConditionExpr(tuple(lits))
            except ValueError:
                for ch in members:
                    merged.append((ConditionExpr((ch.condition,)), action, outcome, [ch]))
                continue
            merged.append((cond, action, outcome, members))

    window = delta_max * bin_width * 2
    drafts = []
    for cond, action, outcome, members in merged:
        support = sum(c.support for c in members)
        total = sum(c.total for c in members)
        valence = sum(c.mean_valence * c.support for c in members) / support if support else 0.0
        drafts.append((cond, action, ConditionExpr((outcome,)), members, support, total, valence))

    # priority: valence advantage over alternatives sharing the same condition
    base: dict[ConditionExpr, list[float]] = {}
    for cond, _, _, _, support, _, valence in drafts:
        acc = base.setdefault(cond, [0.0, 0.0])
        acc[0] += valence * support
        acc[1] += support
    out = []
    for cond, action, then, members, support, total, valence in drafts:
        acc = base[cond]
        advantage = valence - (acc[0] / acc[1] if acc[1] else 0.0)
        priority = int(math.floor(10.0 * advantage + 0.5))
        p = support / total if total else 0.0
        conf = scaled_confidence(p, valence, lambda_v)
        rule = Rule(rule_id(cond, action, then), cond, action, then, conf, window, priority)
        out.append(ExtractedRule(rule, tuple(members), support, total, valence, members[0].outcome_rate))
    out.sort(key=lambda e: (-e.rule.confidence, e.rule.id))
    return out


# -- pass 3 -----------------------------------------------------------------

def representatives(extracted: Sequence[ExtractedRule]) -> dict[tuple, ExtractedRule]:
    """Best extracted rule per (if_cond, do_action).

    Highest confidence wins; among equals the outcome with the highest lift,
    so an outcome that is nearly always active does not shadow a real effect.
    Input order breaks any remaining tie.
    """
    best: dict[tuple, ExtractedRule] = {}
    for e in extracted:
        k = e.rule.key()
        if k not in best or (e.rule.confidence, e.lift) > (best[k].rule.confidence, best[k].lift):
            best[k] = e
    return best


def diff_rules(existing: RuleSet, extracted: Sequence[ExtractedRule], gate: float = 0.5,
               conf_eps: float = 0.05, provenance: Optional[dict] = None) -> RulePatch:
    if not 0.0 <= gate <= 1.0:
        raise ValueError("gate must be in [0, 1]")
    best = representatives(extracted)
    by_key: dict[tuple, Rule] = {}
    for r in existing.rules:
        by_key.setdefault(r.key(), r)
    ids = {r.id for r in existing.rules}
    adds, modifies, removes = [], [], []
    for k in sorted(best, key=lambda k: best[k].rule.id):
        e = best[k]
        cur = by_key.get(k)
        if cur is None:
            if e.rule.confidence >= gate and e.rule.id not in ids:
                adds.append(e.rule)
                ids.add(e.rule.id)
            continue
        if not cur.is_user and e.rule.confidence < gate / 2:
            removes.append(cur.id)
        elif abs(e.rule.confidence - cur.confidence) > conf_eps:
            modifies.append((cur.id, with_confidence(cur, e.rule.confidence, e.rule.window)))
    return RulePatch(tuple(adds), tuple(modifies), tuple(sorted(removes)), dict(provenance or {}))


def summarize_appraisal(trace: ActivationTrace) -> dict:
    if trace.n_bins == 0:
        return {"mean_valence": 0.0, "mean_arousal": 0.0}
    return {"mean_valence": round(float(trace.valence.mean()), 6),
            "mean_arousal": round(float(trace.arousal.mean()), 6)}
