"""IF-DO-THEN control rules for the day-phase controller.

A rule fires when every literal of its IF part holds on the current frame.
Among firing rules the winner is chosen by (highest priority, most literals,
smallest id), so there is never an ambiguous match.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

from .experience import ExperienceLog, SensorFrame

SCHEMA_VERSION = 1
PREDICATES = ("lt", "ge")
USER_PREFIX = "user."
NIGHT_PREFIX = "night."


class RuleError(ValueError):
    pass


class UnknownChannel(RuleError):
    pass


class UnknownRuleId(RuleError):
    pass


class DuplicateRuleId(RuleError):
    pass


@dataclass(frozen=True, order=True)
class Literal:
    channel: str
    pred: str
    threshold: float

    def __post_init__(self):
        if self.pred not in PREDICATES:
            raise RuleError(f"unknown predicate {self.pred!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise RuleError(f"threshold {self.threshold} outside [0,1]")

    def holds(self, value: float) -> bool:
        return value >= self.threshold if self.pred == "ge" else value < self.threshold

    def interval(self) -> tuple[float, float, bool]:
        """Satisfying set within [0,1] as (lo, hi, hi_inclusive)."""
        if self.pred == "ge":
            return (self.threshold, 1.0, True)
        return (0.0, self.threshold, False)

    def entails(self, other: "Literal") -> bool:
        """True when every value satisfying self also satisfies ``other``."""
        if self.channel != other.channel:
            return False
        lo, hi, hi_inc = self.interval()
        if hi < lo or (hi == lo and not hi_inc):
            return True  # unsatisfiable premise
        olo, ohi, ohi_inc = other.interval()
        if lo < olo:
            return False
        if hi < ohi:
            return True
        if hi == ohi:
            return ohi_inc or not hi_inc
        return False

    def __str__(self) -> str:
        op = ">=" if self.pred == "ge" else "<"
        return f"{self.channel}{op}{self.threshold:g}"

    def to_json(self) -> list:
        return [self.channel, self.pred, self.threshold]

    @classmethod
    def from_json(cls, obj) -> "Literal":
        ch, pred, thr = obj
        return cls(str(ch), str(pred), float(thr))


@dataclass(frozen=True)
class ConditionExpr:
    """Conjunction of threshold literals; the empty conjunction is true."""

    literals: tuple[Literal, ...] = ()

    def __post_init__(self):
        lits = tuple(sorted(set(self.literals)))
        keys = [(l.channel, l.pred) for l in lits]
        if len(set(keys)) != len(keys):
            raise RuleError(f"more than one literal per (channel, predicate): {lits}")
        object.__setattr__(self, "literals", lits)

    @classmethod
    def of(cls, *literals: Literal) -> "ConditionExpr":
        return cls(tuple(literals))

    def __len__(self) -> int:
        return len(self.literals)

    def __iter__(self):
        return iter(self.literals)

    def channels(self) -> set[str]:
        return {l.channel for l in self.literals}

    def holds(self, values: dict[str, float]) -> bool:
        return all(l.holds(values[l.channel]) for l in self.literals)

    def entails(self, other: "ConditionExpr") -> bool:
        return all(any(a.entails(b) for a in self.literals) for b in other.literals)

    def __str__(self) -> str:
        return " & ".join(map(str, self.literals)) or "true"

    def to_json(self) -> list:
        return [l.to_json() for l in self.literals]

    @classmethod
    def from_json(cls, obj) -> "ConditionExpr":
        return cls(tuple(Literal.from_json(o) for o in obj))


@dataclass(frozen=True)
class Rule:
    id: str
    if_cond: ConditionExpr
    do_action: str
    then_cond: ConditionExpr = ConditionExpr()
    confidence: float = 1.0
    window: int = 1
    priority: int = 0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise RuleError(f"rule {self.id}: confidence {self.confidence} outside [0,1]")
        if self.window < 1:
            raise RuleError(f"rule {self.id}: window must be >= 1")

    @property
    def is_user(self) -> bool:
        return self.id.startswith(USER_PREFIX)

    def key(self) -> tuple[ConditionExpr, str]:
        return (self.if_cond, self.do_action)

    def __str__(self) -> str:
        return (f"{self.id}: IF {self.if_cond} DO {self.do_action} THEN {self.then_cond} "
                f"[conf={self.confidence:.3f} win={self.window} prio={self.priority}]")

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "if": self.if_cond.to_json(),
            "do": self.do_action,
            "then": self.then_cond.to_json(),
            "confidence": self.confidence,
            "window": self.window,
            "priority": self.priority,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Rule":
        return cls(
            id=str(obj["id"]),
            if_cond=ConditionExpr.from_json(obj["if"]),
            do_action=str(obj["do"]),
            then_cond=ConditionExpr.from_json(obj.get("then", [])),
            confidence=float(obj.get("confidence", 1.0)),
            window=int(obj.get("window", 1)),
            priority=int(obj.get("priority", 0)),
        )


def _order_key(rule: Rule):
    return (-rule.priority, -len(rule.if_cond), rule.id)


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...] = ()
    default_action: str = "stay"
    _ranked: tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = [r.id for r in self.rules]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise DuplicateRuleId(f"duplicate rule ids: {dup}")
        object.__setattr__(self, "rules", tuple(self.rules))
        ranked = tuple(
            (r.id, r.do_action, tuple((l.channel, l.pred == "ge", l.threshold) for l in r.if_cond))
            for r in sorted(self.rules, key=_order_key)
        )
        object.__setattr__(self, "_ranked", ranked)

    def __len__(self) -> int:
        return len(self.rules)

    def get(self, rule_id: str) -> Optional[Rule]:
        for r in self.rules:
            if r.id == rule_id:
                return r
        return None

    def ids(self) -> list[str]:
        return [r.id for r in self.rules]

    def channels(self) -> set[str]:
        out: set[str] = set()
        for r in self.rules:
            out |= r.if_cond.channels()
        return out

    def digest(self) -> str:
        return hashlib.sha256(dumps_rules(self).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RulePatch:
    adds: tuple[Rule, ...] = ()
    modifies: tuple[tuple[str, Rule], ...] = ()
    removes: tuple[str, ...] = ()
    provenance: dict = field(default_factory=dict, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "adds", tuple(self.adds))
        object.__setattr__(self, "modifies", tuple((i, r) for i, r in self.modifies))
        object.__setattr__(self, "removes", tuple(self.removes))
        sections = [r.id for r in self.adds] + [i for i, _ in self.modifies] + list(self.removes)
        if len(set(sections)) != len(sections):
            raise RuleError("a rule id appears in more than one patch section")

    def is_empty(self) -> bool:
        return not (self.adds or self.modifies or self.removes)

    def __hash__(self):
        return hash((self.adds, self.modifies, self.removes))


# -- operations -------------------------------------------------------------

def match_rules(rs: RuleSet, frame: SensorFrame | dict) -> tuple[str, Optional[str]]:
    """Action of the winning rule for ``frame``, or the default action."""
    values = frame if isinstance(frame, dict) else frame.as_dict()
    for rule_id, action, lits in rs._ranked:
        for ch, is_ge, thr in lits:
            try:
                x = values[ch]
            except KeyError:
                raise UnknownChannel(ch) from None
            if (x < thr) if is_ge else (x >= thr):
                break
        else:
            return action, rule_id
    return rs.default_action, None


def apply_patch(rs: RuleSet, patch: RulePatch) -> RuleSet:
    """Apply removes, then modifies, then adds."""
    rules = {r.id: r for r in rs.rules}
    order = [r.id for r in rs.rules]
    for rid in patch.removes:
        if rid not in rules:
            raise UnknownRuleId(rid)
        del rules[rid]
        order.remove(rid)
    for rid, new in patch.modifies:
        if rid not in rules:
            raise UnknownRuleId(rid)
        if new.id != rid:
            if new.id in rules:
                raise DuplicateRuleId(new.id)
            order[order.index(rid)] = new.id
            del rules[rid]
        rules[new.id] = new
    for new in patch.adds:
        if new.id in rules:
            raise DuplicateRuleId(new.id)
        rules[new.id] = new
        order.append(new.id)
    return RuleSet(tuple(rules[i] for i in order), rs.default_action)


def check_chaining(rs: RuleSet) -> list[tuple[str, str]]:
    """Links (a, b) where a's THEN part entails b's IF part."""
    return [(a.id, b.id) for a in rs.rules for b in rs.rules if a.then_cond.entails(b.if_cond)]


@dataclass
class ExpectationStats:
    fired: int = 0
    satisfied: int = 0

    @property
    def confidence(self) -> Optional[float]:
        return self.satisfied / self.fired if self.fired else None

    def as_tuple(self) -> tuple[int, int]:
        return (self.fired, self.satisfied)


def evaluate_expectations(rs: RuleSet, log: ExperienceLog) -> dict[str, ExpectationStats]:
    """Per rule: how often it won and was acted on, and how often THEN followed."""
    stats = {r.id: ExpectationStats() for r in rs.rules}
    frames = log.frames
    values = [f.as_dict() for f in frames]
    actions = dict(log.actions)
    for i, fr in enumerate(frames):
        action, rid = match_rules(rs, values[i])
        if rid is None or actions.get(fr.tick) != action:
            continue
        rule = rs.get(rid)
        st = stats[rid]
        st.fired += 1
        horizon = fr.tick + rule.window
        j = i + 1
        while j < len(frames) and frames[j].tick <= horizon:
            if rule.then_cond.holds(values[j]):
                st.satisfied += 1
                break
            j += 1
    return stats


# -- files ------------------------------------------------------------------

def dumps_rules(rs: RuleSet) -> str:
    obj = {
        "schema": SCHEMA_VERSION,
        "default_action": rs.default_action,
        "rules": [r.to_json() for r in rs.rules],
    }
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def loads_rules(text: str) -> RuleSet:
    obj = json.loads(text)
    if obj.get("schema") != SCHEMA_VERSION:
        raise RuleError(f"unsupported rules schema {obj.get('schema')!r}")
    return RuleSet(tuple(Rule.from_json(r) for r in obj["rules"]), str(obj["default_action"]))


def patch_to_json(patch: RulePatch) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "adds": [r.to_json() for r in patch.adds],
        "modifies": [{"id": i, "rule": r.to_json()} for i, r in patch.modifies],
        "removes": list(patch.removes),
        "provenance": patch.provenance,
    }


def patch_from_json(obj: dict) -> RulePatch:
    if obj.get("schema") != SCHEMA_VERSION:
        raise RuleError(f"unsupported patch schema {obj.get('schema')!r}")
    return RulePatch(
        adds=tuple(Rule.from_json(r) for r in obj["adds"]),
        modifies=tuple((m["id"], Rule.from_json(m["rule"])) for m in obj["modifies"]),
        removes=tuple(obj["removes"]),
        provenance=obj.get("provenance", {}),
    )


def dumps_patch(patch: RulePatch) -> str:
    return json.dumps(patch_to_json(patch), indent=2, ensure_ascii=False) + "\n"


def loads_patch(text: str) -> RulePatch:
    return patch_from_json(json.loads(text))


def load_rules(path) -> RuleSet:
    return loads_rules(Path(path).read_text(encoding="utf-8"))


def save_rules(path, rs: RuleSet) -> None:
    Path(path).write_text(dumps_rules(rs), encoding="utf-8")


def load_patch(path) -> RulePatch:
    return loads_patch(Path(path).read_text(encoding="utf-8"))


def save_patch(path, patch: RulePatch) -> None:
    Path(path).write_text(dumps_patch(patch), encoding="utf-8")


def empty_patch(**provenance) -> RulePatch:
    return RulePatch(provenance=dict(provenance))


def with_confidence(rule: Rule, confidence: float, window: int) -> Rule:
    return replace(rule, confidence=confidence, window=window)
