"""Single JSON configuration for every phase.

Relative paths resolve against the directory of the config file. Any key may
be omitted; missing keys fall back to :data:`DEFAULTS`.
"""
from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .night import BrainParams, ReverseParams
from .snn import AppraisalParams, ModulatorState, NeuronParams, PlasticityParams, STDPParams
from .translation import ChannelSpec, TranslationParams

SPOOL_ENV = "DREAMCYCLE_SPOOL"


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "world": "worlds/basic.json",
    "rules": "rules/basic.rules",
    "out_dir": "runs",
    "seeds": [0],
    "episodes": 10,
    "cycles": 5,
    "day": {"max_ticks": 2000, "exploration": 0.1, "noise": 0.0, "robot_id": "robot-0"},
    # per-channel curves; the ChannelSpec class defaults are k=10, x0=0.5
    "channels": [
        {"channel_id": "prox_front", "k": 20.0, "x0": 0.9, "r_min": 2.0, "r_max": 120.0, "pain_threshold": 1.0},
        {"channel_id": "prox_left", "k": 20.0, "x0": 0.9, "r_min": 2.0, "r_max": 120.0, "pain_threshold": 1.0},
        {"channel_id": "prox_right", "k": 20.0, "x0": 0.9, "r_min": 2.0, "r_max": 120.0, "pain_threshold": 1.0},
        {"channel_id": "hazard_front", "k": 20.0, "x0": 0.5, "r_min": 2.0, "r_max": 120.0, "pain_threshold": 0.9},
        {"channel_id": "charger_gradient", "k": 200.0, "x0": 0.998, "r_min": 2.0, "r_max": 120.0,
         "pain_threshold": 1.0},
    ],
    "snn": {
        "dt": 10.0,
        "pop_size": 32,
        "p_conn": 0.05,
        "w_init": 0.2,
        "syn_gain": 0.5,
        "neuron": {"tau_m": 20.0, "v_rest": -65.0, "v_reset": -70.0, "v_th": -50.0, "r_in": 10.0, "t_ref": 20.0},
        "stdp": {"a_plus": 0.01, "a_minus": 0.012, "tau_plus": 20.0, "tau_minus": 20.0, "tau_elig": 1000.0},
        "plasticity": {"eta": 0.1, "d_baseline": 0.1, "w_min": 0.0, "w_max": 1.0},
        "modulators": {"tau_d": 30.0, "tau_p": 30.0, "dopamine_rest": 0.0, "pain_rest": 0.0},
        "appraisal": {"epsilon": 0.01, "a_sat": 1.0},
    },
    "translation": {"pain_fraction": 0.8, "pain_inject": 0.3, "d_charge": 0.05, "action_rate": 100.0},
    "reverse": {"bin_width": 5, "activation_min": None, "delta_max": 3, "support_min": 3,
                "co_min": 0.9, "gate": 0.5, "conf_eps": 0.05, "lambda_v": 0.25},
    "night": {"brain_state": None, "brain_seed": 0},
    "server": {"host": "127.0.0.1", "port": 7474, "spool": "spool", "max_frame": 64 * 1024 * 1024,
               "attempts": 3, "backoff": [1.0, 2.0, 4.0], "timeout": 600.0},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


@dataclass
class Config:
    raw: dict
    base_dir: Path
    source: Optional[Path] = None

    # -- paths --------------------------------------------------------------
    def path(self, value: Optional[str]) -> Optional[Path]:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def world_path(self) -> Path:
        return self.path(self.raw["world"])

    @property
    def rules_path(self) -> Path:
        return self.path(self.raw["rules"])

    @property
    def out_dir(self) -> Path:
        return self.path(self.raw["out_dir"])

    @property
    def spool_dir(self) -> Path:
        env = os.environ.get(SPOOL_ENV)
        return Path(env) if env else self.path(self.raw["server"]["spool"])

    @property
    def brain_state(self) -> Optional[Path]:
        return self.path(self.raw["night"].get("brain_state"))

    # -- sections -----------------------------------------------------------
    @property
    def day(self) -> dict:
        return self.raw["day"]

    @property
    def server(self) -> dict:
        return self.raw["server"]

    @property
    def seeds(self) -> list[int]:
        return [int(s) for s in self.raw["seeds"]]

    @property
    def episodes(self) -> int:
        return int(self.raw["episodes"])

    @property
    def cycles(self) -> int:
        return int(self.raw["cycles"])

    def channel_specs(self) -> list[ChannelSpec]:
        try:
            return [ChannelSpec.from_json(c) for c in self.raw["channels"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad channel spec: {exc}") from None

    def brain_params(self) -> BrainParams:
        s = self.raw["snn"]
        try:
            return BrainParams(
                dt=float(s["dt"]), pop_size=int(s["pop_size"]), p_conn=float(s["p_conn"]),
                w_init=float(s["w_init"]), syn_gain=float(s["syn_gain"]),
                neuron=NeuronParams(**s["neuron"]), stdp=STDPParams(**s["stdp"]),
                plasticity=PlasticityParams(**s["plasticity"]),
                modulators=ModulatorState(**s["modulators"]),
                appraisal=AppraisalParams(**s["appraisal"]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad snn section: {exc}") from None

    def reverse_params(self) -> ReverseParams:
        try:
            return ReverseParams(**self.raw["reverse"])
        except TypeError as exc:
            raise ConfigError(f"bad reverse section: {exc}") from None

    def translation_params(self) -> TranslationParams:
        try:
            return TranslationParams(**self.raw["translation"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad translation section: {exc}") from None

    def override(self, **kw) -> "Config":
        raw = copy.deepcopy(self.raw)
        for k, v in kw.items():
            if v is not None:
                raw[k] = v
        cfg = Config(raw, self.base_dir, self.source)
        cfg.validate(check_files=False)
        return cfg

    # -- validation ---------------------------------------------------------
    def validate(self, check_files: bool = True) -> None:
        r = self.raw
        _require(isinstance(r.get("seeds"), list) and r["seeds"], "seeds must be a non-empty list")
        _require(int(r["episodes"]) >= 1, "episodes must be >= 1")
        _require(int(r["cycles"]) >= 1, "cycles must be >= 1")
        d = r["day"]
        _require(int(d["max_ticks"]) >= 1, "day.max_ticks must be >= 1")
        _require(0.0 <= float(d["exploration"]) <= 1.0, "day.exploration must be in [0, 1]")
        _require(float(d["noise"]) >= 0.0, "day.noise must be >= 0")
        s = r["snn"]
        _require(float(s["dt"]) > 0, "snn.dt must be positive")
        _require(int(s["pop_size"]) >= 1, "snn.pop_size must be >= 1")
        _require(0.0 <= float(s["p_conn"]) <= 1.0, "snn.p_conn must be in [0, 1]")
        _require(float(s["syn_gain"]) >= 0.0, "snn.syn_gain must be >= 0")
        pl = s["plasticity"]
        _require(float(pl["w_min"]) <= float(s["w_init"]) <= float(pl["w_max"]), "snn.w_init outside [w_min, w_max]")
        _require(float(s["appraisal"]["epsilon"]) > 0 and float(s["appraisal"]["a_sat"]) > 0,
                 "appraisal epsilon and a_sat must be positive")
        m = s["modulators"]
        _require(float(m["tau_d"]) > 0 and float(m["tau_p"]) > 0, "modulator time constants must be positive")
        _require(float(m["dopamine_rest"]) >= 0 and float(m["pain_rest"]) >= 0, "modulator rest levels must be >= 0")
        rv = r["reverse"]
        _require(int(rv["bin_width"]) >= 1, "reverse.bin_width must be >= 1")
        _require(rv["activation_min"] is None or int(rv["activation_min"]) >= 1, "reverse.activation_min must be >= 1")
        _require(int(rv["delta_max"]) >= 1 and int(rv["support_min"]) >= 1, "delta_max and support_min must be >= 1")
        for key in ("co_min", "gate", "conf_eps"):
            _require(0.0 <= float(rv[key]) <= 1.0, f"reverse.{key} must be in [0, 1]")
        _require(float(rv["lambda_v"]) >= 0.0, "reverse.lambda_v must be >= 0")
        sv = r["server"]
        _require(0 <= int(sv["port"]) < 65536, "server.port out of range")
        _require(int(sv["attempts"]) >= 1, "server.attempts must be >= 1")
        _require(1 <= int(sv["max_frame"]) <= 64 * 1024 * 1024, "server.max_frame must be in [1, 64 MiB]")
        ids = [c.get("channel_id") for c in r["channels"]]
        _require(len(set(ids)) == len(ids), "duplicate channel ids")
        self.channel_specs()
        self.brain_params()
        self.reverse_params()
        self.translation_params()
        if check_files:
            for label, p in (("world", self.world_path), ("rules", self.rules_path)):
                _require(p.is_file(), f"{label} file not found: {p}")
            bs = self.brain_state
            _require(bs is None or bs.is_file(), f"brain_state file not found: {bs}")


def load_config(path, check_files: bool = True) -> Config:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    cfg = Config(_merge(DEFAULTS, obj), path.resolve().parent, path)
    try:
        cfg.validate(check_files)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config {path}: {exc!r}") from None
    return cfg


def default_config(base_dir=".") -> Config:
    return Config(copy.deepcopy(DEFAULTS), Path(base_dir).resolve())
