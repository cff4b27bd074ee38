"""Day/night orchestration shared by the CLI and the experiments."""
from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .config import Config
from .experience import ExperienceLog, read_log, write_log
from .night import Brain, NightResult, build_brain, run_night
from .rules import RulePatch, RuleSet, apply_patch, load_rules, save_patch, save_rules
from .snn import Network
from .world import EpisodeMetrics, GridWorld, load_world, metrics_csv, run_episode

CYCLE_FIELDS = ("cycle", "episodes", "median_pain", "median_ticks", "mean_pain", "mean_ticks",
                "adds", "modifies", "removes")


def derive_seed(*parts: int) -> int:
    """Stable 63-bit seed from integer parts."""
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def brain_from_config(cfg: Config, seed: Optional[int] = None) -> Brain:
    brain_seed = int(cfg.raw["night"].get("brain_seed", 0))
    if seed is not None:
        brain_seed = derive_seed(brain_seed, seed)
    brain = build_brain(cfg.channel_specs(), cfg.brain_params(), cfg.reverse_params(),
                        cfg.translation_params(), seed=brain_seed)
    if cfg.brain_state is not None:
        brain.net = Network.load(cfg.brain_state)
    return brain


def run_day(world: GridWorld, rules: RuleSet, cfg: Config, seeds: Sequence[int],
            episode_ids: Sequence[str]) -> list[tuple[ExperienceLog, EpisodeMetrics]]:
    d = cfg.day
    return [run_episode(world, rules, int(d["max_ticks"]), s, robot_id=d["robot_id"], episode_id=e,
                        exploration=float(d["exploration"]), noise=float(d["noise"]))
            for s, e in zip(seeds, episode_ids)]


def day_plan(seed: int, n: int, cycle: Optional[int] = None) -> tuple[list[int], list[str]]:
    if cycle is None:
        return ([derive_seed(seed, i) for i in range(n)], [f"s{seed}-e{i:03d}" for i in range(n)])
    return ([derive_seed(seed, cycle, i) for i in range(n)],
            [f"s{seed}-c{cycle:02d}-e{i:03d}" for i in range(n)])


@dataclass
class CycleReport:
    cycle: int
    metrics: list[EpisodeMetrics]
    patch: RulePatch

    @property
    def median_pain(self) -> float:
        return float(statistics.median(m.pain_count for m in self.metrics))

    @property
    def median_ticks(self) -> float:
        return float(statistics.median(m.ticks for m in self.metrics))

    def row(self) -> list:
        pains = [m.pain_count for m in self.metrics]
        ticks = [m.ticks for m in self.metrics]
        return [self.cycle, len(self.metrics), f"{self.median_pain:g}", f"{self.median_ticks:g}",
                f"{statistics.fmean(pains):.3f}", f"{statistics.fmean(ticks):.3f}",
                len(self.patch.adds), len(self.patch.modifies), len(self.patch.removes)]


def cycles_csv(reports: Sequence[CycleReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CYCLE_FIELDS)
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def night_dump(result: NightResult) -> dict:
    out = {"run_id": result.run_id, "stats": result.stats(), "robots": {}}
    for rid, rn in sorted(result.robots.items()):
        out["robots"][rid] = {
            "trace": rn.trace.to_json() if rn.trace is not None else None,
            "chains": [c.to_json() for c in rn.chains],
            "extracted": [e.to_json() for e in rn.extracted],
        }
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_dream(cfg: Config, seed: int, cycles: int, episodes: int, out_dir: Optional[Path] = None,
              dump: bool = False, progress: Optional[Callable[[str], None]] = None) -> list[CycleReport]:
    """Alternate day and night for one seed with its own brain.

    With ``out_dir`` every phase leaves its artifacts there and a
    ``state.json`` checkpoint; a rerun resumes after the last finished phase.
    """
    world = load_world(cfg.world_path)
    rules = load_rules(cfg.rules_path)
    brain = brain_from_config(cfg, seed)
    reports: list[CycleReport] = []
    state = {"seed": seed, "cycle": 0, "phase": "night"}
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / "params.json", cfg.raw)
        sp = out_dir / "state.json"
        if sp.is_file():
            state = json.loads(sp.read_text(encoding="utf-8"))
            reports, rules, brain = _resume(cfg, out_dir, state, brain, rules)

    def checkpoint(cycle: int, phase: str) -> None:
        if out_dir is not None:
            _write_json(out_dir / "state.json", {"seed": seed, "cycle": cycle, "phase": phase})

    for cycle in range(1, cycles + 1):
        if cycle < state["cycle"] or (cycle == state["cycle"] and state["phase"] == "night"):
            continue
        cdir = out_dir / f"cycle-{cycle:02d}" if out_dir is not None else None
        if cycle == state["cycle"] and state["phase"] == "day":
            logs, metrics = _load_day(cdir)
        else:
            seeds, ids = day_plan(seed, episodes, cycle)
            results = run_day(world, rules, cfg, seeds, ids)
            logs = [lg for lg, _ in results]
            metrics = [m for _, m in results]
            if cdir is not None:
                (cdir / "logs").mkdir(parents=True, exist_ok=True)
                for lg in logs:
                    write_log(cdir / "logs" / f"{lg.episode_id}.explog", lg)
                (cdir / "metrics.csv").write_text(metrics_csv(metrics), encoding="utf-8")
                checkpoint(cycle, "day")
        robot = cfg.day["robot_id"]
        result = run_night(brain, [(robot, lg) for lg in logs], {robot: rules},
                           f"s{seed}-c{cycle:02d}")
        patch = result.patches.get(robot, RulePatch(provenance={"run_id": result.run_id}))
        rules = apply_patch(rules, patch)
        report = CycleReport(cycle, metrics, patch)
        reports.append(report)
        if cdir is not None:
            save_patch(cdir / "night.patch", patch)
            save_rules(cdir / "rules.rules", rules)
            if dump:
                _write_json(cdir / "night-dump.json", night_dump(result))
            brain.net.save(out_dir / "brain.npz")
            (out_dir / "metrics.csv").write_text(
                metrics_csv([m for r in reports for m in r.metrics]), encoding="utf-8")
            (out_dir / "cycles.csv").write_text(cycles_csv(reports), encoding="utf-8")
            checkpoint(cycle, "night")
        if progress is not None:
            progress(f"seed {seed} cycle {cycle}: median pain {report.median_pain:g}, "
                     f"median ticks {report.median_ticks:g}, +{len(patch.adds)} rules")
    return reports


def _load_day(cdir: Path) -> tuple[list[ExperienceLog], list[EpisodeMetrics]]:
    logs = [read_log(p) for p in sorted((cdir / "logs").glob("*.explog"))]
    return logs, _read_metrics(cdir / "metrics.csv")


def _read_metrics(path: Path) -> list[EpisodeMetrics]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [EpisodeMetrics(r["episode_id"], int(r["seed"]), int(r["ticks"]), int(r["pain_count"]),
                               int(r["charge_ticks"]), float(r["mean_battery"]))
                for r in csv.DictReader(fh)]


def _resume(cfg: Config, out_dir: Path, state: dict, brain: Brain, rules: RuleSet):
    from .rules import load_patch
    reports = []
    last_night = state["cycle"] if state["phase"] == "night" else state["cycle"] - 1
    for c in range(1, last_night + 1):
        cdir = out_dir / f"cycle-{c:02d}"
        reports.append(CycleReport(c, _read_metrics(cdir / "metrics.csv"), load_patch(cdir / "night.patch")))
    if last_night >= 1:
        rules = load_rules(out_dir / f"cycle-{last_night:02d}" / "rules.rules")
        brain.net = Network.load(out_dir / "brain.npz")
    return reports, rules, brain
