"""``dreamcycle`` command line.

Exit codes: 0 success, 2 usage or configuration, 3 bad data, 4 network.
"""
from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import Config, ConfigError, load_config
from .cycle import (brain_from_config, cycles_csv, day_plan, night_dump, run_day, run_dream)
from .experience import ExperienceError, read_log, write_log
from .night import run_night
from .protocol import ProtocolError
from .rules import RuleError, apply_patch, dumps_patch, load_rules, save_patch, save_rules
from .server import BrainService, DreamServer, ServerError, connect_with_retry
from .world import WorldError, load_world, metrics_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NETWORK = 0, 2, 3, 4

log = logging.getLogger("dreamcycle")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _out(cfg: Config, args) -> Path:
    return Path(args.out) if getattr(args, "out", None) else cfg.out_dir


def _seeds(cfg: Config, args) -> list[int]:
    return [args.seed] if args.seed is not None else cfg.seeds


def _load_world_and_rules(cfg: Config):
    try:
        return load_world(cfg.world_path), load_rules(cfg.rules_path)
    except FileNotFoundError as exc:
        raise CliError(EXIT_USAGE, f"missing file: {exc.filename}") from None
    except (WorldError, RuleError, ValueError, KeyError) as exc:
        raise CliError(EXIT_USAGE, f"bad world or rules file: {exc}") from None


def cmd_day(cfg: Config, args) -> int:
    world, rules = _load_world_and_rules(cfg)
    episodes = args.episodes or cfg.episodes
    out = _out(cfg, args) / "day"
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    for seed in _seeds(cfg, args):
        seeds, ids = day_plan(seed, episodes)
        results = run_day(world, rules, cfg, seeds, ids)
        for lg, _ in results:
            write_log(out / f"{lg.robot_id}-{lg.episode_id}.explog", lg)
        rows = metrics_csv([m for _, m in results], header=not metrics_path.exists())
        with open(metrics_path, "a", encoding="utf-8") as fh:
            fh.write(rows)
        for _, m in results:
            log.info("%s: ticks=%d pain=%d", m.episode_id, m.ticks, m.pain_count)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_night(cfg: Config, args) -> int:
    if not args.logs:
        raise CliError(EXIT_USAGE, "night needs at least one log file")
    _, rules = _load_world_and_rules(cfg)
    queue = []
    for p in args.logs:
        try:
            lg = read_log(p)
        except FileNotFoundError:
            raise CliError(EXIT_USAGE, f"log file not found: {p}") from None
        except ExperienceError as exc:
            raise CliError(EXIT_DATA, f"{p}: {exc}") from None
        queue.append((lg.robot_id, lg))
    brain = brain_from_config(cfg)
    result = run_night(brain, queue, {rid: rules for rid, _ in queue}, "local-000001")
    if result.failed:
        for f in result.failed:
            print(f"skipped {f['episode_id']}: {f['error']}", file=sys.stderr)
        if not result.logs_replayed:
            raise CliError(EXIT_DATA, "no log could be replayed")
    out = _out(cfg, args) / "night"
    out.mkdir(parents=True, exist_ok=True)
    for rid, patch in sorted(result.patches.items()):
        save_patch(out / f"{rid}.patch", patch)
        print(f"{rid}: +{len(patch.adds)} ~{len(patch.modifies)} -{len(patch.removes)}")
    summary = {"run_id": result.run_id, "stats": result.stats(),
               "appraisal": {rid: p.provenance.get("appraisal") for rid, p in sorted(result.patches.items())}}
    (out / "params.json").write_text(json.dumps(cfg.raw, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "appraisal.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if args.dump_night:
        (out / "night-dump.json").write_text(json.dumps(night_dump(result), indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8")
    return EXIT_OK


def cmd_dream(cfg: Config, args) -> int:
    _load_world_and_rules(cfg)
    cycles = args.cycles or cfg.cycles
    episodes = args.episodes or cfg.episodes
    root = _out(cfg, args) / "dream"
    for seed in _seeds(cfg, args):
        reports = run_dream(cfg, seed, cycles, episodes, root / f"seed-{seed}", dump=args.dump_night,
                            progress=print)
        sys.stdout.write(cycles_csv(reports))
    return EXIT_OK


def cmd_serve(cfg: Config, args) -> int:
    sv = cfg.server
    service = BrainService(lambda: brain_from_config(cfg), cfg.spool_dir,
                           default_action=load_rules(cfg.rules_path).default_action)
    server = DreamServer(service, sv["host"], int(args.port if args.port is not None else sv["port"]),
                         int(sv["max_frame"]))

    async def main():
        await server.start()
        print(f"listening on {server.host}:{server.port}", flush=True)
        await server.serve_forever()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
    except OSError as exc:
        raise CliError(EXIT_NETWORK, f"cannot listen: {exc}") from None
    finally:
        service.close()
    return EXIT_OK


def cmd_sync(cfg: Config, args) -> int:
    sv = cfg.server
    robot = args.robot_id or cfg.day["robot_id"]
    out = _out(cfg, args)
    sync_dir = out / "sync"
    current = sync_dir / f"{robot}.rules"
    try:
        rules = load_rules(current if current.is_file() else cfg.rules_path)
    except (OSError, RuleError, ValueError) as exc:
        raise CliError(EXIT_USAGE, f"cannot load rules: {exc}") from None
    logs = []
    for p in sorted((out / "day").glob("*.explog")):
        try:
            lg = read_log(p)
        except ExperienceError as exc:
            raise CliError(EXIT_DATA, f"{p}: {exc}") from None
        if lg.robot_id == robot:
            logs.append(lg)
    port = int(args.port if args.port is not None else sv["port"])
    try:
        client = connect_with_retry(sv["host"], port, int(sv["attempts"]),
                                    [float(x) for x in sv["backoff"]], float(sv["timeout"]))
    except ConnectionError as exc:
        raise CliError(EXIT_NETWORK, str(exc)) from None
    try:
        with client:
            client.hello(robot, rules)
            for lg in logs:
                client.upload(lg)
            done = client.run_night()
            patch = client.fetch_patch()
    except ServerError as exc:
        raise CliError(EXIT_DATA if exc.code == "malformed_log" else EXIT_NETWORK, str(exc)) from None
    except (OSError, ProtocolError) as exc:
        raise CliError(EXIT_NETWORK, f"connection failed: {exc}") from None
    try:
        rules = apply_patch(rules, patch)
    except RuleError as exc:
        raise CliError(EXIT_DATA, f"patch does not apply: {exc}") from None
    sync_dir.mkdir(parents=True, exist_ok=True)
    save_patch(sync_dir / f"{robot}.patch", patch)
    save_rules(current, rules)
    print(f"{robot}: uploaded {len(logs)} logs, run {done.get('run_id')}, "
          f"+{len(patch.adds)} ~{len(patch.modifies)} -{len(patch.removes)}")
    return EXIT_OK


COMMANDS = {"day": cmd_day, "night": cmd_night, "dream": cmd_dream, "serve": cmd_serve, "sync": cmd_sync}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dreamcycle", description="Day/night rule learning loop.")
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON config file")
    common.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    common.add_argument("--episodes", type=int, help="episodes per day block")
    common.add_argument("--cycles", type=int, help="dream cycles")
    common.add_argument("--dump-night", action="store_true", help="write traces, chains and rules as JSON")
    common.add_argument("--out", help="output directory (default: config out_dir)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("day", parents=[common], help="run day episodes and record logs")
    p = sub.add_parser("night", parents=[common], help="replay logs and write patches")
    p.add_argument("logs", nargs="+", help=".explog files")
    sub.add_parser("dream", parents=[common], help="alternate day and night")
    p = sub.add_parser("serve", parents=[common], help="run the dream server")
    p.add_argument("--port", type=int)
    p = sub.add_parser("sync", parents=[common], help="upload logs and fetch a patch")
    p.add_argument("--port", type=int)
    p.add_argument("--robot-id")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    for flag in ("episodes", "cycles"):
        v = getattr(args, flag)
        if v is not None and v < 1:
            print(f"dreamcycle: --{flag} must be >= 1", file=sys.stderr)
            return EXIT_USAGE
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"dreamcycle: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CliError as exc:
        print(f"dreamcycle: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
