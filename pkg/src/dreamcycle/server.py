"""The shared night-time brain as a network service.

Robots say ``hello``, upload experience logs, ask for a night run and fetch
rule patches. Every accepted log is written to a spool directory and fsynced
before it is acknowledged, so a restarted server picks the queue back up.
All network mutation runs on one worker thread.
"""
from __future__ import annotations

import asyncio
import json
import logging
import os
import re
import socket
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .experience import ExperienceError, ExperienceLog, deserialize_log, serialize_log, validate_log
from .night import Brain, run_night
from .protocol import (MAX_FRAME, ConnectionClosed, ProtocolError, error_message, read_frame,
                       recv_frame, send_frame, write_frame)
from .rules import (RulePatch, RuleSet, apply_patch, dumps_rules, loads_rules, patch_from_json,
                    patch_to_json)
from .snn import Network

log = logging.getLogger(__name__)

STATES = ("awaiting_hello", "idle", "uploading", "night_running")
_ALLOWED = {
    "hello": ("awaiting_hello",),
    "upload_log": ("idle",),
    "run_night": ("idle",),
    "fetch_patch": ("idle",),
}


class BrainBusy(AssertionError):
    """Raised if two threads ever touch the network at once."""


def _fsync_dir(path: Path) -> None:
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(fd)
    except OSError:
        pass
    finally:
        os.close(fd)


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    _fsync_dir(path.parent)


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)[:64] or "x"


def rules_delta(base: RuleSet, current: RuleSet, provenance: dict) -> RulePatch:
    """Patch that turns ``base`` into ``current``."""
    old = {r.id: r for r in base.rules}
    new = {r.id: r for r in current.rules}
    adds = tuple(r for r in current.rules if r.id not in old)
    modifies = tuple((i, new[i]) for i in sorted(new) if i in old and new[i] != old[i])
    removes = tuple(sorted(i for i in old if i not in new))
    return RulePatch(adds, modifies, removes, dict(provenance))


@dataclass
class QueuedLog:
    robot_id: str
    log: ExperienceLog
    path: Optional[Path]


class BrainService:
    """Shared network, per-robot rule shadows and the durable log queue."""

    def __init__(self, brain_factory: Callable[[], Brain], spool_dir=None,
                 default_action: str = "stay"):
        self._factory = brain_factory
        self.brain = brain_factory()
        self.default_action = default_action
        self.spool = Path(spool_dir) if spool_dir is not None else None
        self.queue: list[QueuedLog] = []
        self.shadows: dict[str, RuleSet] = {}
        self.bases: dict[str, RuleSet] = {}
        self.provenance: dict[str, dict] = {}
        self.run_counter = 0
        self.violations = 0
        self._seq = 0
        self._lock = threading.Lock()
        self._active = threading.Lock()
        self.executor = ThreadPoolExecutor(max_workers=1, thread_name_prefix="brain")
        if self.spool is not None:
            (self.spool / "logs").mkdir(parents=True, exist_ok=True)
            (self.spool / "brain").mkdir(parents=True, exist_ok=True)
            self._recover()

    # -- persistence ----------------------------------------------------------
    def _state_json(self) -> bytes:
        obj = {
            "run_counter": self.run_counter,
            "shadows": {k: json.loads(dumps_rules(v)) for k, v in sorted(self.shadows.items())},
            "bases": {k: json.loads(dumps_rules(v)) for k, v in sorted(self.bases.items())},
            "provenance": self.provenance,
        }
        return json.dumps(obj, sort_keys=True, indent=1).encode("utf-8")

    def _persist_state(self) -> None:
        if self.spool is not None:
            _atomic_write(self.spool / "brain" / "state.json", self._state_json())

    def _persist_network(self) -> None:
        if self.spool is None:
            return
        path = self.spool / "brain" / "network.npz"
        tmp = path.with_name("network.tmp.npz")
        self.brain.net.save(tmp)
        with open(tmp, "rb") as fh:
            os.fsync(fh.fileno())
        os.replace(tmp, path)
        _fsync_dir(path.parent)

    def _recover(self) -> None:
        state = self.spool / "brain" / "state.json"
        if state.is_file():
            obj = json.loads(state.read_text(encoding="utf-8"))
            self.run_counter = int(obj["run_counter"])
            self.shadows = {k: loads_rules(json.dumps(v)) for k, v in obj["shadows"].items()}
            self.bases = {k: loads_rules(json.dumps(v)) for k, v in obj["bases"].items()}
            self.provenance = obj["provenance"]
        net_path = self.spool / "brain" / "network.npz"
        if net_path.is_file():
            self.brain.net = Network.load(net_path)
        for path in sorted((self.spool / "logs").glob("*.explog")):
            try:
                lg = deserialize_log(path.read_bytes())
            except ExperienceError as exc:
                log.warning("discarding unreadable spooled log %s: %s", path, exc)
                path.rename(path.with_suffix(".rejected"))
                continue
            self.queue.append(QueuedLog(lg.robot_id, lg, path))
            self._seq = max(self._seq, int(path.name.split("-", 1)[0]) + 1)

    # -- operations -----------------------------------------------------------
    def register(self, robot_id: str, rules: Optional[RuleSet] = None) -> None:
        with self._lock:
            if rules is not None:
                self.shadows[robot_id] = rules
                self.bases[robot_id] = rules
            elif robot_id not in self.shadows:
                self.shadows[robot_id] = RuleSet((), self.default_action)
                self.bases[robot_id] = self.shadows[robot_id]
            self._persist_state()

    def enqueue(self, robot_id: str, lg: ExperienceLog) -> str:
        """Durably queue a log; returns its episode id once it is on disk."""
        problems = validate_log(lg)
        if problems:
            raise ExperienceError(f"invalid log: {problems[0]}")
        if lg.robot_id != robot_id:
            raise ExperienceError(f"log belongs to {lg.robot_id!r}, session is {robot_id!r}")
        with self._lock:
            path = None
            if self.spool is not None:
                name = f"{self._seq:08d}-{_safe(robot_id)}-{_safe(lg.episode_id)}.explog"
                path = self.spool / "logs" / name
                _atomic_write(path, serialize_log(lg))
            self._seq += 1
            self.queue.append(QueuedLog(robot_id, lg, path))
        return lg.episode_id

    def pending(self) -> int:
        with self._lock:
            return len(self.queue)

    def run_night(self) -> tuple[Optional[str], dict]:
        """One night over everything queued; returns (run_id, stats)."""
        if not self._active.acquire(blocking=False):
            self.violations += 1
            raise BrainBusy("night run while the brain is active")
        try:
            with self._lock:
                batch = list(self.queue)
                shadows = dict(self.shadows)
            if not batch:
                return None, {"logs_replayed": 0, "failed": [], "robots": {}}
            self.run_counter += 1
            run_id = f"run-{self.run_counter:06d}"
            result = run_night(self.brain, [(q.robot_id, q.log) for q in batch], shadows, run_id)
            with self._lock:
                for robot_id, rn in result.robots.items():
                    cur = self.shadows.get(robot_id) or RuleSet((), self.default_action)
                    try:
                        self.shadows[robot_id] = apply_patch(cur, rn.patch)
                    except ValueError as exc:  # shadow replaced by a hello mid-run
                        log.warning("patch for %s no longer applies: %s", robot_id, exc)
                        continue
                    self.bases.setdefault(robot_id, cur)
                    self.provenance[robot_id] = rn.patch.provenance
                self._persist_network()
                self._persist_state()
                for q in batch:
                    if q.path is not None:
                        q.path.unlink(missing_ok=True)
                self.queue = self.queue[len(batch):]
            return run_id, result.stats()
        finally:
            self._active.release()

    async def run_night_async(self) -> tuple[Optional[str], dict]:
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(self.executor, self.run_night)

    def fetch_patch(self, robot_id: str) -> RulePatch:
        """Everything that changed in the robot's shadow since its last fetch."""
        with self._lock:
            cur = self.shadows.get(robot_id) or RuleSet((), self.default_action)
            base = self.bases.get(robot_id, cur)
            patch = rules_delta(base, cur, self.provenance.get(robot_id, {}))
            self.bases[robot_id] = cur
            self._persist_state()
        return patch

    def close(self) -> None:
        self.executor.shutdown(wait=True)


# -- sessions -------------------------------------------------------------------

@dataclass
class BrainSession:
    robot_id: Optional[str] = None
    state: str = "awaiting_hello"
    pending: list = field(default_factory=list)
    last_patch: Optional[RulePatch] = None
    closed: bool = False

    def move(self, state: str) -> None:
        assert state in STATES
        self.state = state


async def handle_frame(session: BrainSession, msg: dict, service: BrainService) -> list[dict]:
    """Apply one inbound message; returns the replies. On error the session is closed."""
    try:
        kind = msg.get("type")
        if kind not in _ALLOWED:
            raise ProtocolError(f"unexpected message {kind!r} from a client")
        if session.state not in _ALLOWED[kind]:
            raise ProtocolError(f"{kind} not allowed in state {session.state}")
        if kind == "hello":
            robot_id = msg.get("robot_id")
            if not isinstance(robot_id, str) or not robot_id:
                raise ProtocolError("hello needs a robot_id")
            rules = None
            if msg.get("rules") is not None:
                try:
                    rules = loads_rules(json.dumps(msg["rules"]))
                except (ValueError, KeyError, TypeError) as exc:
                    raise ProtocolError(f"bad rules in hello: {exc}", "data") from None
                if msg.get("rules_hash") not in (None, rules.digest()):
                    raise ProtocolError("rules_hash does not match rules", "data")
            service.register(robot_id, rules)
            session.robot_id = robot_id
            session.move("idle")
            return []
        if kind == "upload_log":
            session.move("uploading")
            text = msg.get("log")
            if not isinstance(text, str):
                raise ProtocolError("upload_log needs a log string", "malformed_log")
            try:
                lg = deserialize_log(text.encode("utf-8"))
                episode = service.enqueue(session.robot_id, lg)
            except ExperienceError as exc:
                raise ProtocolError(str(exc), "malformed_log") from None
            session.pending.append(episode)
            session.move("idle")
            return [{"type": "upload_ack", "episode_id": episode}]
        if kind == "run_night":
            session.move("night_running")
            run_id, stats = await service.run_night_async()
            session.pending.clear()
            session.move("idle")
            return [{"type": "night_done", "run_id": run_id, "stats": stats}]
        # fetch_patch
        patch = service.fetch_patch(session.robot_id)
        session.last_patch = patch
        return [{"type": "patch", "patch": patch_to_json(patch)}]
    except ProtocolError as exc:
        session.closed = True
        return [error_message(exc.code, str(exc))]


class DreamServer:
    def __init__(self, service: BrainService, host: str = "127.0.0.1", port: int = 7474,
                 max_frame: int = MAX_FRAME):
        self.service = service
        self.host = host
        self.port = port
        self.max_frame = max_frame
        self._server: Optional[asyncio.base_events.Server] = None

    async def _client(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        session = BrainSession()
        try:
            while not session.closed:
                try:
                    msg = await read_frame(reader, self.max_frame)
                except ConnectionClosed:
                    break
                except ProtocolError as exc:
                    await write_frame(writer, error_message(exc.code, str(exc)), self.max_frame)
                    break
                for reply in await handle_frame(session, msg, self.service):
                    await write_frame(writer, reply, self.max_frame)
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass

    async def start(self) -> None:
        self._server = await asyncio.start_server(self._client, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        async with self._server:
            await self._server.serve_forever()

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()


class ServerThread:
    """Runs a :class:`DreamServer` on a private event loop in a background thread."""

    def __init__(self, server: DreamServer):
        self.server = server
        self.loop = asyncio.new_event_loop()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._ready = threading.Event()

    def _run(self) -> None:
        asyncio.set_event_loop(self.loop)
        self.loop.run_until_complete(self.server.start())
        self._ready.set()
        self.loop.run_forever()

    def start(self) -> "ServerThread":
        self._thread.start()
        self._ready.wait(30)
        return self

    @property
    def port(self) -> int:
        return self.server.port

    def stop(self) -> None:
        fut = asyncio.run_coroutine_threadsafe(self.server.close(), self.loop)
        fut.result(30)
        self.loop.call_soon_threadsafe(self.loop.stop)
        self._thread.join(30)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


# -- client ---------------------------------------------------------------------

class ServerError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class RobotClient:
    """Blocking client for one robot session."""

    def __init__(self, sock: socket.socket, max_frame: int = MAX_FRAME):
        self.sock = sock
        self.max_frame = max_frame

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 600.0, max_frame: int = MAX_FRAME) -> "RobotClient":
        return cls(socket.create_connection((host, port), timeout=timeout), max_frame)

    def _call(self, msg: dict, expect: Optional[str]) -> Optional[dict]:
        send_frame(self.sock, msg, self.max_frame)
        if expect is None:
            return None
        reply = recv_frame(self.sock, self.max_frame)
        if reply["type"] == "error":
            raise ServerError(reply.get("code", "?"), reply.get("message", ""))
        if reply["type"] != expect:
            raise ProtocolError(f"expected {expect}, got {reply['type']}")
        return reply

    def hello(self, robot_id: str, rules: Optional[RuleSet] = None) -> None:
        msg = {"type": "hello", "robot_id": robot_id,
               "rules_hash": rules.digest() if rules is not None else None}
        if rules is not None:
            msg["rules"] = json.loads(dumps_rules(rules))
        self._call(msg, None)

    def upload(self, lg: ExperienceLog) -> str:
        reply = self._call({"type": "upload_log", "log": serialize_log(lg).decode("utf-8")}, "upload_ack")
        return reply["episode_id"]

    def run_night(self) -> dict:
        return self._call({"type": "run_night"}, "night_done")

    def fetch_patch(self) -> RulePatch:
        return patch_from_json(self._call({"type": "fetch_patch"}, "patch")["patch"])

    def close(self) -> None:
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def connect_with_retry(host: str, port: int, attempts: int = 3, backoff=(1.0, 2.0, 4.0),
                       timeout: float = 600.0, sleep=time.sleep) -> RobotClient:
    """Connect, sleeping ``backoff[i]`` after the i-th failed attempt."""
    last: Optional[OSError] = None
    for i in range(attempts):
        try:
            return RobotClient.connect(host, port, timeout)
        except OSError as exc:
            last = exc
            if i + 1 < attempts:
                sleep(backoff[min(i, len(backoff) - 1)])
    raise ConnectionError(f"cannot reach {host}:{port} after {attempts} attempts: {last}")
