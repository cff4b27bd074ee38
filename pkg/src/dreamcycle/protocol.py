"""Length-prefixed JSON framing shared by the dream server and its clients.

A frame is a 4-byte big-endian length followed by that many bytes of UTF-8
JSON. Messages are encoded canonically (sorted keys, compact separators) so a
decoded message re-encodes to the same bytes.
"""
from __future__ import annotations

import asyncio
import json
import socket
import struct

MAX_FRAME = 64 * 1024 * 1024
MESSAGE_TYPES = ("hello", "upload_log", "upload_ack", "run_night", "night_done",
                 "fetch_patch", "patch", "error")
_HEADER = struct.Struct(">I")


class ProtocolError(Exception):
    code = "protocol"

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class OversizeFrame(ProtocolError):
    code = "oversize"


class MalformedFrame(ProtocolError):
    code = "malformed_frame"


class ConnectionClosed(ProtocolError):
    code = "closed"


def encode_payload(msg: dict) -> bytes:
    return json.dumps(msg, sort_keys=True, separators=(",", ":"), ensure_ascii=False,
                      allow_nan=False).encode("utf-8")


def check_message(msg) -> dict:
    if not isinstance(msg, dict):
        raise MalformedFrame("frame payload must be a JSON object")
    if msg.get("type") not in MESSAGE_TYPES:
        raise MalformedFrame(f"unknown message type {msg.get('type')!r}")
    return msg


def encode_frame(msg: dict, max_frame: int = MAX_FRAME) -> bytes:
    check_message(msg)
    body = encode_payload(msg)
    if len(body) > max_frame:
        raise OversizeFrame(f"frame of {len(body)} bytes exceeds {max_frame}")
    return _HEADER.pack(len(body)) + body


def decode_payload(body: bytes) -> dict:
    try:
        msg = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedFrame(f"bad frame payload: {exc}") from None
    return check_message(msg)


def decode_frame(data: bytes, max_frame: int = MAX_FRAME) -> tuple[dict, int]:
    """Decode one frame from the front of ``data``; returns (message, bytes used)."""
    if len(data) < _HEADER.size:
        raise MalformedFrame("incomplete frame header")
    (n,) = _HEADER.unpack_from(data)
    if n > max_frame:
        raise OversizeFrame(f"announced frame of {n} bytes exceeds {max_frame}")
    if len(data) < _HEADER.size + n:
        raise MalformedFrame("incomplete frame body")
    return decode_payload(data[_HEADER.size:_HEADER.size + n]), _HEADER.size + n


def error_message(code: str, message: str) -> dict:
    return {"type": "error", "code": code, "message": message}


# -- asyncio streams ----------------------------------------------------------

async def read_frame(reader: asyncio.StreamReader, max_frame: int = MAX_FRAME) -> dict:
    try:
        head = await reader.readexactly(_HEADER.size)
    except asyncio.IncompleteReadError as exc:
        if not exc.partial:
            raise ConnectionClosed("peer closed the connection") from None
        raise MalformedFrame("incomplete frame header") from None
    (n,) = _HEADER.unpack(head)
    if n > max_frame:
        raise OversizeFrame(f"announced frame of {n} bytes exceeds {max_frame}")
    try:
        body = await reader.readexactly(n)
    except asyncio.IncompleteReadError:
        raise MalformedFrame("incomplete frame body") from None
    return decode_payload(body)


async def write_frame(writer: asyncio.StreamWriter, msg: dict, max_frame: int = MAX_FRAME) -> None:
    writer.write(encode_frame(msg, max_frame))
    await writer.drain()


# -- blocking sockets ----------------------------------------------------------

def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(min(n, 1 << 20))
        if not chunk:
            raise ConnectionClosed("peer closed the connection")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def send_frame(sock: socket.socket, msg: dict, max_frame: int = MAX_FRAME) -> None:
    sock.sendall(encode_frame(msg, max_frame))


def recv_frame(sock: socket.socket, max_frame: int = MAX_FRAME) -> dict:
    (n,) = _HEADER.unpack(_recv_exact(sock, _HEADER.size))
    if n > max_frame:
        raise OversizeFrame(f"announced frame of {n} bytes exceeds {max_frame}")
    return decode_payload(_recv_exact(sock, n))
