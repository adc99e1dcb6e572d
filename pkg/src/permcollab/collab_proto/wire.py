"""Frame and payload codecs for the one-shot upload protocol.

Every frame on the wire is:

    u32 length | u8 type | u32 client_id | u64 seq | payload

with all integers little-endian.  ``length`` counts everything after the
length field itself, so a frame occupies ``4 + length`` bytes and the fixed
overhead per frame is 17 bytes.  Payload layouts:

    HELLO (client):  u32 n_blocks | u16 p | u32 l_vec | u16 h | u16 w |
                     u8 c | u64 planned_records                (23 bytes)
    HELLO (server):  u64 received_count | u8 done              (9 bytes)
    UPLOAD_BATCH:    one PCED record, seq = record index; no reply per frame
    UPLOAD_DONE:     empty; server replies UPLOAD_DONE with u64 count | u8 done
    MODEL_REQUEST:   empty
    MODEL_CHUNK:     seq 0 carries u64 size | 32-byte sha256; seq 1..k carry data
    ERROR:           u16 code | utf-8 message

Acknowledgements are cumulative: the HELLO and UPLOAD_DONE replies carry the
server's durable record count, which is the resume point after a reconnect.
No payload anywhere has a field for key material.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

from ..errors import ProtocolError, TransportError

FRAME_OVERHEAD = 17  # length prefix + type + client_id + seq
MAX_PAYLOAD = 16 << 20  # sanity bound; one 224x224x3 record is ~147 KiB

_PREFIX = struct.Struct("<I")
_HEAD = struct.Struct("<BIQ")
_HELLO = struct.Struct("<IHIHHBQ")
_COUNT_REPLY = struct.Struct("<QB")
_CHUNK0 = struct.Struct("<Q32s")
_ERR_CODE = struct.Struct("<H")


class MessageType(IntEnum):
    HELLO = 1
    UPLOAD_BATCH = 2
    UPLOAD_DONE = 3
    MODEL_REQUEST = 4
    MODEL_CHUNK = 5
    ERROR = 6


class ErrorCode(IntEnum):
    MALFORMED = 1
    BAD_STATE = 2
    GEOMETRY_MISMATCH = 3
    REPLAY = 4
    SESSION_ACTIVE = 5
    NOT_READY = 6
    INTERNAL = 7


@dataclass(frozen=True)
class Frame:
    type: MessageType
    client_id: int
    seq: int
    payload: bytes = b""

    def encode(self) -> bytes:
        body = _HEAD.pack(self.type, self.client_id, self.seq) + self.payload
        return _PREFIX.pack(len(body)) + body

    @property
    def wire_bytes(self) -> int:
        return FRAME_OVERHEAD + len(self.payload)


@dataclass(frozen=True)
class HelloInfo:
    """Shard geometry plus the client's planned record count."""

    n_blocks: int
    p: int
    l_vec: int
    h: int
    w: int
    c: int
    planned: int

    @property
    def payload_bytes(self) -> int:
        return self.h * self.w * self.c

    @property
    def geometry(self) -> tuple[int, int, int, int, int, int]:
        return (self.n_blocks, self.p, self.l_vec, self.h, self.w, self.c)


def encode_hello(info: HelloInfo) -> bytes:
    return _HELLO.pack(info.n_blocks, info.p, info.l_vec, info.h, info.w, info.c, info.planned)


def decode_hello(payload: bytes) -> HelloInfo:
    if len(payload) != _HELLO.size:
        raise ProtocolError(ErrorCode.MALFORMED, f"HELLO payload is {len(payload)} bytes, expected {_HELLO.size}")
    return HelloInfo(*_HELLO.unpack(payload))


def encode_count_reply(count: int, done: bool) -> bytes:
    return _COUNT_REPLY.pack(count, 1 if done else 0)


def decode_count_reply(payload: bytes) -> tuple[int, bool]:
    if len(payload) != _COUNT_REPLY.size:
        raise ProtocolError(ErrorCode.MALFORMED, f"count reply is {len(payload)} bytes, expected {_COUNT_REPLY.size}")
    count, done = _COUNT_REPLY.unpack(payload)
    return count, bool(done)


def encode_chunk_header(size: int, sha256: bytes) -> bytes:
    return _CHUNK0.pack(size, sha256)


def decode_chunk_header(payload: bytes) -> tuple[int, bytes]:
    if len(payload) != _CHUNK0.size:
        raise ProtocolError(ErrorCode.MALFORMED, f"chunk header is {len(payload)} bytes, expected {_CHUNK0.size}")
    size, digest = _CHUNK0.unpack(payload)
    return size, digest


def encode_error(code: ErrorCode, message: str) -> bytes:
    return _ERR_CODE.pack(code) + message.encode("utf-8")


def decode_error(payload: bytes) -> tuple[int, str]:
    if len(payload) < _ERR_CODE.size:
        raise ProtocolError(ErrorCode.MALFORMED, "ERROR payload shorter than its code field")
    (code,) = _ERR_CODE.unpack_from(payload, 0)
    return code, payload[_ERR_CODE.size :].decode("utf-8", errors="replace")


def read_exact(conn, n: int) -> bytes:
    """Read exactly n bytes; b"" only when EOF lands before the first byte."""
    if n == 0:
        return b""
    parts = []
    got = 0
    while got < n:
        chunk = conn.recv(n - got)
        if not chunk:
            if got == 0:
                return b""
            raise TransportError(f"connection closed mid-frame ({got}/{n} bytes)")
        parts.append(chunk)
        got += len(chunk)
    return b"".join(parts)


def read_frame(conn) -> Frame | None:
    """Next frame, or None on a clean EOF at a frame boundary."""
    prefix = read_exact(conn, _PREFIX.size)
    if not prefix:
        return None
    (length,) = _PREFIX.unpack(prefix)
    if length < _HEAD.size or length > _HEAD.size + MAX_PAYLOAD:
        raise ProtocolError(ErrorCode.MALFORMED, f"frame length {length} out of range")
    body = read_exact(conn, length)
    if len(body) < length:
        raise TransportError("connection closed mid-frame")
    type_raw, client_id, seq = _HEAD.unpack_from(body, 0)
    try:
        mtype = MessageType(type_raw)
    except ValueError:
        raise ProtocolError(ErrorCode.MALFORMED, f"unknown message type {type_raw}") from None
    return Frame(mtype, client_id, seq, bytes(body[_HEAD.size :]))


def send_frame(conn, frame: Frame) -> int:
    """Write one frame; returns the number of bytes handed to the transport."""
    data = frame.encode()
    conn.send(data)
    return len(data)
