"""Client side of the one-shot protocol: upload shards once, pull the model.

`upload` opens exactly one logical session per client per training run; a
cut connection is retried and resumes from the server's durable count (the
HELLO reply), so retries are idempotent and the server never stores a
record twice.  Byte accounting in the returned summary counts exactly what
was handed to the transport, frame overhead included, so it can be checked
against the documented frame layout.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass
from pathlib import Path

from ..dataset_io import SHARD_HEADER_BYTES, ShardHeader, read_shard_header
from ..errors import DigestMismatchError, ProtocolError, TransportError, ValidationError
from .wire import (
    ErrorCode,
    Frame,
    HelloInfo,
    MessageType,
    decode_count_reply,
    decode_chunk_header,
    decode_error,
    encode_hello,
    read_frame,
    send_frame,
)


@dataclass(frozen=True)
class TransferSummary:
    client_id: int
    planned: int
    records_sent: int
    records_skipped: int  # already durable on the server before we sent them
    bytes_sent: int
    n_connects: int
    server_count: int
    done: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _expect(conn, mtype: MessageType) -> Frame:
    frame = read_frame(conn)
    if frame is None:
        raise TransportError("connection closed while waiting for a reply")
    if frame.type is MessageType.ERROR:
        code, message = decode_error(frame.payload)
        raise ProtocolError(code, message)
    if frame.type is not mtype:
        raise ProtocolError(ErrorCode.BAD_STATE, f"expected {mtype.name}, got {frame.type.name}")
    return frame


class _ShardCursor:
    """Random access to encoded record bytes across an ordered shard list."""

    def __init__(self, paths):
        self.paths = [Path(p) for p in paths]
        self.headers: list[ShardHeader] = [read_shard_header(p) for p in self.paths]
        geoms = {
            (h.n_blocks, h.p, h.l_vec, h.h, h.w, h.c) for h in self.headers
        }
        if len(geoms) > 1:
            raise ValidationError("shards disagree on geometry; upload them in separate runs")
        self.total = sum(h.record_count for h in self.headers)
        self.header = self.headers[0] if self.headers else None

    def hello(self) -> HelloInfo:
        if self.header is None:
            return HelloInfo(0, 0, 0, 0, 0, 0, 0)
        h = self.header
        return HelloInfo(h.n_blocks, h.p, h.l_vec, h.h, h.w, h.c, self.total)

    def records_from(self, start: int):
        """Yield (index, encoded record bytes) for global indices >= start."""
        base = 0
        for path, header in zip(self.paths, self.headers):
            if start >= base + header.record_count:
                base += header.record_count
                continue
            rec_size = header.record_bytes
            local = max(start - base, 0)
            with open(path, "rb") as f:
                f.seek(SHARD_HEADER_BYTES + local * rec_size)
                for i in range(local, header.record_count):
                    yield base + i, f.read(rec_size)
            base += header.record_count


def upload(connect, shards, client_id: int, *, max_attempts: int = 8) -> TransferSummary:
    """Send every record in `shards` exactly once, riding out connection loss.

    `connect` is a zero-argument callable returning a fresh connection
    (loopback or TCP); it is invoked once per attempt.
    """
    if isinstance(shards, (str, Path)):
        shards = [shards]
    cursor = _ShardCursor(shards)
    hello_payload = encode_hello(cursor.hello())

    bytes_sent = 0
    records_sent = 0
    skipped = None
    attempts = 0
    last_error: Exception | None = None
    while attempts < max_attempts:
        attempts += 1
        try:
            conn = connect()
        except TransportError as exc:
            last_error = exc
            continue
        try:
            bytes_sent += send_frame(conn, Frame(MessageType.HELLO, client_id, 0, hello_payload))
            count, done = decode_count_reply(_expect(conn, MessageType.HELLO).payload)
            if skipped is None:
                skipped = count
            if done:
                return TransferSummary(
                    client_id, cursor.total, records_sent, skipped, bytes_sent, attempts, count, True
                )
            for index, blob in cursor.records_from(count):
                bytes_sent += send_frame(
                    conn, Frame(MessageType.UPLOAD_BATCH, client_id, index, blob)
                )
                records_sent += 1
            bytes_sent += send_frame(conn, Frame(MessageType.UPLOAD_DONE, client_id, 0))
            count, done = decode_count_reply(_expect(conn, MessageType.UPLOAD_DONE).payload)
            if not done or count != cursor.total:
                raise ProtocolError(
                    ErrorCode.BAD_STATE, f"server finished at {count}/{cursor.total} records"
                )
            return TransferSummary(
                client_id, cursor.total, records_sent, skipped, bytes_sent, attempts, count, True
            )
        except TransportError as exc:
            last_error = exc  # reconnect and resume from the server's count
        except ProtocolError as exc:
            if exc.code != ErrorCode.SESSION_ACTIVE:
                raise
            # the server has not yet noticed our dead connection; let it
            last_error = exc
            time.sleep(0.02 * attempts)
        finally:
            conn.close()
    raise TransportError(
        f"upload failed after {max_attempts} attempts: {last_error}"
    )


def fetch_model(connect, client_id: int, *, out_path=None) -> bytes:
    """Pull the model artifact and verify its digest before returning it."""
    conn = connect()
    try:
        send_frame(conn, Frame(MessageType.MODEL_REQUEST, client_id, 0))
        head = _expect(conn, MessageType.MODEL_CHUNK)
        if head.seq != 0:
            raise ProtocolError(ErrorCode.BAD_STATE, "model stream did not start with its header chunk")
        size, digest = decode_chunk_header(head.payload)
        parts = []
        got = 0
        next_seq = 1
        while got < size:
            chunk = _expect(conn, MessageType.MODEL_CHUNK)
            if chunk.seq != next_seq:
                raise ProtocolError(
                    ErrorCode.BAD_STATE, f"model chunk {chunk.seq} arrived, expected {next_seq}"
                )
            parts.append(chunk.payload)
            got += len(chunk.payload)
            next_seq += 1
        blob = b"".join(parts)
        if len(blob) != size:
            raise ProtocolError(ErrorCode.MALFORMED, f"model stream carried {len(blob)} of {size} bytes")
        actual = hashlib.sha256(blob).digest()
        if actual != digest:
            raise DigestMismatchError(
                f"model digest mismatch: announced {digest.hex()}, received {actual.hex()}"
            )
        if out_path is not None:
            Path(out_path).write_bytes(blob)
        return blob
    finally:
        conn.close()
