"""Central collection server: receives encrypted shards once, serves the model.

Per-connection state machine (documented transitions; anything else gets an
ERROR frame and the connection closes, other sessions unaffected):

    AWAIT_FIRST --HELLO--> UPLOADING        (new session, or reattach/resume)
    AWAIT_FIRST --MODEL_REQUEST--> stream MODEL_CHUNKs, close
    UPLOADING   --UPLOAD_BATCH--> UPLOADING (seq == count appends;
                                             seq < count is an idempotent retry)
    UPLOADING   --UPLOAD_DONE--> DONE       (only when count == planned)
    DONE        --MODEL_REQUEST--> stream MODEL_CHUNKs, close

A *logical* upload session is one per client_id for the life of the server;
reconnects attach to it and resume from the server's durable record count.
Shard appends and session bookkeeping go through a single commit lock, and
the combined manifest is sealed exactly once, after every expected client
has finished.  The server never sees key material: its entire persisted
state is the shard files plus the manifest.
"""

from __future__ import annotations

import hashlib
import logging
import threading
from dataclasses import dataclass
from pathlib import Path

from ..dataset_io import ShardWriter, build_manifest, decode_record, write_manifest
from ..errors import FormatError, PermCollabError, ProtocolError, TransportError
from .wire import (
    ErrorCode,
    Frame,
    HelloInfo,
    MessageType,
    decode_hello,
    encode_count_reply,
    encode_chunk_header,
    encode_error,
    read_frame,
    send_frame,
)

log = logging.getLogger("permcollab.collab")

DEFAULT_CHUNK_BYTES = 65536


@dataclass(frozen=True)
class SessionStats:
    client_id: int
    planned: int
    received: int
    done: bool
    n_connects: int


class _Session:
    def __init__(self, client_id: int, planned: int, writer: ShardWriter | None):
        self.client_id = client_id
        self.planned = planned
        self.writer = writer
        self.count = 0
        self.done = False
        self.attached = False
        self.n_connects = 0

    def stats(self) -> SessionStats:
        return SessionStats(self.client_id, self.planned, self.count, self.done, self.n_connects)


class _SessionError(Exception):
    """Internal signal: reply with an ERROR frame and drop the connection."""

    def __init__(self, code: ErrorCode, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


class CollabServer:
    """Accepts concurrent client sessions over any endpoint with accept()."""

    def __init__(
        self,
        endpoint,
        out_dir,
        expected_clients: int,
        *,
        model_path=None,
        chunk_bytes: int = DEFAULT_CHUNK_BYTES,
    ):
        if expected_clients < 1:
            raise ValueError("expected_clients must be >= 1")
        self.endpoint = endpoint
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.expected_clients = expected_clients
        self.model_path = Path(model_path) if model_path is not None else None
        self.chunk_bytes = chunk_bytes
        self.manifest_path = self.out_dir / "manifest.json"
        self._geometry: HelloInfo | None = None
        self._sessions: dict[int, _Session] = {}
        self._triples: set[tuple[int, int, int]] = set()
        self._commit = threading.Lock()
        self._sealed = threading.Event()
        self._threads: list[threading.Thread] = []
        self._live_conns: set = set()
        self._accept_thread: threading.Thread | None = None
        self._stopping = False
        self.total_connections = 0

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> "CollabServer":
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        return self

    def stop(self) -> None:
        self._stopping = True
        self.endpoint.close()
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=10)
        for conn in list(self._live_conns):
            conn.close()
        for t in self._threads:
            t.join(timeout=10)
        with self._commit:
            for s in self._sessions.values():
                if s.writer is not None:
                    s.writer.seal()  # idempotent; keeps partial shards readable

    def wait_sealed(self, timeout: float | None = None) -> bool:
        return self._sealed.wait(timeout)

    @property
    def sealed(self) -> bool:
        return self._sealed.is_set()

    def session_stats(self) -> dict[int, SessionStats]:
        with self._commit:
            return {cid: s.stats() for cid, s in self._sessions.items()}

    def shard_paths(self) -> list[Path]:
        with self._commit:
            return [s.writer.path for s in self._sessions.values() if s.writer is not None]

    # -- accept / dispatch ---------------------------------------------------

    def _accept_loop(self) -> None:
        while True:
            conn = self.endpoint.accept()
            if conn is None:
                return
            self.total_connections += 1
            self._live_conns.add(conn)
            t = threading.Thread(target=self._handle, args=(conn,), daemon=True)
            self._threads.append(t)
            t.start()

    def _handle(self, conn) -> None:
        session: _Session | None = None
        try:
            state = "AWAIT_FIRST"
            while True:
                frame = read_frame(conn)
                if frame is None:
                    return
                if state == "AWAIT_FIRST":
                    if frame.type is MessageType.HELLO:
                        session = self._attach(frame)
                        send_frame(
                            conn,
                            Frame(
                                MessageType.HELLO,
                                frame.client_id,
                                0,
                                encode_count_reply(session.count, session.done),
                            ),
                        )
                        state = "DONE" if session.done else "UPLOADING"
                    elif frame.type is MessageType.MODEL_REQUEST:
                        self._serve_model(conn, frame.client_id)
                        return
                    else:
                        raise _SessionError(
                            ErrorCode.BAD_STATE, f"{frame.type.name} before HELLO"
                        )
                elif state == "UPLOADING":
                    if frame.type is MessageType.UPLOAD_BATCH:
                        self._ingest(session, frame)
                    elif frame.type is MessageType.UPLOAD_DONE:
                        self._finish(session)
                        send_frame(
                            conn,
                            Frame(
                                MessageType.UPLOAD_DONE,
                                frame.client_id,
                                0,
                                encode_count_reply(session.count, session.done),
                            ),
                        )
                        state = "DONE"
                    else:
                        raise _SessionError(
                            ErrorCode.BAD_STATE, f"{frame.type.name} during upload"
                        )
                else:  # DONE
                    if frame.type is MessageType.MODEL_REQUEST:
                        self._serve_model(conn, frame.client_id)
                        return
                    raise _SessionError(
                        ErrorCode.BAD_STATE, f"{frame.type.name} after UPLOAD_DONE"
                    )
        except _SessionError as exc:
            self._send_error(conn, exc.code, exc.message)
        except ProtocolError as exc:
            self._send_error(conn, ErrorCode.MALFORMED, str(exc))
        except TransportError:
            pass  # peer vanished; session state stays resumable
        except PermCollabError as exc:
            self._send_error(conn, ErrorCode.INTERNAL, str(exc))
        finally:
            if session is not None:
                with self._commit:
                    session.attached = False
            conn.close()
            self._live_conns.discard(conn)

    def _send_error(self, conn, code: ErrorCode, message: str) -> None:
        log.warning("session error %s: %s", code.name, message)
        try:
            send_frame(conn, Frame(MessageType.ERROR, 0, 0, encode_error(code, message)))
        except TransportError:
            pass

    # -- upload path ---------------------------------------------------------

    def _attach(self, frame: Frame) -> _Session:
        info = decode_hello(frame.payload)
        with self._commit:
            session = self._sessions.get(frame.client_id)
            if session is not None:
                if session.attached:
                    raise _SessionError(
                        ErrorCode.SESSION_ACTIVE,
                        f"client {frame.client_id} already has a live connection",
                    )
                if session.planned != info.planned:
                    raise _SessionError(
                        ErrorCode.BAD_STATE,
                        f"planned count changed from {session.planned} to {info.planned}",
                    )
            else:
                writer = None
                if info.planned > 0:
                    self._check_geometry(info)
                    writer = ShardWriter(
                        self.out_dir / f"client-{frame.client_id:04d}.pced",
                        info.h,
                        info.w,
                        info.c,
                        info.p,
                    )
                session = _Session(frame.client_id, info.planned, writer)
                self._sessions[frame.client_id] = session
            if self._geometry is not None and info.planned > 0 and info.geometry != self._geometry.geometry:
                raise _SessionError(ErrorCode.GEOMETRY_MISMATCH, "shard geometry differs from this run's")
            session.attached = True
            session.n_connects += 1
            return session

    def _check_geometry(self, info: HelloInfo) -> None:
        if info.p == 0 or info.h % info.p or info.w % info.p:
            raise _SessionError(ErrorCode.GEOMETRY_MISMATCH, "block size does not tile the image")
        if info.n_blocks != (info.h // info.p) * (info.w // info.p) or info.l_vec != info.p * info.p * info.c:
            raise _SessionError(ErrorCode.GEOMETRY_MISMATCH, "n_blocks/l_vec inconsistent with image dims")
        if self._geometry is None:
            self._geometry = info
        elif info.geometry != self._geometry.geometry:
            raise _SessionError(ErrorCode.GEOMETRY_MISMATCH, "shard geometry differs from this run's")

    def _ingest(self, session: _Session, frame: Frame) -> None:
        if frame.client_id != session.client_id:
            raise _SessionError(ErrorCode.MALFORMED, "client_id changed mid-session")
        with self._commit:
            if session.done:
                raise _SessionError(ErrorCode.BAD_STATE, "record after UPLOAD_DONE")
            if frame.seq < session.count:
                return  # duplicate of a committed record: idempotent retry
            if frame.seq > session.count:
                raise _SessionError(
                    ErrorCode.BAD_STATE,
                    f"sequence gap: got {frame.seq}, expected {session.count}",
                )
            if session.count >= session.planned:
                raise _SessionError(ErrorCode.BAD_STATE, "more records than planned")
            try:
                rec = decode_record(
                    frame.payload, session.writer.header.payload_bytes, record_index=frame.seq
                )
            except FormatError as exc:
                raise _SessionError(ErrorCode.MALFORMED, str(exc)) from exc
            if rec.client_id != session.client_id:
                raise _SessionError(
                    ErrorCode.MALFORMED,
                    f"record claims client {rec.client_id} on client {session.client_id}'s session",
                )
            if rec.triple in self._triples:
                raise _SessionError(
                    ErrorCode.REPLAY, f"duplicate (client, image, epoch) {rec.triple}"
                )
            session.writer.append_bytes(frame.payload, record_index=frame.seq)
            self._triples.add(rec.triple)
            session.count += 1

    def _finish(self, session: _Session) -> None:
        with self._commit:
            if not session.done:
                if session.count != session.planned:
                    raise _SessionError(
                        ErrorCode.BAD_STATE,
                        f"UPLOAD_DONE at {session.count}/{session.planned} records",
                    )
                session.done = True
            done_count = sum(1 for s in self._sessions.values() if s.done)
            if done_count >= self.expected_clients and not self._sealed.is_set():
                self._seal()

    def _seal(self) -> None:
        # runs under the commit lock, exactly once
        paths = []
        for s in self._sessions.values():
            if s.writer is not None:
                s.writer.seal()
                paths.append(s.writer.path)
        manifest = build_manifest(paths)
        write_manifest(manifest, self.manifest_path)
        self._sealed.set()
        log.info("sealed manifest: %d records from %d clients",
                 manifest["total_records"], len(paths))

    # -- model path ----------------------------------------------------------

    def _serve_model(self, conn, client_id: int) -> None:
        if self.model_path is None or not self.model_path.exists():
            raise _SessionError(ErrorCode.NOT_READY, "no model artifact available")
        blob = self.model_path.read_bytes()
        digest = hashlib.sha256(blob).digest()
        send_frame(
            conn,
            Frame(MessageType.MODEL_CHUNK, client_id, 0, encode_chunk_header(len(blob), digest)),
        )
        seq = 1
        for off in range(0, len(blob), self.chunk_bytes):
            send_frame(
                conn,
                Frame(MessageType.MODEL_CHUNK, client_id, seq, blob[off : off + self.chunk_bytes]),
            )
            seq += 1
