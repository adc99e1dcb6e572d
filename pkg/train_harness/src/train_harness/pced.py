"""Reader for the PCED shard and manifest interchange formats.

Implemented from the producer's published byte layout; the formats are the
whole contract between the two packages. All integers little-endian:

    header:  magic "PCED" | u16 version | u32 n_blocks | u16 p | u32 l_vec |
             u16 h | u16 w | u8 c | u64 record_count          (29 bytes)
    record:  u64 image_id | u32 client_id | u32 epoch | u16 label |
             u32 n_fixed_block | u32 n_fixed_pixel |
             16-byte key fingerprint | h*w*c payload bytes    (42 + payload)

Records carry no key material; the fingerprint is a one-way digest and is
irrelevant to training, so this reader keeps it only as opaque bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SHARD_MAGIC = b"PCED"
SHARD_VERSION = 1
MANIFEST_FORMAT = "pced-manifest"

_HEADER = struct.Struct("<4sHIHIHHBQ")


class FormatError(ValueError):
    """Damaged or foreign bytes where a documented format was expected."""


@dataclass(frozen=True)
class ShardHeader:
    n_blocks: int
    p: int
    l_vec: int
    h: int
    w: int
    c: int
    record_count: int

    @property
    def payload_bytes(self) -> int:
        return self.h * self.w * self.c

    @property
    def record_bytes(self) -> int:
        return 42 + self.payload_bytes


def read_header(data: bytes) -> ShardHeader:
    if len(data) < _HEADER.size:
        raise FormatError(f"shard header needs {_HEADER.size} bytes, file has {len(data)}")
    magic, version, n_blocks, p, l_vec, h, w, c, count = _HEADER.unpack_from(data, 0)
    if magic != SHARD_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {SHARD_MAGIC!r}")
    if version != SHARD_VERSION:
        raise FormatError(f"unsupported shard version {version}")
    header = ShardHeader(n_blocks, p, l_vec, h, w, c, count)
    # the redundant geometry fields must agree with each other
    if p == 0 or h % p or w % p or n_blocks != (h // p) * (w // p) or l_vec != p * p * c:
        raise FormatError(f"inconsistent geometry in header: {header}")
    return header


def record_dtype(payload_bytes: int) -> np.dtype:
    return np.dtype(
        [
            ("image_id", "<u8"),
            ("client_id", "<u4"),
            ("epoch", "<u4"),
            ("label", "<u2"),
            ("n_fixed_block", "<u4"),
            ("n_fixed_pixel", "<u4"),
            ("fingerprint", "V16"),
            ("payload", "u1", (payload_bytes,)),
        ]
    )


def read_shard(path) -> tuple[ShardHeader, np.ndarray]:
    """Parse one shard into its header and a structured record array."""
    data = Path(path).read_bytes()
    header = read_header(data)
    body = data[_HEADER.size :]
    expected = header.record_count * header.record_bytes
    if len(body) != expected:
        raise FormatError(
            f"{Path(path).name}: body is {len(body)} bytes, "
            f"expected {expected} for {header.record_count} records"
        )
    records = np.frombuffer(body, dtype=record_dtype(header.payload_bytes))
    return header, records


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def read_manifest(path) -> dict:
    try:
        manifest = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from exc
    if manifest.get("format") != MANIFEST_FORMAT:
        raise FormatError(f"not a {MANIFEST_FORMAT} document")
    for field in ("image", "shards", "total_records"):
        if field not in manifest:
            raise FormatError(f"manifest is missing {field!r}")
    return manifest
