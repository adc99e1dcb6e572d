"""Deterministic derivation of disposable per-image, per-epoch encryption keys.

Each key is expanded from a client-local 32-byte master secret and the
(client_id, image_id, epoch) triple through a keyed hash; the digest seeds
the permutation sampler.  The same context always reproduces the same key,
distinct contexts give statistically independent keys, and forgetting the
master secret makes every derived key unrecoverable - true disposability is
a throwaway secret.  Keys and master secrets never leave the client: the
only key-derived value that travels is a 16-byte one-way fingerprint.

Unpinned restriction specs have their fixed-position sets re-sampled per
key, from the same derived stream, so each image gets its own positions.
"""

from __future__ import annotations

import hashlib
import secrets
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError
from .perm_core import (
    Permutation,
    RestrictionSpec,
    deserialize_permutation,
    random_permutation,
    serialize_permutation,
)

MASTER_SECRET_BYTES = 32
FINGERPRINT_BYTES = 16

_KEY_FORMAT_VERSION = 1
_CACHE_MAGIC = b"PCKC"
_CACHE_VERSION = 1


@dataclass(frozen=True)
class EncryptionKey:
    """One image's key pair: a block-level and a pixel-level permutation."""

    p: int
    block_perm: Permutation
    pixel_perm: Permutation
    spec_bs: RestrictionSpec
    spec_ps: RestrictionSpec

    def __post_init__(self):
        if self.p < 1:
            raise ValidationError(f"block size must be positive, got {self.p}")
        if self.spec_bs.n != self.block_perm.n or self.spec_ps.n != self.pixel_perm.n:
            raise ValidationError("restriction spec domains do not match permutations")
        if self.pixel_perm.n % (self.p * self.p) != 0:
            raise ValidationError(
                f"pixel domain {self.pixel_perm.n} is not a multiple of p*p={self.p * self.p}"
            )
        for spec, perm, name in (
            (self.spec_bs, self.block_perm, "block"),
            (self.spec_ps, self.pixel_perm, "pixel"),
        ):
            if spec.fixed_positions is None:
                raise ValidationError(f"{name} spec must be pinned in a derived key")
            for i in spec.fixed_positions:
                if perm.seq[i - 1] != i:
                    raise ValidationError(f"{name} permutation does not fix position {i}")


@dataclass(frozen=True)
class KeyDerivationContext:
    """Client-local derivation inputs; the master secret never leaves the process."""

    master_secret: bytes = field(repr=False)
    client_id: int
    image_id: int
    epoch: int

    def __post_init__(self):
        if len(self.master_secret) != MASTER_SECRET_BYTES:
            raise ValidationError(f"master secret must be {MASTER_SECRET_BYTES} bytes")
        for name in ("client_id", "image_id", "epoch"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ValidationError(f"{name} must be a non-negative integer, got {v!r}")

    def __repr__(self):  # never echo the secret into logs or tracebacks
        return (
            f"KeyDerivationContext(master_secret=<{MASTER_SECRET_BYTES} bytes>, "
            f"client_id={self.client_id}, image_id={self.image_id}, epoch={self.epoch})"
        )


def random_master_secret() -> bytes:
    return secrets.token_bytes(MASTER_SECRET_BYTES)


def master_secret_from_seed(seed: int) -> bytes:
    """Expand a small integer seed into a full master secret (for replayable runs)."""
    if seed < 0:
        raise ValidationError("seed must be non-negative")
    return hashlib.blake2b(
        seed.to_bytes(16, "little"), person=b"pc.seed", digest_size=MASTER_SECRET_BYTES
    ).digest()


def derive_key(
    ctx: KeyDerivationContext,
    spec_bs: RestrictionSpec,
    spec_ps: RestrictionSpec,
    p: int,
) -> EncryptionKey:
    """Derive the (block, pixel) permutation pair for one image and epoch.

    Deterministic in (ctx, specs, p).  The pixel domain must be a whole
    number of p*p blocks; the block domain is checked against the image at
    encryption time.  Sampling order is fixed: block positions, block
    permutation, pixel positions, pixel permutation.
    """
    if p < 1:
        raise ValidationError(f"block size must be positive, got {p}")
    if spec_ps.n % (p * p) != 0:
        raise ValidationError(
            f"pixel domain {spec_ps.n} is not a multiple of p*p={p * p}"
        )
    digest = hashlib.blake2b(
        struct.pack("<QQQ", ctx.client_id, ctx.image_id, ctx.epoch),
        key=ctx.master_secret,
        person=b"pc.derive",
        digest_size=32,
    ).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    spec_bs = spec_bs.resolve(rng)
    block_perm = random_permutation(spec_bs, rng)
    spec_ps = spec_ps.resolve(rng)
    pixel_perm = random_permutation(spec_ps, rng)
    return EncryptionKey(p, block_perm, pixel_perm, spec_bs, spec_ps)


def _pack_spec(spec: RestrictionSpec) -> bytes:
    positions = sorted(spec.fixed_positions or ())
    return struct.pack(f"<IIB{len(positions)}I", spec.n, spec.n_fixed, 1, *positions)


def _unpack_spec(buf: bytes, offset: int) -> tuple[RestrictionSpec, int]:
    n, n_fixed, pinned = struct.unpack_from("<IIB", buf, offset)
    offset += 9
    if not pinned:
        return RestrictionSpec(n, n_fixed), offset
    positions = struct.unpack_from(f"<{n_fixed}I", buf, offset)
    return RestrictionSpec(n, n_fixed, frozenset(positions)), offset + 4 * n_fixed


def serialize_key(k: EncryptionKey) -> bytes:
    """Versioned binary form; client-local (cache and fingerprinting) only."""
    return b"".join(
        (
            struct.pack("<BH", _KEY_FORMAT_VERSION, k.p),
            _pack_spec(k.spec_bs),
            _pack_spec(k.spec_ps),
            serialize_permutation(k.block_perm),
            serialize_permutation(k.pixel_perm),
        )
    )


def deserialize_key(buf: bytes) -> EncryptionKey:
    try:
        version, p = struct.unpack_from("<BH", buf, 0)
        if version != _KEY_FORMAT_VERSION:
            raise FormatError(f"unsupported key format version {version}")
        offset = 3
        spec_bs, offset = _unpack_spec(buf, offset)
        spec_ps, offset = _unpack_spec(buf, offset)
        block_perm, offset = deserialize_permutation(buf, offset)
        pixel_perm, offset = deserialize_permutation(buf, offset)
        if offset != len(buf):
            raise FormatError(f"{len(buf) - offset} trailing bytes after key blob")
        return EncryptionKey(p, block_perm, pixel_perm, spec_bs, spec_ps)
    except (struct.error, ValidationError) as exc:
        # a damaged blob is a format problem no matter which layer notices
        raise FormatError(f"malformed key blob: {exc}") from exc


def key_fingerprint(k: EncryptionKey) -> bytes:
    """16-byte one-way digest of the key; safe to store beside ciphertext.

    Collision-resistant so decrypt can detect a wrong key, and preimage-
    resistant so the fingerprint reveals nothing about the permutations.
    """
    return hashlib.blake2b(
        serialize_key(k), person=b"pc.fprint", digest_size=FINGERPRINT_BYTES
    ).digest()


def plain_digest(payload: bytes) -> bytes:
    """16-byte digest of plaintext pixels, kept client-side for round-trip audits."""
    return hashlib.blake2b(payload, person=b"pc.plain", digest_size=FINGERPRINT_BYTES).digest()


@dataclass(frozen=True)
class KeyCacheEntry:
    """One cached key plus the plaintext digest recorded at encryption time.

    The digest is what lets a later round-trip audit prove bit-exact
    recovery without retaining the plaintext itself.
    """

    client_id: int
    image_id: int
    epoch: int
    key: EncryptionKey
    plain_digest: bytes

    @property
    def triple(self) -> tuple[int, int, int]:
        return (self.client_id, self.image_id, self.epoch)


def write_key_cache(path, entries) -> int:
    """Write a client-local key cache file; returns the entry count.

    This file must never travel: it contains full serialized keys.
    """
    entries = list(entries)
    with open(path, "wb") as f:
        f.write(_CACHE_MAGIC)
        f.write(struct.pack("<HQ", _CACHE_VERSION, len(entries)))
        for e in entries:
            blob = serialize_key(e.key)
            f.write(struct.pack("<IQI", e.client_id, e.image_id, e.epoch))
            f.write(e.plain_digest)
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
    return len(entries)


def read_key_cache(path) -> dict[tuple[int, int, int], KeyCacheEntry]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _CACHE_MAGIC:
        raise FormatError("not a key cache file (bad magic)", offset=0)
    version, count = struct.unpack_from("<HQ", data, 4)
    if version != _CACHE_VERSION:
        raise FormatError(f"unsupported key cache version {version}")
    offset = 14
    out: dict[tuple[int, int, int], KeyCacheEntry] = {}
    for i in range(count):
        try:
            client_id, image_id, epoch = struct.unpack_from("<IQI", data, offset)
            offset += 16
            digest = data[offset : offset + FINGERPRINT_BYTES]
            if len(digest) != FINGERPRINT_BYTES:
                raise FormatError("truncated cache entry", offset=offset, record=i)
            offset += FINGERPRINT_BYTES
            (blob_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            blob = data[offset : offset + blob_len]
            if len(blob) != blob_len:
                raise FormatError("truncated key blob", offset=offset, record=i)
            offset += blob_len
        except struct.error as exc:
            raise FormatError(f"truncated cache entry: {exc}", offset=offset, record=i) from exc
        entry = KeyCacheEntry(client_id, image_id, epoch, deserialize_key(blob), digest)
        out[entry.triple] = entry
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes in key cache", offset=offset)
    return out
