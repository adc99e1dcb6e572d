"""Dataset ingestion, resizing, batch encryption, and the PCED interchange format.

PCED shard layout (all integers little-endian):

    header:  magic "PCED" | u16 version | u32 n_blocks | u16 p | u32 l_vec |
             u16 h | u16 w | u8 c | u64 record_count          (29 bytes)
    record:  u64 image_id | u32 client_id | u32 epoch | u16 label |
             u32 n_fixed_block | u32 n_fixed_pixel |
             16-byte key fingerprint | h*w*c payload bytes    (42 + payload)

Records never carry permutation data; the only key-derived field is the
one-way fingerprint.  The manifest is a JSON document listing shards with
digests, per-client record counts, and the restriction pairs in use.

Resizing is bilinear with half-pixel-aligned sample centers, edge clamping,
channel-independent weights, float64 accumulation, and round-half-to-even
back to uint8.  This exact recipe is normative: byte-identical shards
require byte-identical resampling.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .block_cipher import EncryptedImage, ImageTensor, encrypt
from .errors import FormatError, ValidationError
from .key_schedule import KeyCacheEntry, derive_key, plain_digest, write_key_cache
from .perm_core import RestrictionSpec

SHARD_MAGIC = b"PCED"
SHARD_VERSION = 1
_HEADER = struct.Struct("<4sHIHIHHBQ")
_RECORD_FIXED = struct.Struct("<QIIHII")
SHARD_HEADER_BYTES = _HEADER.size  # 29
RECORD_FIXED_BYTES = _RECORD_FIXED.size  # 26, before fingerprint and payload
FINGERPRINT_BYTES = 16

CIFAR_SIDE = 32
CIFAR_CHANNELS = 3
_CIFAR_RECORD = 1 + CIFAR_SIDE * CIFAR_SIDE * CIFAR_CHANNELS  # label byte + planar pixels
CIFAR_CLASSES = 10


@dataclass(frozen=True)
class PlainDataset:
    """Plaintext images with class labels."""

    images: tuple[ImageTensor, ...]
    labels: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "labels", tuple(int(v) for v in self.labels))
        if len(self.images) != len(self.labels):
            raise ValidationError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.images)


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
        return _RECORD_FIXED.size + FINGERPRINT_BYTES + self.payload_bytes


@dataclass(frozen=True)
class ShardRecord:
    image_id: int
    client_id: int
    epoch: int
    label: int
    nbs_fixed: int
    nps_fixed: int
    key_fingerprint: bytes
    payload: bytes

    def encode(self) -> bytes:
        return (
            _RECORD_FIXED.pack(
                self.image_id,
                self.client_id,
                self.epoch,
                self.label,
                self.nbs_fixed,
                self.nps_fixed,
            )
            + self.key_fingerprint
            + self.payload
        )

    @property
    def triple(self) -> tuple[int, int, int]:
        return (self.client_id, self.image_id, self.epoch)


def decode_record(buf: bytes, payload_bytes: int, *, record_index: int | None = None) -> ShardRecord:
    expected = _RECORD_FIXED.size + FINGERPRINT_BYTES + payload_bytes
    if len(buf) != expected:
        raise FormatError(
            f"record is {len(buf)} bytes, expected {expected}", record=record_index
        )
    image_id, client_id, epoch, label, nbs, nps = _RECORD_FIXED.unpack_from(buf, 0)
    off = _RECORD_FIXED.size
    fp = buf[off : off + FINGERPRINT_BYTES]
    return ShardRecord(image_id, client_id, epoch, label, nbs, nps, fp, buf[off + FINGERPRINT_BYTES :])


def record_to_encrypted_image(rec: ShardRecord, header: ShardHeader) -> EncryptedImage:
    """Rebuild the ciphertext image; restriction position sets are unknown by design."""
    arr = np.frombuffer(rec.payload, dtype=np.uint8).reshape(header.h, header.w, header.c)
    return EncryptedImage(
        ImageTensor(arr.copy()),
        rec.key_fingerprint,
        RestrictionSpec(header.n_blocks, rec.nbs_fixed),
        RestrictionSpec(header.l_vec, rec.nps_fixed),
    )


class ShardWriter:
    """Single-writer, append-only shard emitter; the header count is patched at seal."""

    def __init__(self, path, h: int, w: int, c: int, p: int):
        if h % p or w % p:
            raise ValidationError(f"block size {p} does not divide {h}x{w}")
        self.path = Path(path)
        self.header = ShardHeader((h // p) * (w // p), p, p * p * c, h, w, c, 0)
        self._count = 0
        self._f = open(self.path, "wb")
        self._f.write(_encode_header(self.header))

    def append(self, rec: ShardRecord) -> None:
        if len(rec.payload) != self.header.payload_bytes:
            raise ValidationError(
                f"payload is {len(rec.payload)} bytes, expected {self.header.payload_bytes}"
            )
        self._f.write(rec.encode())
        self._count += 1

    def append_bytes(self, buf: bytes, *, record_index: int | None = None) -> ShardRecord:
        rec = decode_record(buf, self.header.payload_bytes, record_index=record_index)
        self._f.write(buf)
        self._count += 1
        return rec

    @property
    def count(self) -> int:
        return self._count

    def seal(self) -> ShardHeader:
        if self._f.closed:
            return self.header
        header = ShardHeader(
            self.header.n_blocks,
            self.header.p,
            self.header.l_vec,
            self.header.h,
            self.header.w,
            self.header.c,
            self._count,
        )
        self._f.seek(0)
        self._f.write(_encode_header(header))
        self._f.close()
        self.header = header
        return header


def _encode_header(h: ShardHeader) -> bytes:
    return _HEADER.pack(
        SHARD_MAGIC, SHARD_VERSION, h.n_blocks, h.p, h.l_vec, h.h, h.w, h.c, h.record_count
    )


def read_shard_header(path) -> ShardHeader:
    with open(path, "rb") as f:
        raw = f.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise FormatError("shard too short for header", offset=len(raw))
    magic, version, n_blocks, p, l_vec, h, w, c, count = _HEADER.unpack(raw)
    if magic != SHARD_MAGIC:
        raise FormatError("not a PCED shard (bad magic)", offset=0)
    if version != SHARD_VERSION:
        raise FormatError(f"unsupported shard version {version}", offset=4)
    header = ShardHeader(n_blocks, p, l_vec, h, w, c, count)
    if header.l_vec != p * p * c or header.n_blocks != (h // p) * (w // p) or h % p or w % p:
        raise FormatError("inconsistent shard geometry in header", offset=0)
    return header


def read_shard(path) -> tuple[ShardHeader, list[ShardRecord]]:
    header = read_shard_header(path)
    records: list[ShardRecord] = []
    rec_size = header.record_bytes
    with open(path, "rb") as f:
        f.seek(_HEADER.size)
        for i in range(header.record_count):
            buf = f.read(rec_size)
            if len(buf) != rec_size:
                raise FormatError(
                    "shard truncated mid-record",
                    offset=_HEADER.size + i * rec_size + len(buf),
                    record=i,
                )
            records.append(decode_record(buf, header.payload_bytes, record_index=i))
        if f.read(1):
            raise FormatError(
                "trailing bytes after last record",
                offset=_HEADER.size + header.record_count * rec_size,
            )
    return header, records


def ingest_cifar10(path, split: str = "train") -> PlainDataset:
    """Read CIFAR-10 binary batches into interleaved-channel images.

    ``path`` may be a single ``.bin`` file or a directory laid out like the
    official binary archive (``data_batch_*.bin`` / ``test_batch.bin``,
    possibly under ``cifar-10-batches-bin/``).  Each record is one label
    byte followed by 3072 channel-planar pixel bytes.
    """
    p = Path(path)
    if p.is_dir():
        if (p / "cifar-10-batches-bin").is_dir():
            p = p / "cifar-10-batches-bin"
        if split == "train":
            files = sorted(p.glob("data_batch_*.bin"))
        elif split == "test":
            files = [p / "test_batch.bin"] if (p / "test_batch.bin").exists() else []
        else:
            raise ValidationError(f"unknown split {split!r}; expected 'train' or 'test'")
        if not files:
            raise FormatError(f"no CIFAR-10 {split} batches found under {p}")
    else:
        if not p.exists():
            raise FormatError(f"no such file: {p}")
        files = [p]

    images: list[ImageTensor] = []
    labels: list[int] = []
    base_index = 0
    for f in files:
        data = f.read_bytes()
        n, rem = divmod(len(data), _CIFAR_RECORD)
        if rem:
            raise FormatError(f"{f.name}: truncated CIFAR-10 file", offset=n * _CIFAR_RECORD)
        if n == 0:
            raise FormatError(f"{f.name}: empty CIFAR-10 file", offset=0)
        arr = np.frombuffer(data, dtype=np.uint8).reshape(n, _CIFAR_RECORD)
        batch_labels = arr[:, 0]
        bad = np.nonzero(batch_labels >= CIFAR_CLASSES)[0]
        if bad.size:
            raise FormatError(
                f"{f.name}: label {int(batch_labels[bad[0]])} out of range 0..9",
                record=base_index + int(bad[0]),
            )
        pixels = (
            arr[:, 1:]
            .reshape(n, CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE)
            .transpose(0, 2, 3, 1)
        )
        for i in range(n):
            images.append(ImageTensor(pixels[i].copy()))
            labels.append(int(batch_labels[i]))
        base_index += n
    return PlainDataset(tuple(images), tuple(labels))


def _resample_weights(src: int, dst: int) -> np.ndarray:
    """Dense dst-by-src bilinear weight matrix, half-pixel centers, edge clamp."""
    centers = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    lo = np.floor(centers).astype(np.int64)
    frac = centers - lo
    lo_c = np.clip(lo, 0, src - 1)
    hi_c = np.clip(lo + 1, 0, src - 1)
    w = np.zeros((dst, src), dtype=np.float64)
    rows = np.arange(dst)
    np.add.at(w, (rows, lo_c), 1.0 - frac)
    np.add.at(w, (rows, hi_c), frac)
    return w


def resize(x: ImageTensor, side: int) -> ImageTensor:
    """Bilinear resize to side-by-side, channel-independent; identity is bit-exact."""
    if side < 1:
        raise ValidationError(f"target side must be positive, got {side}")
    if x.h == side and x.w == side:
        return x
    wh = _resample_weights(x.h, side)
    ww = _resample_weights(x.w, side)
    channels_first = x.array.astype(np.float64).transpose(2, 0, 1)
    out = wh @ channels_first @ ww.T  # broadcast over channels
    out = np.clip(np.rint(out), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    return ImageTensor(out)


@dataclass(frozen=True)
class EncryptResult:
    shard_path: Path
    manifest_path: Path
    manifest: dict = field(repr=False)
    n_records: int = 0
    n_blocks: int = 0
    l_vec: int = 0


def encrypt_dataset(
    ds: PlainDataset,
    ctx_factory,
    spec_bs: RestrictionSpec,
    spec_ps: RestrictionSpec,
    p: int,
    *,
    out_dir,
    side: int = 224,
    epoch: int = 0,
    client_id: int = 0,
    keys_path=None,
) -> EncryptResult:
    """Resize, derive one disposable key per image, encrypt, and write a shard.

    ``ctx_factory(image_id)`` supplies the derivation context; every key is
    dropped as soon as its record is written unless ``keys_path`` asks for a
    client-local cache (which also stores a plaintext digest per image so a
    later audit can prove bit-exact recovery).
    """
    n_blocks = (side // p) ** 2
    l_vec = p * p * CIFAR_CHANNELS
    if side % p:
        raise ValidationError(f"block size {p} does not divide target side {side}")
    if spec_bs.n != n_blocks:
        raise ValidationError(f"block spec covers {spec_bs.n} blocks, pipeline produces {n_blocks}")
    if spec_ps.n != l_vec:
        raise ValidationError(f"pixel spec covers {spec_ps.n} values, blocks have {l_vec}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shard_path = out_dir / f"shard-c{client_id:04d}-e{epoch:04d}.pced"
    writer = ShardWriter(shard_path, side, side, CIFAR_CHANNELS, p)
    cache_entries: list[KeyCacheEntry] = []
    for image_id, (img, label) in enumerate(zip(ds.images, ds.labels)):
        if img.c != CIFAR_CHANNELS:
            raise ValidationError(f"image {image_id} has {img.c} channels, expected 3")
        resized = resize(img, side)
        ctx = ctx_factory(image_id)
        key = derive_key(ctx, spec_bs, spec_ps, p)
        enc = encrypt(resized, key)
        writer.append(
            ShardRecord(
                image_id=image_id,
                client_id=client_id,
                epoch=epoch,
                label=label,
                nbs_fixed=spec_bs.n_fixed,
                nps_fixed=spec_ps.n_fixed,
                key_fingerprint=enc.key_fingerprint,
                payload=enc.image.array.tobytes(),
            )
        )
        if keys_path is not None:
            cache_entries.append(
                KeyCacheEntry(
                    ctx.client_id, image_id, epoch, key, plain_digest(resized.array.tobytes())
                )
            )
        del key  # disposable: nothing below needs it
    writer.seal()
    if keys_path is not None:
        write_key_cache(keys_path, cache_entries)

    manifest = build_manifest([shard_path])
    manifest_path = out_dir / "manifest.json"
    write_manifest(manifest, manifest_path)
    return EncryptResult(shard_path, manifest_path, manifest, writer.count, n_blocks, l_vec)


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def build_manifest(shard_paths) -> dict:
    """Combined manifest over shards: digests, per-client counts, config pairs."""
    shards = []
    per_client: dict[int, int] = {}
    pairs: set[tuple[int, int]] = set()
    geometry: dict | None = None
    total = 0
    for path in sorted(Path(p) for p in shard_paths):
        header, records = read_shard(path)
        geo = {
            "h": header.h,
            "w": header.w,
            "c": header.c,
            "p": header.p,
            "n_blocks": header.n_blocks,
            "l_vec": header.l_vec,
        }
        if geometry is None:
            geometry = geo
        elif geometry != geo:
            raise ValidationError(f"{path.name}: shard geometry differs from other shards")
        clients: dict[int, int] = {}
        for rec in records:
            clients[rec.client_id] = clients.get(rec.client_id, 0) + 1
            per_client[rec.client_id] = per_client.get(rec.client_id, 0) + 1
            pairs.add((rec.nbs_fixed, rec.nps_fixed))
        shards.append(
            {
                "name": path.name,
                "sha256": file_sha256(path),
                "records": header.record_count,
                "clients": {str(k): v for k, v in sorted(clients.items())},
            }
        )
        total += header.record_count
    return {
        "format": "pced-manifest",
        "version": 1,
        "image": geometry,
        "shards": shards,
        "per_client_records": {str(k): v for k, v in sorted(per_client.items())},
        "encryption_configs": [list(pair) for pair in sorted(pairs)],
        "total_records": total,
    }


def write_manifest(manifest: dict, path) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    try:
        manifest = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from exc
    if manifest.get("format") != "pced-manifest":
        raise FormatError("not a PCED manifest")
    return manifest


def export_png(x: ImageTensor, path) -> None:
    """Lossless 8-bit PNG; grayscale for c=1, RGB for c=3."""
    if x.c == 1:
        img = Image.fromarray(x.array[:, :, 0], mode="L")
    elif x.c == 3:
        img = Image.fromarray(x.array, mode="RGB")
    else:
        raise ValidationError(f"cannot export {x.c}-channel image as PNG")
    img.save(path, format="PNG")


def import_png(path) -> ImageTensor:
    arr = np.asarray(Image.open(path))
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.dtype != np.uint8:
        raise FormatError(f"{path}: expected 8-bit PNG, got {arr.dtype}")
    return ImageTensor(arr.copy())
