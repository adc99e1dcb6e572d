import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import pytest

HEADER = struct.Struct("<4sHIHIHHBQ")
RECORD_FIXED = struct.Struct("<QIIHII")


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)


def write_shard(path, images, labels, *, p=4, client_id=1, epoch=0, nbs=0, nps=0,
                first_image_id=0):
    """Hand-assemble a shard from the documented byte layout."""
    images = np.asarray(images, dtype=np.uint8)
    n, h, w, c = images.shape
    parts = [HEADER.pack(b"PCED", 1, (h // p) * (w // p), p, p * p * c, h, w, c, n)]
    for i in range(n):
        parts.append(RECORD_FIXED.pack(first_image_id + i, client_id, epoch,
                                       int(labels[i]), nbs, nps))
        parts.append(hashlib.blake2b(images[i].tobytes(), digest_size=16).digest())
        parts.append(images[i].tobytes())
    data = b"".join(parts)
    Path(path).write_bytes(data)
    return data


def write_manifest(dir_path, shard_names, *, geometry, per_client=None, configs=((0, 0),)):
    dir_path = Path(dir_path)
    shards = []
    total = 0
    for name in shard_names:
        data = (dir_path / name).read_bytes()
        count = HEADER.unpack_from(data, 0)[8]
        client = RECORD_FIXED.unpack_from(data, HEADER.size)[1] if count else 0
        shards.append({
            "name": name,
            "sha256": hashlib.sha256(data).hexdigest(),
            "records": count,
            "clients": {str(client): count},
        })
        total += count
    manifest = {
        "format": "pced-manifest",
        "version": 1,
        "image": geometry,
        "shards": shards,
        "per_client_records": per_client or {},
        "encryption_configs": [list(pair) for pair in configs],
        "total_records": total,
    }
    path = dir_path / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def geometry(h=16, w=16, c=3, p=4):
    return {"h": h, "w": w, "c": c, "p": p,
            "n_blocks": (h // p) * (w // p), "l_vec": p * p * c}


def brightness_images(rng, n, h=16, w=16, c=3):
    """Two classes separated by mean brightness; survives any permutation."""
    labels = np.arange(n) % 2
    means = np.where(labels == 0, 64, 192)[:, None, None, None]
    images = np.clip(means + rng.integers(-40, 41, size=(n, h, w, c)), 0, 255)
    return images.astype(np.uint8), labels


def texture_images(rng, n, h=16, w=16, c=3, p=4):
    """Class 0: solid p-blocks; class 1: pixel checkerboard.

    Both classes are half bright, half dark, so their value histograms agree
    and nothing survives a whole-image value shuffle; plain, the difference
    is visible inside every single patch.
    """
    labels = np.arange(n) % 2
    bright, dark = 226, 30
    yy, xx = np.mgrid[0:h, 0:w]
    checker = ((yy + xx) % 2).astype(bool)
    images = np.empty((n, h, w, c), np.uint8)
    for i in range(n):
        if labels[i] == 0:
            gh, gw = h // p, w // p
            choice = (rng.permutation(gh * gw) % 2).astype(bool).reshape(gh, gw)
            grid = np.kron(choice, np.ones((p, p), dtype=bool))
        else:
            grid = checker if rng.integers(2) else ~checker
        images[i] = np.where(grid, bright, dark).astype(np.uint8)[..., None]
    noise = rng.integers(-8, 9, size=images.shape)
    return np.clip(images.astype(int) + noise, 0, 255).astype(np.uint8), labels


def shuffled_copy(rng, images):
    """Independent whole-image value shuffle per image (fresh key per image)."""
    out = np.empty_like(images)
    for i in range(len(images)):
        flat = images[i].reshape(-1)
        out[i] = flat[rng.permutation(flat.size)].reshape(images[i].shape)
    return out


def make_corpus(dir_path, images, labels, **shard_kwargs):
    """One shard + manifest under dir_path; returns the manifest path."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    name = "shard-0000.pced"
    write_shard(dir_path / name, images, labels, **shard_kwargs)
    h, w, c = images.shape[1:]
    p = shard_kwargs.get("p", 4)
    return write_manifest(dir_path, [name], geometry=geometry(h, w, c, p))
