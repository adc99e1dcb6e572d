"""Manifest-driven corpus loading and the torch dataset over shard payloads.

The manifest is the provenance boundary: only shards it lists are opened,
and each file must hash to the digest recorded at sealing time. Training
therefore cannot silently read plain images that happen to sit nearby.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .pced import FormatError, file_sha256, read_manifest, read_shard


@dataclass(frozen=True)
class Corpus:
    images: np.ndarray  # (n, h, w, c) uint8, exactly the shard payload bytes
    labels: np.ndarray  # (n,) int64
    h: int
    w: int
    c: int
    manifest_sha256: str

    def __len__(self) -> int:
        return len(self.labels)


def load_corpus(manifest_path, *, num_classes: int) -> Corpus:
    """Load every record of every shard a manifest lists, digest-checked."""
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    geo = manifest["image"]
    images = []
    labels = []
    for entry in manifest["shards"]:
        shard_path = manifest_path.parent / entry["name"]
        if not shard_path.is_file():
            raise FormatError(f"manifest lists missing shard {entry['name']}")
        if file_sha256(shard_path) != entry["sha256"]:
            raise FormatError(f"{entry['name']}: content does not match manifest digest")
        header, records = read_shard(shard_path)
        for field in ("h", "w", "c", "p"):
            if getattr(header, field) != geo[field]:
                raise FormatError(
                    f"{entry['name']}: header {field}={getattr(header, field)} "
                    f"disagrees with manifest {field}={geo[field]}"
                )
        images.append(records["payload"].reshape(-1, header.h, header.w, header.c))
        labels.append(records["label"].astype(np.int64))
    image_arr = np.concatenate(images) if images else np.zeros((0, geo["h"], geo["w"], geo["c"]), np.uint8)
    label_arr = np.concatenate(labels) if labels else np.zeros((0,), np.int64)
    if len(label_arr) != manifest["total_records"]:
        raise FormatError(
            f"manifest promises {manifest['total_records']} records, shards hold {len(label_arr)}"
        )
    bad = label_arr[label_arr >= num_classes]
    if bad.size:
        raise FormatError(f"label {int(bad[0])} out of range for {num_classes} classes")
    return Corpus(image_arr, label_arr, geo["h"], geo["w"], geo["c"], file_sha256(manifest_path))


class ShardDataset(torch.utils.data.Dataset):
    """Shard payloads as normalized channels-first float tensors in [-1, 1]."""

    def __init__(self, corpus: Corpus):
        self.images = torch.from_numpy(np.ascontiguousarray(corpus.images))
        self.labels = torch.from_numpy(corpus.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int):
        x = self.images[i].permute(2, 0, 1).float().div_(255.0).sub_(0.5).div_(0.5)
        return x, self.labels[i]


def resolve_source(source, epochs: int) -> list[Path]:
    """Turn a training source into one manifest path per epoch.

    A manifest file is reused for every epoch. A directory must hold
    epoch-indexed subdirectories (epoch-0000, epoch-0001, ...), one per
    training epoch, each with its own manifest.json; per-image per-epoch
    keys mean every epoch sees a differently encrypted copy of the data.
    """
    source = Path(source)
    if source.is_file():
        return [source] * epochs
    if not source.is_dir():
        raise FileNotFoundError(f"training source {source} does not exist")
    manifests = sorted(source.glob("epoch-*/manifest.json"))
    if not manifests:
        raise FormatError(f"{source} has no epoch-*/manifest.json subdirectories")
    if len(manifests) < epochs:
        raise FormatError(f"{epochs} epochs requested but only {len(manifests)} epoch directories")
    return manifests[:epochs]


def combined_digest(manifest_paths) -> str:
    """Order-sensitive digest over the manifests one run consumed."""
    digest = hashlib.sha256()
    for path in manifest_paths:
        digest.update(bytes.fromhex(file_sha256(path)))
    return digest.hexdigest()
