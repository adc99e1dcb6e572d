"""Training harness for permutation-encrypted PCED image shards.

Consumes the producer's published interchange formats only (PCED shards and
JSON manifests); there is no code dependency on the encryption package.
"""

from .pced import FormatError, ShardHeader, file_sha256, read_manifest, read_shard
from .data import Corpus, ShardDataset, load_corpus, resolve_source
from .training import MetricsRecord, TrainConfig, evaluate, fine_tune

__all__ = [
    "Corpus",
    "FormatError",
    "MetricsRecord",
    "ShardDataset",
    "ShardHeader",
    "TrainConfig",
    "evaluate",
    "file_sha256",
    "fine_tune",
    "load_corpus",
    "read_manifest",
    "read_shard",
    "resolve_source",
]
