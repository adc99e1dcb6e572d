"""Disposable-key block-wise image encryption with one-shot collaborative sharing.

Pipeline: `perm_core` supplies the permutation algebra; `block_cipher`
scrambles block order and shuffles pixel values inside blocks;
`key_schedule` derives a throwaway key per (client, image, epoch);
`dataset_io` turns CIFAR-10 into encrypted PCED shards; `collab_proto`
moves shards to a collection server exactly once and brings the trained
model back; `embed_check` verifies the algebraic compatibility between the
cipher and patch-embedding transformers; `cli` ties it all together.
"""

from .block_cipher import (
    BlockSet,
    EncryptedImage,
    ImageTensor,
    decrypt,
    encrypt,
    merge_blocks,
    split_blocks,
)
from .collab_proto import (
    CollabServer,
    CostParams,
    CostReport,
    FaultPlan,
    LoopbackEndpoint,
    TcpEndpoint,
    TransferSummary,
    connect_tcp,
    cost_report,
    fetch_model,
    upload,
)
from .dataset_io import (
    EncryptResult,
    PlainDataset,
    ShardHeader,
    ShardRecord,
    ShardWriter,
    build_manifest,
    encrypt_dataset,
    export_png,
    import_png,
    ingest_cifar10,
    read_manifest,
    read_shard,
    read_shard_header,
    resize,
)
from .embed_check import (
    PatchEmbedding,
    PositionEmbedding,
    TokenSequence,
    VerificationReport,
    embed,
    verify_block_scramble_equivalence,
    verify_pixel_shuffle_absorption,
)
from .errors import (
    DigestMismatchError,
    FingerprintMismatchError,
    FormatError,
    PermCollabError,
    ProtocolError,
    TransportError,
    ValidationError,
)
from .key_schedule import (
    EncryptionKey,
    KeyDerivationContext,
    derive_key,
    key_fingerprint,
    master_secret_from_seed,
    random_master_secret,
    read_key_cache,
    serialize_key,
    write_key_cache,
)
from .perm_core import (
    Permutation,
    PermutationMatrix,
    RestrictionSpec,
    apply,
    fixed_points,
    from_matrix,
    inverse,
    keyspace_size,
    random_permutation,
    to_matrix,
)

__version__ = "1.0.0"

__all__ = [
    "BlockSet",
    "CollabServer",
    "CostParams",
    "CostReport",
    "DigestMismatchError",
    "EncryptResult",
    "EncryptedImage",
    "EncryptionKey",
    "FaultPlan",
    "FingerprintMismatchError",
    "FormatError",
    "ImageTensor",
    "KeyDerivationContext",
    "LoopbackEndpoint",
    "PatchEmbedding",
    "PermCollabError",
    "Permutation",
    "PermutationMatrix",
    "PlainDataset",
    "PositionEmbedding",
    "ProtocolError",
    "RestrictionSpec",
    "ShardHeader",
    "ShardRecord",
    "ShardWriter",
    "TcpEndpoint",
    "TokenSequence",
    "TransferSummary",
    "TransportError",
    "ValidationError",
    "VerificationReport",
    "apply",
    "build_manifest",
    "connect_tcp",
    "cost_report",
    "decrypt",
    "derive_key",
    "embed",
    "encrypt",
    "encrypt_dataset",
    "export_png",
    "fetch_model",
    "fixed_points",
    "from_matrix",
    "import_png",
    "ingest_cifar10",
    "inverse",
    "key_fingerprint",
    "keyspace_size",
    "master_secret_from_seed",
    "merge_blocks",
    "random_master_secret",
    "random_permutation",
    "read_key_cache",
    "read_manifest",
    "read_shard",
    "read_shard_header",
    "resize",
    "serialize_key",
    "split_blocks",
    "to_matrix",
    "upload",
    "verify_block_scramble_equivalence",
    "verify_pixel_shuffle_absorption",
    "write_key_cache",
]
