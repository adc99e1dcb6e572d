"""Block-grid image encryption: scramble block order, then shuffle within blocks.

An image splits into N non-overlapping p-by-p blocks read row-major over the
block grid; each block flattens row-major with channels interleaved into a
length L = p*p*c vector.  Encryption reorders whole blocks with the key's
block permutation (output block i is input block seq(i)), then applies one
shared pixel permutation inside every block (the value at offset i moves to
offset seq(i)).  Both steps are value-preserving index moves, so decryption
is the exact inverse and bit-precise.

The flattening order is normative: split and merge must agree on it, and any
consistent choice yields an equivalent scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FingerprintMismatchError, ValidationError
from .perm_core import RestrictionSpec


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ImageTensor:
    """An h-by-w image with c interleaved uint8 channels (row-major)."""

    array: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.asarray(self.array)
        if a.ndim != 3:
            raise ValidationError(f"image array must be h*w*c, got shape {a.shape}")
        if a.dtype != np.uint8:
            raise ValidationError(f"image dtype must be uint8, got {a.dtype}")
        if min(a.shape) < 1:
            raise ValidationError(f"image dimensions must be positive, got {a.shape}")
        object.__setattr__(self, "array", _frozen(a.copy() if a.flags.writeable else a))

    @property
    def h(self) -> int:
        return self.array.shape[0]

    @property
    def w(self) -> int:
        return self.array.shape[1]

    @property
    def c(self) -> int:
        return self.array.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.array.shape


@dataclass(frozen=True)
class BlockSet:
    """N flattened blocks of L = p*p*c uint8 values each, in block-grid order."""

    blocks: np.ndarray = field(repr=False)
    p: int = 0

    def __post_init__(self):
        b = np.asarray(self.blocks)
        if b.ndim != 2 or b.dtype != np.uint8:
            raise ValidationError(f"blocks must be a 2-d uint8 array, got {b.shape} {b.dtype}")
        if self.p < 1:
            raise ValidationError(f"block size must be positive, got {self.p}")
        if b.shape[0] < 1:
            raise ValidationError("block set must contain at least one block")
        if b.shape[1] % (self.p * self.p) != 0:
            raise ValidationError(
                f"block vector length {b.shape[1]} is not a multiple of p*p={self.p * self.p}"
            )
        object.__setattr__(self, "blocks", _frozen(b.copy() if b.flags.writeable else b))

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[0]

    @property
    def l_vec(self) -> int:
        return self.blocks.shape[1]

    @property
    def channels(self) -> int:
        return self.l_vec // (self.p * self.p)


@dataclass(frozen=True)
class EncryptedImage:
    """Ciphertext image plus the key fingerprint and restriction specs used."""

    image: ImageTensor
    key_fingerprint: bytes
    spec_bs: RestrictionSpec
    spec_ps: RestrictionSpec

    def __post_init__(self):
        if len(self.key_fingerprint) != 16:
            raise ValidationError("key fingerprint must be 16 bytes")


def _split_raw(arr: np.ndarray, p: int) -> np.ndarray:
    h, w, c = arr.shape
    gh, gw = h // p, w // p
    return arr.reshape(gh, p, gw, p, c).transpose(0, 2, 1, 3, 4).reshape(gh * gw, p * p * c)


def _merge_raw(blocks: np.ndarray, h: int, w: int, c: int, p: int) -> np.ndarray:
    gh, gw = h // p, w // p
    return blocks.reshape(gh, gw, p, p, c).transpose(0, 2, 1, 3, 4).reshape(h, w, c)


def split_blocks(x: ImageTensor, p: int) -> BlockSet:
    """Divide an image into its p-by-p block grid; merge_blocks inverts exactly.

    Rejects non-divisible dimensions rather than padding: padding would
    silently change the block count, so callers resize first.
    """
    if p < 1:
        raise ValidationError(f"block size must be positive, got {p}")
    if x.h % p or x.w % p:
        raise ValidationError(f"block size {p} does not divide image dimensions {x.h}x{x.w}")
    return BlockSet(_split_raw(x.array, p), p)


def merge_blocks(b: BlockSet, h: int, w: int, c: int) -> ImageTensor:
    """Reassemble a block set into the image it was split from."""
    p = b.p
    if h % p or w % p:
        raise ValidationError(f"block size {p} does not divide target dimensions {h}x{w}")
    if b.n_blocks * b.l_vec != h * w * c or b.l_vec != p * p * c:
        raise ValidationError(
            f"{b.n_blocks} blocks of {b.l_vec} values cannot fill a {h}x{w}x{c} image"
        )
    if b.n_blocks != (h // p) * (w // p):
        raise ValidationError(f"{b.n_blocks} blocks do not tile a {h // p}x{w // p} grid")
    return ImageTensor(_merge_raw(b.blocks, h, w, c, p))


def _check_key_shapes(key, n_blocks: int, l_vec: int) -> None:
    if key.block_perm.n != n_blocks:
        raise ValidationError(
            f"key block permutation covers {key.block_perm.n} blocks, image has {n_blocks}"
        )
    if key.pixel_perm.n != l_vec:
        raise ValidationError(
            f"key pixel permutation covers {key.pixel_perm.n} values, blocks have {l_vec}"
        )


def encrypt(x: ImageTensor, key) -> EncryptedImage:
    """Scramble block order, then shuffle values inside every block.

    The block step runs first; because one pixel permutation is shared by
    all blocks the two steps commute, but the order is fixed for bit-exact
    reproducibility.  Output shape and value multiset equal the input's.
    """
    from .key_schedule import key_fingerprint  # local import to avoid a cycle

    if x.h % key.p or x.w % key.p:
        raise ValidationError(f"block size {key.p} does not divide image {x.h}x{x.w}")
    raw = _split_raw(x.array, key.p)
    _check_key_shapes(key, raw.shape[0], raw.shape[1])
    scrambled = raw[key.block_perm.zero_based()]
    out = np.empty_like(scrambled)
    out[:, key.pixel_perm.zero_based()] = scrambled
    img = ImageTensor(_merge_raw(out, x.h, x.w, x.c, key.p))
    return EncryptedImage(img, key_fingerprint(key), key.spec_bs, key.spec_ps)


def decrypt(e: EncryptedImage, key) -> ImageTensor:
    """Invert encrypt: un-shuffle pixels, then un-scramble blocks.

    The key must match the stored fingerprint; a mismatch signals a wrong
    key and is rejected instead of producing silent garbage.
    """
    from .key_schedule import key_fingerprint

    if key_fingerprint(key) != e.key_fingerprint:
        raise FingerprintMismatchError("key fingerprint does not match encrypted image")
    x = e.image
    raw = _split_raw(x.array, key.p)
    _check_key_shapes(key, raw.shape[0], raw.shape[1])
    unshuffled = raw[:, key.pixel_perm.zero_based()]
    orig = np.empty_like(unshuffled)
    orig[key.block_perm.zero_based()] = unshuffled
    return ImageTensor(_merge_raw(orig, x.h, x.w, x.c, key.p))
