"""Desk-scale checks that the encryption commutes with patch/position embedding.

The embedding front-end maps N flattened blocks through a linear L-by-D
patch projection, prepends a class token, and adds per-position vectors.
Two numeric identities make the encryption compatible with that interface:

* pixel shuffling is absorbable - projecting a shuffled block equals
  projecting the original block through a row-permuted projection matrix
  (associativity of the matrix product);
* block scrambling is exactly a token-order permutation - embedding a
  scrambled block set (position vectors added afterwards, class token
  untouched) equals permuting the plain patch tokens before adding the
  same position vectors.

Both identities are exact in real arithmetic; the verifiers compute the two
sides through independent code paths and report the max absolute deviation,
which is pure 64-bit rounding (tolerance 1e-9 by default).  Nothing here
claims anything about trained-model accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .block_cipher import BlockSet
from .errors import ValidationError
from .perm_core import Permutation, apply, to_matrix

DEFAULT_TOLERANCE = 1e-9


def _float_matrix(arr: np.ndarray, name: str, ndim: int = 2) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-dimensional, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValidationError(f"{name} contains non-finite values")
    a = a.copy()
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PatchEmbedding:
    """Linear projection from a flattened L-vector block to a D-vector token."""

    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "weights", _float_matrix(self.weights, "weights"))

    @property
    def l_vec(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class PositionEmbedding:
    """Per-token additive vectors; row 0 belongs to the class token."""

    rows: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "rows", _float_matrix(self.rows, "rows"))
        if self.rows.shape[0] < 2:
            raise ValidationError("position embedding needs a class row plus patch rows")

    @property
    def n_tokens(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class TokenSequence:
    """N+1 tokens of dimension D, class token first."""

    tokens: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", _float_matrix(self.tokens, "tokens"))

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def d(self) -> int:
        return self.tokens.shape[1]


@dataclass(frozen=True)
class VerificationReport:
    """Machine-readable outcome of one identity check."""

    identity: str
    n_blocks: int
    l_vec: int
    d: int
    max_deviation: float
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "identity": self.identity,
            "n_blocks": self.n_blocks,
            "l_vec": self.l_vec,
            "d": self.d,
            "max_deviation": self.max_deviation,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def _check_shapes(b: BlockSet, pe: PatchEmbedding) -> None:
    if b.l_vec != pe.l_vec:
        raise ValidationError(
            f"block vector length {b.l_vec} does not match projection input {pe.l_vec}"
        )


def embed(
    b: BlockSet,
    pe: PatchEmbedding,
    pos: PositionEmbedding,
    class_token: np.ndarray,
) -> TokenSequence:
    """Project blocks to tokens, prepend the class token, add position vectors."""
    _check_shapes(b, pe)
    cls = np.asarray(class_token, dtype=np.float64)
    if cls.shape != (pe.d,):
        raise ValidationError(f"class token must have shape ({pe.d},), got {cls.shape}")
    if pos.n_tokens != b.n_blocks + 1 or pos.d != pe.d:
        raise ValidationError(
            f"position embedding {pos.rows.shape} does not fit "
            f"{b.n_blocks} blocks of output dim {pe.d}"
        )
    patch_tokens = b.blocks.astype(np.float64) @ pe.weights
    tokens = np.vstack([cls[None, :], patch_tokens]) + pos.rows
    return TokenSequence(tokens)


def verify_pixel_shuffle_absorption(
    x: BlockSet,
    u: Permutation,
    pe: PatchEmbedding,
    tolerance: float = DEFAULT_TOLERANCE,
) -> VerificationReport:
    """Check that shuffling block values then projecting equals projecting
    through the row-permuted matrix, for every block.

    Left side: shuffle each block by index mapping, then multiply by the
    projection.  Right side: build the dense pixel-convention matrix, form
    its product with the projection by real matrix multiplication, and
    apply that to the unshuffled blocks.
    """
    _check_shapes(x, pe)
    if u.n != x.l_vec:
        raise ValidationError(f"pixel permutation covers {u.n} values, blocks have {x.l_vec}")
    blocks = x.blocks.astype(np.float64)
    shuffled = np.empty_like(blocks)
    for i in range(x.n_blocks):
        shuffled[i] = apply(u, blocks[i], "pixel")
    lhs = shuffled @ pe.weights
    permuted_projection = to_matrix(u, "pixel").entries.astype(np.float64) @ pe.weights
    rhs = blocks @ permuted_projection
    dev = float(np.abs(lhs - rhs).max())
    return VerificationReport(
        identity="pixel_shuffle_absorption",
        n_blocks=x.n_blocks,
        l_vec=x.l_vec,
        d=pe.d,
        max_deviation=dev,
        tolerance=tolerance,
        passed=dev <= tolerance,
    )


def verify_block_scramble_equivalence(
    x: BlockSet,
    l: Permutation,
    pe: PatchEmbedding,
    pos: PositionEmbedding,
    class_token: np.ndarray,
    tolerance: float = DEFAULT_TOLERANCE,
) -> VerificationReport:
    """Check that embedding scrambled blocks equals permuting plain patch
    tokens, position vectors added after the permutation on both sides.

    Left side: scramble the block set, then run the full embedding.  Right
    side: project the plain blocks, permute tokens 1..N by the same block
    mapping, prepend the untouched class token, then add position vectors.
    """
    if l.n != x.n_blocks:
        raise ValidationError(f"block permutation covers {l.n} blocks, set has {x.n_blocks}")
    scrambled = BlockSet(apply(l, x.blocks, "block"), x.p)
    lhs = embed(scrambled, pe, pos, class_token).tokens

    plain_tokens = x.blocks.astype(np.float64) @ pe.weights
    permuted = np.asarray(apply(l, plain_tokens, "block"))
    cls = np.asarray(class_token, dtype=np.float64)
    rhs = np.vstack([cls[None, :], permuted]) + pos.rows

    dev = float(np.abs(lhs - rhs).max())
    return VerificationReport(
        identity="block_scramble_equivalence",
        n_blocks=x.n_blocks,
        l_vec=x.l_vec,
        d=pe.d,
        max_deviation=dev,
        tolerance=tolerance,
        passed=dev <= tolerance,
    )
