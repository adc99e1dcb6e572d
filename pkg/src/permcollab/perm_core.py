"""Permutation algebra for block scrambling and pixel shuffling.

Permutations on {1..n} are stored as 1-based integer sequences; dense binary
matrices are a derived view, never the storage format.  Two matrix
conventions exist side by side because the block-level and pixel-level
operators are defined transposed to each other:

* ``"block"``  - entry (i, j) is 1 iff seq(j) = i.  Applying the matrix to
  the coordinate vector [1..n] (row vector times matrix) reproduces seq
  itself, so item i of the output is input item seq(i).
* ``"pixel"``  - entry (i, j) is 1 iff seq(i) = j.  Right-multiplying a row
  vector moves the value at position i to position seq(i).

Both conventions share the row-vector-times-matrix application semantics;
``apply`` implements the same index mapping without materializing matrices.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import ValidationError

Convention = Literal["block", "pixel"]

_CONVENTIONS = ("block", "pixel")


def _check_convention(convention: str) -> None:
    if convention not in _CONVENTIONS:
        raise ValidationError(f"unknown convention {convention!r}; expected 'block' or 'pixel'")


@dataclass(frozen=True)
class Permutation:
    """A bijection on {1..n}, stored as the 1-based sequence (seq(1), ..., seq(n))."""

    seq: tuple[int, ...]

    def __post_init__(self):
        n = len(self.seq)
        if n == 0:
            raise ValidationError("permutation domain must be non-empty")
        seen = [False] * (n + 1)
        for v in self.seq:
            if not isinstance(v, int) or not (1 <= v <= n):
                raise ValidationError(f"permutation value {v!r} outside 1..{n}")
            if seen[v]:
                raise ValidationError(f"duplicate value {v} in permutation")
            seen[v] = True

    @property
    def n(self) -> int:
        return len(self.seq)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(1, n + 1)))

    def zero_based(self) -> np.ndarray:
        """The sequence as a 0-based int64 index array (for vectorized use)."""
        return np.asarray(self.seq, dtype=np.int64) - 1


@dataclass(frozen=True)
class RestrictionSpec:
    """How many positions a sampled permutation must fix, and optionally which.

    ``fixed_positions=None`` leaves the position set unpinned: each sampling
    call chooses ``n_fixed`` positions uniformly without replacement.  A
    pinned spec carries the concrete 1-based position set.
    """

    n: int
    n_fixed: int
    fixed_positions: frozenset[int] | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError(f"domain size must be positive, got {self.n}")
        if not (0 <= self.n_fixed <= self.n):
            raise ValidationError(f"n_fixed {self.n_fixed} outside 0..{self.n}")
        if self.n_fixed == 0 and self.fixed_positions is None:
            object.__setattr__(self, "fixed_positions", frozenset())
        if self.n_fixed == self.n and self.fixed_positions is None:
            object.__setattr__(self, "fixed_positions", frozenset(range(1, self.n + 1)))
        pos = self.fixed_positions
        if pos is not None:
            if not isinstance(pos, frozenset):
                object.__setattr__(self, "fixed_positions", frozenset(pos))
                pos = self.fixed_positions
            if len(pos) != self.n_fixed:
                raise ValidationError(
                    f"{len(pos)} fixed positions given but n_fixed={self.n_fixed}"
                )
            for i in pos:
                if not (1 <= i <= self.n):
                    raise ValidationError(f"fixed position {i} outside 1..{self.n}")

    @property
    def pinned(self) -> bool:
        return self.fixed_positions is not None

    def resolve(self, rng: np.random.Generator) -> "RestrictionSpec":
        """Pin the position set, sampling it uniformly if not already pinned."""
        if self.pinned:
            return self
        chosen = rng.choice(self.n, size=self.n_fixed, replace=False)
        return RestrictionSpec(self.n, self.n_fixed, frozenset(int(i) + 1 for i in chosen))


@dataclass(frozen=True)
class PermutationMatrix:
    """Dense n-by-n binary matrix with exactly one 1 per row and per column."""

    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.entries)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise ValidationError(f"permutation matrix must be square, got shape {m.shape}")
        if not np.isin(m, (0, 1)).all():
            raise ValidationError("permutation matrix entries must be 0 or 1")
        m = m.astype(np.uint8, copy=True)
        if (m.sum(axis=0) != 1).any() or (m.sum(axis=1) != 1).any():
            raise ValidationError("permutation matrix needs exactly one 1 per row and column")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def random_permutation(spec: RestrictionSpec, rng: np.random.Generator) -> Permutation:
    """Sample a permutation fixing ``spec.fixed_positions`` exactly as given.

    The restriction to the non-fixed positions is uniform over all
    permutations of those positions; extra fixed points may still occur
    there by chance (no derangement constraint).  Unpinned specs have their
    position set sampled first, from the same generator.
    """
    spec = spec.resolve(rng)
    assert spec.fixed_positions is not None
    seq = np.arange(1, spec.n + 1, dtype=np.int64)
    free = np.setdiff1d(seq, np.fromiter(spec.fixed_positions, dtype=np.int64, count=spec.n_fixed))
    if free.size:
        seq[free - 1] = free[rng.permutation(free.size)]
    return Permutation(tuple(int(v) for v in seq))


def to_matrix(p: Permutation, convention: Convention) -> PermutationMatrix:
    """Materialize the dense binary matrix of ``p`` under the given convention."""
    _check_convention(convention)
    m = np.zeros((p.n, p.n), dtype=np.uint8)
    idx = p.zero_based()
    if convention == "block":
        m[idx, np.arange(p.n)] = 1  # column j carries its 1 in row seq(j)
    else:
        m[np.arange(p.n), idx] = 1  # row i carries its 1 in column seq(i)
    return PermutationMatrix(m)


def from_matrix(m: PermutationMatrix, convention: Convention) -> Permutation:
    """Read the integer sequence back out of a dense permutation matrix."""
    _check_convention(convention)
    entries = m.entries
    if convention == "block":
        rows = entries.argmax(axis=0)  # seq(j) = row of the 1 in column j
        return Permutation(tuple(int(r) + 1 for r in rows))
    cols = entries.argmax(axis=1)  # seq(i) = column of the 1 in row i
    return Permutation(tuple(int(c) + 1 for c in cols))


def apply(p: Permutation, xs: Sequence, convention: Convention):
    """Permute a sequence of ``p.n`` items.

    Block convention: output item i is input item seq(i) (gather).
    Pixel convention: input item i lands at output position seq(i) (scatter);
    this is right-multiplication of a row vector by the pixel-convention
    matrix.  ndarray input permutes along axis 0 and returns an ndarray;
    any other sequence returns a list.
    """
    _check_convention(convention)
    if len(xs) != p.n:
        raise ValidationError(f"sequence length {len(xs)} does not match domain size {p.n}")
    idx = p.zero_based()
    if convention == "pixel":
        idx = np.argsort(idx)  # scatter via the inverse gather
    if isinstance(xs, np.ndarray):
        return xs[idx]
    return [xs[i] for i in idx]


def inverse(p: Permutation) -> Permutation:
    """The unique q with q(p(i)) = i; its matrix is the transpose of p's."""
    inv = [0] * p.n
    for i, v in enumerate(p.seq):
        inv[v - 1] = i + 1
    return Permutation(tuple(inv))


def fixed_points(p: Permutation) -> frozenset[int]:
    """1-based indices i with seq(i) = i."""
    return frozenset(i + 1 for i, v in enumerate(p.seq) if v == i + 1)


def keyspace_size(spec: RestrictionSpec) -> int:
    """Number of distinct permutations producible for one fixed-position set."""
    return math.factorial(spec.n - spec.n_fixed)


def serialize_permutation(p: Permutation) -> bytes:
    """Length-prefixed u32-LE form: n, then seq(1..n).  Client-local only."""
    return struct.pack(f"<I{p.n}I", p.n, *p.seq)


def deserialize_permutation(buf: bytes, offset: int = 0) -> tuple[Permutation, int]:
    """Decode one serialized permutation; returns (permutation, next offset)."""
    if len(buf) - offset < 4:
        raise ValidationError("truncated permutation: missing length prefix")
    (n,) = struct.unpack_from("<I", buf, offset)
    end = offset + 4 + 4 * n
    if len(buf) < end:
        raise ValidationError(f"truncated permutation: expected {n} values")
    seq = struct.unpack_from(f"<{n}I", buf, offset + 4)
    return Permutation(tuple(int(v) for v in seq)), end
