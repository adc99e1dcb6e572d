import numpy as np
import pytest

from permcollab.block_cipher import BlockSet
from permcollab.embed_check import (
    DEFAULT_TOLERANCE,
    PatchEmbedding,
    PositionEmbedding,
    TokenSequence,
    embed,
    verify_block_scramble_equivalence,
    verify_pixel_shuffle_absorption,
)
from permcollab.errors import ValidationError
from permcollab.perm_core import Permutation, RestrictionSpec, random_permutation


def blockset(arr, p=1):
    return BlockSet(np.asarray(arr, dtype=np.uint8), p)


def naive_embed(blocks, weights, pos, cls):
    # definitional triple loop: token 0 is cls+pos[0], token i is x_i.E + pos[i]
    n = len(blocks)
    d = len(weights[0])
    out = [[cls[k] + pos[0][k] for k in range(d)]]
    for i in range(n):
        row = []
        for k in range(d):
            acc = pos[i + 1][k]
            for j in range(len(weights)):
                acc += blocks[i][j] * weights[j][k]
            row.append(acc)
        out.append(row)
    return out


# -- embed ---------------------------------------------------------------------


def test_embed_scalar_worked_example():
    # one block, one value: token = 3*2 + 1 = 7; class token = 5 + 4 = 9
    ts = embed(
        blockset([[3]]),
        PatchEmbedding([[2.0]]),
        PositionEmbedding([[4.0], [1.0]]),
        np.array([5.0]),
    )
    assert ts.tokens.tolist() == [[9.0], [7.0]]
    assert ts.n_tokens == 2 and ts.d == 1


def test_embed_zero_blocks_give_position_rows(rng):
    pos = rng.standard_normal((5, 3))
    cls = rng.standard_normal(3)
    ts = embed(
        blockset(np.zeros((4, 8), dtype=np.uint8), 2),
        PatchEmbedding(rng.standard_normal((8, 3))),
        PositionEmbedding(pos),
        cls,
    )
    expected = pos.copy()
    expected[0] += cls
    assert np.allclose(ts.tokens, expected, atol=0)


def test_embed_matches_triple_loop(rng):
    blocks = rng.integers(0, 256, size=(4, 12), dtype=np.uint8)
    weights = rng.standard_normal((12, 5))
    pos = rng.standard_normal((5, 5))
    cls = rng.standard_normal(5)
    ts = embed(blockset(blocks, 2), PatchEmbedding(weights), PositionEmbedding(pos), cls)
    ref = naive_embed(blocks.tolist(), weights.tolist(), pos.tolist(), cls.tolist())
    assert np.abs(ts.tokens - np.array(ref)).max() <= 1e-12


def test_embed_shape_validation(rng):
    b = blockset(rng.integers(0, 256, size=(4, 4), dtype=np.uint8), 2)
    pe = PatchEmbedding(rng.standard_normal((4, 3)))
    pos = PositionEmbedding(rng.standard_normal((5, 3)))
    cls = np.zeros(3)
    with pytest.raises(ValidationError):
        embed(b, PatchEmbedding(rng.standard_normal((5, 3))), pos, cls)
    with pytest.raises(ValidationError):
        embed(b, pe, PositionEmbedding(rng.standard_normal((4, 3))), cls)
    with pytest.raises(ValidationError):
        embed(b, pe, pos, np.zeros(2))


def test_component_validation():
    with pytest.raises(ValidationError):
        PatchEmbedding(np.array([np.inf]).reshape(1, 1))
    with pytest.raises(ValidationError):
        PositionEmbedding(np.zeros((1, 3)))  # class row alone is not enough
    with pytest.raises(ValidationError):
        TokenSequence(np.zeros(3))


# -- pixel shuffle absorption -----------------------------------------------------


def test_absorption_identity_permutation_is_exact(rng):
    b = blockset(rng.integers(0, 256, size=(4, 12), dtype=np.uint8), 2)
    r = verify_pixel_shuffle_absorption(b, Permutation.identity(12), PatchEmbedding(rng.standard_normal((12, 5))))
    assert r.passed and r.max_deviation == 0.0
    assert r.identity == "pixel_shuffle_absorption"
    assert r.n_blocks == 4 and r.l_vec == 12 and r.d == 5


def test_absorption_holds_for_random_instances(rng):
    for _ in range(50):
        n = int(rng.integers(1, 10))
        l_vec = 4 * int(rng.integers(1, 4))
        d = int(rng.integers(1, 8))
        b = blockset(rng.integers(0, 256, size=(n, l_vec), dtype=np.uint8), 2)
        u = random_permutation(RestrictionSpec(l_vec, 0), rng)
        r = verify_pixel_shuffle_absorption(b, u, PatchEmbedding(rng.standard_normal((l_vec, d))))
        assert r.passed, r.max_deviation
        assert r.max_deviation <= DEFAULT_TOLERANCE


def test_absorption_detects_a_lie(rng):
    # verifying with a *different* permutation on each side must fail: the
    # check has teeth, it is not trivially zero
    b = blockset(rng.integers(1, 256, size=(3, 8), dtype=np.uint8), 2)
    pe = PatchEmbedding(np.eye(8))
    u = Permutation((2, 1, 3, 4, 5, 6, 7, 8))
    lhs = verify_pixel_shuffle_absorption(b, u, pe)
    assert lhs.passed
    # simulate the lie by comparing shuffled blocks against the wrong matrix
    from permcollab.perm_core import apply, to_matrix

    wrong = to_matrix(Permutation((1, 2, 4, 3, 5, 6, 7, 8)), "pixel").entries @ np.eye(8)
    shuffled = np.stack([apply(u, row, "pixel") for row in b.blocks.astype(float)])
    assert np.abs(shuffled @ np.eye(8) - b.blocks @ wrong).max() > 1.0


def test_absorption_rejects_mismatched_domain(rng):
    b = blockset(rng.integers(0, 256, size=(2, 8), dtype=np.uint8), 2)
    with pytest.raises(ValidationError):
        verify_pixel_shuffle_absorption(b, Permutation.identity(4), PatchEmbedding(np.eye(8)))


# -- block scramble equivalence ------------------------------------------------------


def scramble_fixture(rng, n=4, l_vec=12, d=5):
    b = blockset(rng.integers(0, 256, size=(n, l_vec), dtype=np.uint8), 2)
    pe = PatchEmbedding(rng.standard_normal((l_vec, d)))
    pos = PositionEmbedding(rng.standard_normal((n + 1, d)))
    cls = rng.standard_normal(d)
    return b, pe, pos, cls


def test_scramble_equivalence_toy_case(rng):
    b, pe, pos, cls = scramble_fixture(rng)
    r = verify_block_scramble_equivalence(b, Permutation((2, 4, 1, 3)), pe, pos, cls)
    assert r.passed
    assert r.identity == "block_scramble_equivalence"
    assert r.max_deviation <= DEFAULT_TOLERANCE


def test_scramble_equivalence_random_instances(rng):
    for _ in range(50):
        n = int(rng.integers(1, 16))
        l_vec = 4 * int(rng.integers(1, 4))
        d = int(rng.integers(1, 8))
        b, pe, pos, cls = scramble_fixture(rng, n, l_vec, d)
        l = random_permutation(RestrictionSpec(n, 0), rng)
        r = verify_block_scramble_equivalence(b, l, pe, pos, cls)
        assert r.passed, r.max_deviation


def test_scramble_class_token_position_is_what_makes_it_work(rng):
    # adding positions before the permutation must break the identity
    b, pe, pos, cls = scramble_fixture(rng)
    l = Permutation((2, 4, 1, 3))
    scrambled = BlockSet(np.asarray(b.blocks)[l.zero_based()], b.p)
    lhs = embed(scrambled, pe, pos, cls).tokens
    early = b.blocks.astype(float) @ pe.weights + pos.rows[1:]
    wrong_rhs = np.vstack([(np.asarray(cls) + pos.rows[0])[None, :], early[l.zero_based()]])
    assert np.abs(lhs - wrong_rhs).max() > DEFAULT_TOLERANCE


def test_scramble_rejects_mismatched_domain(rng):
    b, pe, pos, cls = scramble_fixture(rng)
    with pytest.raises(ValidationError):
        verify_block_scramble_equivalence(b, Permutation.identity(3), pe, pos, cls)


def test_report_to_dict_round_trip(rng):
    b, pe, pos, cls = scramble_fixture(rng)
    r = verify_block_scramble_equivalence(b, Permutation((2, 4, 1, 3)), pe, pos, cls)
    d = r.to_dict()
    assert d["identity"] == "block_scramble_equivalence"
    assert d["passed"] is True
    assert set(d) == {"identity", "n_blocks", "l_vec", "d", "max_deviation", "tolerance", "passed"}
