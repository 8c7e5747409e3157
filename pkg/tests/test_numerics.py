import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reference as ref
from streaming_am.errors import ContractError, NonFiniteError, ShapeError
from streaming_am.numerics import (
    AttentionSpec,
    as_matrix,
    layer_norm,
    masked_softmax,
    matmul,
    multi_head_attention,
)


def test_matmul_identity(rng):
    b = rng.standard_normal((3, 5)).astype(np.float32)
    assert np.array_equal(matmul(np.eye(3, dtype=np.float32), b), b)


def test_matmul_hand_checked():
    a = np.array([[1, 2], [3, 4]], np.float32)
    assert matmul(a, np.ones((2, 1), np.float32)).tolist() == [[3], [7]]


@pytest.mark.parametrize("seed", range(5))
def test_matmul_equals_triple_loop_exactly(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((8, 8)).astype(np.float32)
    b = rng.standard_normal((8, 8)).astype(np.float32)
    assert np.array_equal(matmul(a, b), ref.matmul_loops(a, b))


def test_matmul_repeatable_and_row_independent(rng):
    a = rng.standard_normal((7, 33)).astype(np.float32)
    b = rng.standard_normal((33, 9)).astype(np.float32)
    full = matmul(a, b)
    assert np.array_equal(full, matmul(a, b))
    for i in range(7):
        assert np.array_equal(matmul(a[i : i + 1], b)[0], full[i])


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(np.zeros((2, 3), np.float32), np.zeros((2, 3), np.float32))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_matmul_oracle_random_shapes(n, k, m, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, k)).astype(np.float32)
    b = rng.standard_normal((k, m)).astype(np.float32)
    assert np.array_equal(matmul(a, b), ref.matmul_loops(a, b))


def test_as_matrix_rejects_nonfinite():
    with pytest.raises(NonFiniteError):
        as_matrix([[1.0, np.nan]])
    with pytest.raises(NonFiniteError):
        as_matrix([[np.inf]])


def test_layer_norm_constant_row_maps_to_bias():
    x = np.full((1, 4), 5.0, np.float32)
    out = layer_norm(x, np.ones(4, np.float32), np.zeros(4, np.float32))
    assert np.array_equal(out, np.zeros((1, 4), np.float32))


def test_layer_norm_symmetric_pair():
    out = layer_norm(np.array([[1, 3]], np.float32), np.ones(2, np.float32), np.zeros(2, np.float32), eps=0.0)
    np.testing.assert_allclose(out, [[-1, 1]], atol=1e-7)


def test_layer_norm_statistics(rng):
    x = rng.standard_normal((4, 6)).astype(np.float32) * 3 + 2
    out = layer_norm(x, np.ones(6, np.float32), np.zeros(6, np.float32))
    assert np.abs(out.mean(axis=1)).max() <= 1e-6
    assert np.abs(out.var(axis=1) - 1).max() <= 1e-4


def test_layer_norm_matches_oracle(rng):
    x = rng.standard_normal((3, 5)).astype(np.float32)
    g = rng.standard_normal(5).astype(np.float32)
    b = rng.standard_normal(5).astype(np.float32)
    np.testing.assert_allclose(layer_norm(x, g, b), ref.layer_norm(x, g, b), atol=1e-5)


def test_layer_norm_length_mismatch():
    with pytest.raises(ShapeError):
        layer_norm(np.zeros((2, 3), np.float32), np.ones(2, np.float32), np.zeros(3, np.float32))


@settings(max_examples=50, deadline=None)
@given(
    st.integers(0, 2**32 - 1),
    st.floats(0.5, 4.0),
    st.floats(-3.0, 3.0),
)
def test_layer_norm_per_row_affine_invariance(seed, c, d):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 8))
    # std-4 rows: eps only perturbs the result by ~eps/(2 var), well under 1e-5
    x = 4 * (x - x.mean(axis=1, keepdims=True)) / x.std(axis=1, keepdims=True)
    x = x.astype(np.float32)
    scale = np.array([[c], [1.0], [c * 0.5 + 0.75]], np.float32)  # per-row c > 0
    shift = np.array([[d], [-d], [0.5 * d]], np.float32)
    ones, zeros = np.ones(8, np.float32), np.zeros(8, np.float32)
    np.testing.assert_allclose(layer_norm(x * scale + shift, ones, zeros), layer_norm(x, ones, zeros), atol=1e-5)


def test_attention_single_key_returns_value(rng):
    q = rng.standard_normal((3, 4)).astype(np.float32)
    k = rng.standard_normal((1, 4)).astype(np.float32)
    v = rng.standard_normal((1, 4)).astype(np.float32)
    out = multi_head_attention(q, k, v, AttentionSpec(2, 2))
    np.testing.assert_allclose(out, np.repeat(v, 3, axis=0), rtol=1e-6)


def test_attention_identical_keys_average_values(rng):
    q = rng.standard_normal((2, 4)).astype(np.float32)
    k = np.repeat(rng.standard_normal((1, 4)).astype(np.float32), 2, axis=0)
    v = rng.standard_normal((2, 4)).astype(np.float32)
    out = multi_head_attention(q, k, v, AttentionSpec(1, 4))
    np.testing.assert_allclose(out, np.repeat(v.mean(axis=0, keepdims=True), 2, axis=0), rtol=1e-6)


def test_attention_hand_computed_2x2():
    q = np.array([[1.0, 0.0], [0.5, -1.0]], np.float32)
    k = np.array([[2.0, 1.0], [0.0, 1.0]], np.float32)
    v = np.array([[1.0, 2.0], [3.0, -1.0]], np.float32)
    # row 0 logits: [2, 0]/sqrt(2); row 1 logits: [0, -1]/sqrt(2)
    w0 = np.exp([2 / np.sqrt(2), 0.0])
    w0 /= w0.sum()
    w1 = np.exp([0.0, -1 / np.sqrt(2)])
    w1 /= w1.sum()
    expected = np.array([w0 @ v, w1 @ v])
    out = multi_head_attention(q, k, v, AttentionSpec(1, 2))
    np.testing.assert_allclose(out, expected, atol=1e-6)
    np.testing.assert_allclose(out, ref.attention(q, k, v, 1), atol=1e-6)


def test_attention_multihead_matches_oracle_with_mask(rng):
    q = rng.standard_normal((5, 8)).astype(np.float32)
    k = rng.standard_normal((6, 8)).astype(np.float32)
    v = rng.standard_normal((6, 8)).astype(np.float32)
    mask = rng.random((5, 6)) < 0.6
    mask[:, 0] = True
    out = multi_head_attention(q, k, v, AttentionSpec(4, 2, mask))
    np.testing.assert_allclose(out, ref.attention(q, k, v, 4, mask), atol=1e-6)


def test_attention_fully_masked_row_is_an_error(rng):
    q = rng.standard_normal((2, 4)).astype(np.float32)
    k = rng.standard_normal((3, 4)).astype(np.float32)
    mask = np.array([[True, False, False], [False, False, False]])
    with pytest.raises(ContractError):
        multi_head_attention(q, k, k, AttentionSpec(1, 4, mask))


def test_attention_shape_errors(rng):
    q = np.zeros((2, 4), np.float32)
    with pytest.raises(ShapeError):
        multi_head_attention(q, np.zeros((3, 4), np.float32), np.zeros((2, 4), np.float32), AttentionSpec(1, 4))
    with pytest.raises(ShapeError):
        multi_head_attention(q, q, q, AttentionSpec(2, 3))
    with pytest.raises(ShapeError):
        multi_head_attention(q, q, q, AttentionSpec(1, 4, np.ones((2, 3), bool)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 7))
def test_attention_permutation_invariance(seed, nq, nk):
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((nq, 4)).astype(np.float32)
    k = rng.standard_normal((nk, 4)).astype(np.float32)
    v = rng.standard_normal((nk, 4)).astype(np.float32)
    mask = rng.random((nq, nk)) < 0.7
    mask[np.arange(nq), rng.integers(0, nk, nq)] = True
    perm = rng.permutation(nk)
    a = multi_head_attention(q, k, v, AttentionSpec(2, 2, mask))
    b = multi_head_attention(q, k[perm], v[perm], AttentionSpec(2, 2, mask[:, perm]))
    np.testing.assert_allclose(a, b, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_softmax_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    scores = (rng.standard_normal((4, 9)) * 5).astype(np.float32)
    mask = rng.random((4, 9)) < 0.5
    mask[:, 3] = True
    p = masked_softmax(scores, mask)
    assert np.all(p[~mask] == 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
