import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streaming_am.errors import NonFiniteError, ShapeError
from streaming_am.numerics import matmul
from streaming_am.quant import (
    QuantizedMatrix,
    matvec_error_bound,
    quantize_per_channel,
    quantized_matvec,
    round_half_away,
)


def test_zero_row_convention():
    q = quantize_per_channel(np.zeros((1, 3), np.float32))
    assert q.scale.tolist() == [1.0] and q.payload.tolist() == [[0, 0, 0]]
    assert q.zero_point.tolist() == [0]


def test_hand_computed_row():
    q = quantize_per_channel(np.array([[-1.0, 0.5, 1.0]], np.float32))
    assert q.scale[0] == np.float32(1 / 127)
    # 0.5 * 127 = 63.5 rounds away from zero
    assert q.payload.tolist() == [[-127, 64, 127]]


def test_round_half_away():
    assert round_half_away(np.array([0.5, -0.5, 1.5, -2.5, 2.4])).tolist() == [1, -1, 2, -3, 2]


def test_round_trip_bound(rng):
    w = (rng.standard_normal((16, 16)) * 3).astype(np.float32)
    q = quantize_per_channel(w)
    err = np.abs(q.dequantize() - w)
    assert np.all(err <= q.scale[:, None].astype(np.float64) / 2)
    assert np.all(np.abs(q.payload.astype(int)) <= 127)


def test_rejects_nonfinite():
    with pytest.raises(NonFiniteError):
        quantize_per_channel(np.array([[1.0, np.inf]], np.float32))


def test_scale_covariance(rng):
    w = rng.standard_normal((6, 9)).astype(np.float32)
    a, b = quantize_per_channel(w), quantize_per_channel(2 * w)
    np.testing.assert_array_equal(b.scale, 2 * a.scale)
    np.testing.assert_array_equal(a.payload, b.payload)


def test_exactly_representable_rows_match_float_path():
    # entries are 0 or +-absmax, so payload * scale reproduces them exactly
    w = np.array([[1, 0, 0, 0], [0, 2, 0, 0], [0, 0, -1, 1]], np.float32)
    q = quantize_per_channel(w)
    x = np.array([0.25, -1.5, 3.0, 2.0], np.float32)
    assert np.array_equal(quantized_matvec(q, x), matmul(x[None], w.T)[0])


def test_zero_input_gives_zero(rng):
    q = quantize_per_channel(rng.standard_normal((4, 5)).astype(np.float32))
    assert not quantized_matvec(q, np.zeros(5, np.float32)).any()


def test_random_matvec_within_analytic_bound(rng):
    for _ in range(100):
        w = rng.standard_normal((16, 16)).astype(np.float32)
        x = rng.uniform(-1, 1, 16).astype(np.float32)
        q = quantize_per_channel(w)
        got = quantized_matvec(q, x).astype(np.float64)
        ref = matmul(x[None], w.T)[0].astype(np.float64)
        assert np.all(np.abs(got - ref) <= matvec_error_bound(q, w, x))
        # the weight-rounding term dominates the bound
        assert np.all(np.abs(got - ref) <= np.abs(x).sum() * q.scale / 2 * 1.001)


def test_matvec_dimension_mismatch(rng):
    q = quantize_per_channel(rng.standard_normal((4, 5)).astype(np.float32))
    with pytest.raises(ShapeError):
        quantized_matvec(q, np.zeros(4, np.float32))


def test_quantized_matrix_validation():
    with pytest.raises(ShapeError):
        QuantizedMatrix(np.full((1, 2), -128, np.int8), np.ones(1, np.float32), np.zeros(1, np.int32))
    with pytest.raises(ShapeError):
        QuantizedMatrix(np.zeros((1, 2), np.int8), np.zeros(1, np.float32), np.zeros(1, np.int32))


def test_column_slice_keeps_row_scales(rng):
    w = rng.standard_normal((3, 6)).astype(np.float32)
    q = quantize_per_channel(w)
    s = q.column_slice(2, 5)
    assert s.shape == (3, 3) and np.array_equal(s.payload, q.payload[:, 2:5]) and s.scale is q.scale


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12), st.integers(1, 12), st.floats(1e-3, 1e3))
def test_round_trip_property(seed, rows, cols, magnitude):
    w = (np.random.default_rng(seed).standard_normal((rows, cols)) * magnitude).astype(np.float32)
    q = quantize_per_channel(w)
    assert np.all(np.abs(q.dequantize() - w) <= q.scale[:, None].astype(np.float64) / 2)
