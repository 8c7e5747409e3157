"""Per-channel (per-row) symmetric INT8 weight quantization.

Only weights are quantized; activations stay float32. Products of int8
payloads with float32 activations are accumulated in float64, which holds
every partial sum of an int8 x float32 product exactly enough that the only
material error left is weight rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, ShapeError
from .numerics import DTYPE, accumulate

QMAX = 127
DTYPE_TAG = "i8-perchan"


@dataclass(frozen=True, eq=False)
class QuantizedMatrix:
    payload: np.ndarray  # int8, (rows, cols)
    scale: np.ndarray  # float32, (rows,)
    zero_point: np.ndarray  # int32, (rows,)

    def __post_init__(self):
        if self.payload.dtype != np.int8 or self.payload.ndim != 2:
            raise ShapeError("payload must be a 2-D int8 array")
        if self.scale.shape != (self.rows,) or self.zero_point.shape != (self.rows,):
            raise ShapeError("scale/zero_point must have one entry per row")
        if np.any(np.abs(self.payload.astype(np.int16)) > QMAX):
            raise ShapeError("int8 payload outside [-127, 127]")
        if not np.all(self.scale > 0):
            raise ShapeError("per-row scales must be positive")

    @property
    def rows(self) -> int:
        return self.payload.shape[0]

    @property
    def cols(self) -> int:
        return self.payload.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.payload.shape

    def dequantize(self, dtype=np.float64) -> np.ndarray:
        # int8 x float32 products are exact in float64
        centered = self.payload.astype(np.float64) - self.zero_point[:, None]
        return (centered * self.scale.astype(np.float64)[:, None]).astype(dtype)

    def column_slice(self, start: int, stop: int) -> "QuantizedMatrix":
        return QuantizedMatrix(
            np.ascontiguousarray(self.payload[:, start:stop]), self.scale, self.zero_point
        )

    def matmul_t(self, x: np.ndarray) -> np.ndarray:
        """``x @ W.T`` for activations ``x`` of shape (frames, cols)."""
        if x.ndim != 2 or x.shape[1] != self.cols:
            raise ShapeError(f"quantized matmul: input {x.shape} vs weight {self.shape}")
        centered = self.payload.astype(np.float64) - self.zero_point[:, None]
        acc = accumulate(x.astype(np.float64), centered.T, np.float64)
        return (acc * self.scale.astype(np.float64)).astype(DTYPE)

    def __eq__(self, other):
        if not isinstance(other, QuantizedMatrix):
            return NotImplemented
        return (
            np.array_equal(self.payload, other.payload)
            and np.array_equal(self.scale, other.scale)
            and np.array_equal(self.zero_point, other.zero_point)
        )


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_per_channel(w: np.ndarray) -> QuantizedMatrix:
    w = np.asarray(w, dtype=DTYPE)
    if w.ndim != 2:
        raise ShapeError(f"expected a 2-D weight matrix, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise NonFiniteError("cannot quantize a matrix containing NaN or Inf")
    absmax = np.abs(w).max(axis=1) if w.shape[1] else np.zeros(w.shape[0], DTYPE)
    scale = np.where(absmax > 0, absmax / DTYPE(QMAX), DTYPE(1)).astype(DTYPE)
    q = round_half_away(w.astype(np.float64) / scale.astype(np.float64)[:, None])
    q = np.clip(q, -QMAX, QMAX).astype(np.int8)
    return QuantizedMatrix(q, scale, np.zeros(w.shape[0], dtype=np.int32))


def quantized_matvec(qw: QuantizedMatrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 1 or x.shape[0] != qw.cols:
        raise ShapeError(f"quantized matvec: vector of length {x.shape} vs weight {qw.shape}")
    return qw.matmul_t(x.reshape(1, -1))[0]


def matvec_error_bound(qw: QuantizedMatrix, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Per-output bound on ``|quantized_matvec(qw, x) - w @ x|`` (float32 path).

    The leading term is weight rounding, ``sum_j |x_j| * scale_i / 2``. The
    remaining terms cover float32 rounding in the reference accumulation
    (``n * u * sum_j |w_ij x_j|``, standard forward error) and the final
    float32 casts of both results.
    """
    x64 = np.abs(np.asarray(x, dtype=np.float64))
    w64 = np.abs(np.asarray(w, dtype=np.float64))
    scale = qw.scale.astype(np.float64)
    u = 2.0**-24
    n = qw.cols
    gamma = n * u / (1 - n * u)
    rounding = x64.sum() * scale / 2
    reference = gamma * (w64 @ x64)
    magnitude = (w64 @ x64) + rounding
    return rounding + reference + 2 * u * magnitude
