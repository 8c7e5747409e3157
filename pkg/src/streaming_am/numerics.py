"""Dense float32 kernels the encoders are built from.

Every product in this module is accumulated in a fixed k order, one rank-1
update at a time. That makes each output row a function of its own input row
only, so a frame produces bit-identical results whether it is processed
alone, in a chunk, or as part of a whole utterance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import ContractError, NonFiniteError, ShapeError

DTYPE = np.float32
LN_EPS = 1e-5


def as_matrix(data: Any, *, name: str = "matrix") -> np.ndarray:
    """Validate external input as a finite 2-D float32 matrix."""
    arr = np.asarray(data, dtype=DTYPE)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name}: contains NaN or Inf")
    return np.ascontiguousarray(arr)


def accumulate(a: np.ndarray, b: np.ndarray, dtype=DTYPE) -> np.ndarray:
    """Row-major ``a @ b`` via sequential rank-1 updates in ``dtype``."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    a = a.astype(dtype, copy=False)
    b = np.ascontiguousarray(b, dtype=dtype)
    out = np.zeros((a.shape[0], b.shape[1]), dtype=dtype)
    if a.shape[0] == 0 or b.shape[1] == 0:
        return out
    tmp = np.empty_like(out)
    for k in range(a.shape[1]):
        np.multiply(a[:, k : k + 1], b[k], out=tmp)
        out += tmp
    return out


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return accumulate(a, b, DTYPE)


def linear(x: np.ndarray, weight: Any, bias: np.ndarray | None = None) -> np.ndarray:
    """``x @ weight.T + bias`` for a float weight of shape (out, in).

    Quantized weights provide their own ``matmul_t`` and are dispatched to it.
    """
    if isinstance(weight, np.ndarray):
        if x.shape[-1] != weight.shape[1]:
            raise ShapeError(f"linear: input dim {x.shape[-1]} != weight in-dim {weight.shape[1]}")
        y = matmul(x, weight.T)
    else:
        y = weight.matmul_t(x)
    if bias is not None:
        y = y + bias
    return y


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    if gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError(
            f"layer_norm: gain/bias lengths {gain.shape}/{bias.shape} do not match {x.shape[1]} features"
        )
    mean = x.mean(axis=1, keepdims=True, dtype=DTYPE)
    centered = x - mean
    var = (centered * centered).mean(axis=1, keepdims=True, dtype=DTYPE)
    return (centered / np.sqrt(var + DTYPE(eps))) * gain + bias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, DTYPE(0))


def sigmoid(x: np.ndarray) -> np.ndarray:
    return (DTYPE(1) / (DTYPE(1) + np.exp(-x))).astype(DTYPE, copy=False)


def masked_softmax(scores: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Row softmax; ``mask`` (True = attend) is applied as additive -inf."""
    if mask is not None:
        if not np.all(mask.any(axis=1)):
            rows = np.flatnonzero(~mask.any(axis=1))
            raise ContractError(f"fully masked query rows: {rows.tolist()}")
        scores = np.where(mask, scores, DTYPE(-np.inf))
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class AttentionSpec:
    num_heads: int
    head_dim: int
    mask: np.ndarray | None = None

    @property
    def model_dim(self) -> int:
        return self.num_heads * self.head_dim


def multi_head_attention(
    q_in: np.ndarray, k_in: np.ndarray, v_in: np.ndarray, spec: AttentionSpec
) -> np.ndarray:
    """Scaled dot-product attention over already-projected queries/keys/values.

    Splits the feature axis into ``spec.num_heads`` heads, scales logits by
    1/sqrt(head_dim), applies the optional mask and concatenates the heads.
    """
    d = spec.model_dim
    for name, m in (("query", q_in), ("key", k_in), ("value", v_in)):
        if m.ndim != 2 or m.shape[1] != d:
            raise ShapeError(f"attention {name} must have {d} columns, got shape {m.shape}")
    if k_in.shape[0] != v_in.shape[0]:
        raise ShapeError(f"attention key rows {k_in.shape[0]} != value rows {v_in.shape[0]}")
    mask = spec.mask
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (q_in.shape[0], k_in.shape[0]):
            raise ShapeError(f"mask shape {mask.shape} != ({q_in.shape[0]}, {k_in.shape[0]})")
    if k_in.shape[0] == 0 and q_in.shape[0] > 0:
        raise ContractError("attention over an empty key set")

    scale = DTYPE(1.0 / math.sqrt(spec.head_dim))
    out = np.empty((q_in.shape[0], d), dtype=DTYPE)
    for h in range(spec.num_heads):
        cols = slice(h * spec.head_dim, (h + 1) * spec.head_dim)
        logits = matmul(q_in[:, cols], k_in[:, cols].T) * scale
        probs = masked_softmax(logits, mask)
        out[:, cols] = matmul(probs, v_in[:, cols])
    return out
