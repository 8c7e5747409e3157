"""Pre-norm transformer layers and the masked offline replay of Emformer.

A layer computes

    Z = Attn(Wq LN1(X), Wk LN1(X), Wv LN1(X)) Wo + X
    X' = FFN(LN2(Z)) + Z

and a stack applies one more LayerNorm after its last layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import DTYPE, AttentionSpec, layer_norm, linear, multi_head_attention, relu

if TYPE_CHECKING:
    from .emformer import EmformerConfig


@dataclass(frozen=True, eq=False)
class TransformerLayerWeights:
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray

    def __post_init__(self):
        d = self.model_dim
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).shape != (d, d):
                raise ShapeError(f"{name} must be {d}x{d}, got {getattr(self, name).shape}")
        f = self.fc1_w.shape[0]
        if self.fc1_w.shape != (f, d) or self.fc2_w.shape != (d, f):
            raise ShapeError(f"FFN shapes {self.fc1_w.shape}/{self.fc2_w.shape} inconsistent with dim {d}")

    @property
    def model_dim(self) -> int:
        return self.wq.shape[0]

    # name suffix -> field
    FIELDS = {
        "attn.q.weight": "wq", "attn.q.bias": "bq",
        "attn.k.weight": "wk", "attn.k.bias": "bk",
        "attn.v.weight": "wv", "attn.v.bias": "bv",
        "attn.out.weight": "wo", "attn.out.bias": "bo",
        "ln1.gain": "ln1_gain", "ln1.bias": "ln1_bias",
        "ln2.gain": "ln2_gain", "ln2.bias": "ln2_bias",
        "ffn.fc1.weight": "fc1_w", "ffn.fc1.bias": "fc1_b",
        "ffn.fc2.weight": "fc2_w", "ffn.fc2.bias": "fc2_b",
    }  # fmt: skip

    @classmethod
    def from_weights(cls, weights, prefix: str) -> "TransformerLayerWeights":
        return cls(**{field: weights[f"{prefix}.{suffix}"] for suffix, field in cls.FIELDS.items()})

    @staticmethod
    def tensor_shapes(prefix: str, d: int, ffn: int) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for p in ("q", "k", "v", "out"):
            shapes[f"{prefix}.attn.{p}.weight"] = (d, d)
            shapes[f"{prefix}.attn.{p}.bias"] = (d,)
        for p in ("ln1", "ln2"):
            shapes[f"{prefix}.{p}.gain"] = (d,)
            shapes[f"{prefix}.{p}.bias"] = (d,)
        shapes[f"{prefix}.ffn.fc1.weight"] = (ffn, d)
        shapes[f"{prefix}.ffn.fc1.bias"] = (ffn,)
        shapes[f"{prefix}.ffn.fc2.weight"] = (d, ffn)
        shapes[f"{prefix}.ffn.fc2.bias"] = (d,)
        return shapes

    # building blocks shared with the streaming encoders

    def norm_attn(self, x: np.ndarray) -> np.ndarray:
        return layer_norm(x, self.ln1_gain, self.ln1_bias)

    def query(self, xhat: np.ndarray) -> np.ndarray:
        return linear(xhat, self.wq, self.bq)

    def key(self, xhat: np.ndarray) -> np.ndarray:
        return linear(xhat, self.wk, self.bk)

    def value(self, xhat: np.ndarray) -> np.ndarray:
        return linear(xhat, self.wv, self.bv)

    def attend(self, q: np.ndarray, k: np.ndarray, v: np.ndarray, num_heads: int, mask=None) -> np.ndarray:
        """Attention followed by the output projection."""
        spec = AttentionSpec(num_heads, self.model_dim // num_heads, mask)
        return linear(multi_head_attention(q, k, v, spec), self.wo, self.bo)

    def ffn_block(self, z: np.ndarray) -> np.ndarray:
        h = relu(linear(layer_norm(z, self.ln2_gain, self.ln2_bias), self.fc1_w, self.fc1_b))
        return linear(h, self.fc2_w, self.fc2_b) + z


@dataclass(frozen=True, eq=False)
class TransformerStackWeights:
    layers: tuple[TransformerLayerWeights, ...]
    final_gain: np.ndarray
    final_bias: np.ndarray

    @property
    def model_dim(self) -> int:
        return self.final_gain.shape[0]

    @classmethod
    def from_weights(cls, weights, num_layers: int, prefix: str = "") -> "TransformerStackWeights":
        layers = tuple(TransformerLayerWeights.from_weights(weights, f"{prefix}layers.{n}") for n in range(num_layers))
        return cls(layers, weights[f"{prefix}final_ln.gain"], weights[f"{prefix}final_ln.bias"])

    @staticmethod
    def tensor_shapes(num_layers: int, d: int, ffn: int, prefix: str = "") -> dict[str, tuple[int, ...]]:
        shapes = {}
        for n in range(num_layers):
            shapes.update(TransformerLayerWeights.tensor_shapes(f"{prefix}layers.{n}", d, ffn))
        shapes[f"{prefix}final_ln.gain"] = (d,)
        shapes[f"{prefix}final_ln.bias"] = (d,)
        return shapes

    def final_norm(self, x: np.ndarray) -> np.ndarray:
        return layer_norm(x, self.final_gain, self.final_bias)


def transformer_layer_forward(
    x: np.ndarray, w: TransformerLayerWeights, num_heads: int, mask: np.ndarray | None = None
) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != w.model_dim:
        raise ShapeError(f"transformer input {x.shape} does not match model dim {w.model_dim}")
    xhat = w.norm_attn(x)
    z = w.attend(w.query(xhat), w.key(xhat), w.value(xhat), num_heads, mask) + x
    return w.ffn_block(z)


def transformer_stack_forward(
    x: np.ndarray,
    weights: TransformerStackWeights,
    num_heads: int,
    mask: np.ndarray | None = None,
    final_norm: bool = True,
) -> np.ndarray:
    for w in weights.layers:
        x = transformer_layer_forward(x, w, num_heads, mask)
    return weights.final_norm(x) if final_norm else x


CENTER, RIGHT_COPY, MEMORY_SLOT = "center", "right_copy", "memory_slot"


@dataclass(frozen=True)
class MaskPlan:
    """Expanded-row layout for replaying block processing in one pass.

    Rows 0..T-1 are the original frames in their centre role; the right
    context of every segment follows as hard copies, so a frame that is
    right context of segment k and centre of segment k+1 keeps two
    independent representations.
    """

    source: np.ndarray  # original frame index per expanded row
    role: tuple[str, ...]
    segment: np.ndarray  # segment index per expanded row
    content_mask: np.ndarray  # (rows, rows)
    memory_mask: np.ndarray  # (rows, segments): memory slot j visible to row
    num_segments: int

    @property
    def center_rows(self) -> np.ndarray:
        return np.flatnonzero(np.array(self.role) == CENTER)

    def segment_center_rows(self, k: int) -> np.ndarray:
        return np.flatnonzero((self.segment == k) & (np.array(self.role) == CENTER))

    def segment_query_row(self, k: int) -> int:
        return int(self.segment_center_rows(k)[0])


def build_mask_plan(frames: int, center: int, right: int, left: int, memory: int) -> MaskPlan:
    source, role, segment = [], [], []
    bounds = []
    for k, cs in enumerate(range(0, frames, center)):
        ce = min(cs + center, frames)
        re = min(ce + right, frames)
        bounds.append((cs, ce, re))
        source.extend(range(cs, ce))
        role.extend([CENTER] * (ce - cs))
        segment.extend([k] * (ce - cs))
    for k, (cs, ce, re) in enumerate(bounds):
        source.extend(range(ce, re))
        role.extend([RIGHT_COPY] * (re - ce))
        segment.extend([k] * (re - ce))
    source_a = np.array(source, dtype=np.int64)
    segment_a = np.array(segment, dtype=np.int64)
    role_a = np.array(role)
    n = len(source)
    K = len(bounds)
    content = np.zeros((n, n), dtype=bool)
    mem = np.zeros((n, K), dtype=bool)
    is_center = role_a == CENTER
    for i in range(n):
        cs, ce, _ = bounds[segment_a[i]]
        content[i] = (is_center & (source_a >= cs - left) & (source_a < ce)) | (
            ~is_center & (segment_a == segment_a[i])
        )
        k = segment_a[i]
        mem[i, max(0, k - memory) : k] = memory > 0
    return MaskPlan(source_a, tuple(role), segment_a, content, mem, K)


def offline_emformer_oracle(x: np.ndarray, cfg: "EmformerConfig", weights: TransformerStackWeights) -> np.ndarray:
    """Non-streaming Emformer: every layer is one masked attention over all rows.

    Memory vectors of all segments are produced together from a layer's
    content keys and become key slots of the layer above, visible to the
    ``cfg.memory`` segments that follow.
    """
    if len(weights.layers) != cfg.layers or weights.model_dim != cfg.model_dim:
        raise ConfigError(
            f"config ({cfg.layers} layers, dim {cfg.model_dim}) does not match weights "
            f"({len(weights.layers)} layers, dim {weights.model_dim})"
        )
    if x.shape[1] != cfg.model_dim:
        raise ShapeError(f"input dim {x.shape[1]} != model dim {cfg.model_dim}")
    if x.shape[0] == 0:
        return np.zeros((0, cfg.model_dim), DTYPE)
    plan = build_mask_plan(x.shape[0], cfg.center, cfg.right, cfg.left, cfg.memory)
    K = plan.num_segments
    h = x[plan.source]
    slots = np.zeros((0, cfg.model_dim), DTYPE)  # memory slots for the current layer
    seg_rows = [plan.segment_center_rows(k) for k in range(K)]
    seg_query = np.stack([plan.content_mask[plan.segment_query_row(k)] for k in range(K)])
    for n, w in enumerate(weights.layers):
        xhat = w.norm_attn(h)
        q, k, v = w.query(xhat), w.key(xhat), w.value(xhat)
        if slots.shape[0]:
            keys = np.concatenate([k, w.key(slots)])
            vals = np.concatenate([v, w.value(slots)])
            mask = np.concatenate([plan.content_mask, plan.memory_mask[:, : slots.shape[0]]], axis=1)
        else:
            keys, vals, mask = k, v, plan.content_mask
        z = w.attend(q, keys, vals, cfg.heads, mask) + h
        if cfg.memory > 0 and n + 1 < cfg.layers:
            pooled = np.stack([xhat[rows].mean(axis=0, dtype=DTYPE) for rows in seg_rows])
            slots = w.attend(w.query(pooled), k, v, cfg.heads, seg_query)
        h = w.ffn_block(z)
    return weights.final_norm(h[plan.center_rows])
