"""Streaming Emformer with left-context key/value cache and memory bank.

Per segment k and layer n, the input block [C; R] is layer-normalised and
projected. Keys/values are the cached projections of up to ``left`` previous
centre frames, the new centre and right-context projections, and the
projections of the layer's memory bank. Only [C; R] rows are queried, so
cached left context is never recomputed. A memory vector, attention of the
pooled normalised centre over the non-memory keys, joins the bank of layer
n+1 for the next segment.

``amtrf_*`` is the augmented-memory reference that instead feeds raw left
context frames through every layer again, used to compare compute cost.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .numerics import DTYPE
from .transformer import TransformerLayerWeights, TransformerStackWeights


@dataclass(frozen=True)
class EmformerConfig:
    layers: int
    model_dim: int
    heads: int
    head_dim: int
    ffn_dim: int
    center: int
    right: int = 0
    left: int = 0
    memory: int = 0

    def __post_init__(self):
        if self.center < 1:
            raise ConfigError(f"center must be >= 1 frame, got {self.center}")
        if min(self.right, self.left, self.memory) < 0:
            raise ConfigError("right, left and memory sizes must be >= 0")
        if self.heads * self.head_dim != self.model_dim:
            raise ConfigError(f"heads*head_dim = {self.heads * self.head_dim} != model_dim {self.model_dim}")
        if self.layers < 1:
            raise ConfigError("an Emformer needs at least one layer")


def check_weights(cfg: EmformerConfig, weights: TransformerStackWeights) -> None:
    if len(weights.layers) != cfg.layers or weights.model_dim != cfg.model_dim:
        raise ConfigError(
            f"config ({cfg.layers} layers, dim {cfg.model_dim}) does not match weights "
            f"({len(weights.layers)} layers, dim {weights.model_dim})"
        )


class FlopCounter(Counter):
    """Multiply-add FLOPs (2 per MAC) of attention modules, by category.

    ``scores`` and ``weighted_sum`` scale with query rows times key rows;
    together they form the term shared by both block-processing schemes.
    """

    ATTENTION = ("q_proj", "kv_proj", "scores", "weighted_sum", "out_proj", "memory")

    def attention_total(self) -> int:
        return sum(self[k] for k in self.ATTENTION)

    def shared_term(self) -> int:
        return self["scores"] + self["weighted_sum"]


def _count_attention(counter, n_query: int, n_keys: int, n_projected: int, d: int) -> None:
    if counter is None:
        return
    counter["q_proj"] += 2 * n_query * d * d
    counter["kv_proj"] += 2 * 2 * n_projected * d * d
    counter["scores"] += 2 * n_query * n_keys * d
    counter["weighted_sum"] += 2 * n_query * n_keys * d
    counter["out_proj"] += 2 * n_query * d * d


def _count_memory(counter, n_keys: int, d: int) -> None:
    if counter is not None:
        counter["memory"] += 2 * d * d * 2 + 4 * n_keys * d


def _empty(d: int) -> np.ndarray:
    return np.zeros((0, d), DTYPE)


@dataclass(frozen=True, eq=False)
class EmformerStreamState:
    """Carried state per layer: cached left keys/values and the memory bank.

    With ``use_cache=False`` the normalised centre inputs are retained instead
    and keys/values are recomputed from them every segment.
    """

    cache_k: tuple[np.ndarray, ...]
    cache_v: tuple[np.ndarray, ...]
    retained: tuple[np.ndarray, ...]
    bank: tuple[np.ndarray, ...]
    segment: int = 0
    use_cache: bool = True

    @classmethod
    def initial(cls, cfg: EmformerConfig, use_cache: bool = True) -> "EmformerStreamState":
        e = tuple(_empty(cfg.model_dim) for _ in range(cfg.layers))
        return cls(e, e, e, e, 0, use_cache)

    @property
    def layers(self) -> int:
        return len(self.bank)

    def left_kv(self, n: int, w: TransformerLayerWeights):
        if self.use_cache:
            return self.cache_k[n], self.cache_v[n]
        return w.key(self.retained[n]), w.value(self.retained[n])


def update_kv_cache(cache_k: np.ndarray, cache_v: np.ndarray, new_k: np.ndarray, new_v: np.ndarray, left: int):
    """Keep the projections of the newest ``left`` centre frames (FIFO)."""
    if left == 0:
        return cache_k[:0], cache_v[:0]
    k = np.concatenate([cache_k, new_k])[-left:]
    v = np.concatenate([cache_v, new_v])[-left:]
    return k, v


def compute_memory_vector(
    c_hat: np.ndarray, keys: np.ndarray, values: np.ndarray, w: TransformerLayerWeights, num_heads: int
) -> np.ndarray:
    """Attention of the mean-pooled normalised centre over memory-free keys."""
    if c_hat.shape[0] == 0:
        raise ContractError("memory vector needs a non-empty centre segment")
    pooled = c_hat.mean(axis=0, keepdims=True, dtype=DTYPE)
    return w.attend(w.query(pooled), keys, values, num_heads)[0]


def emformer_segment_forward(
    C_k: np.ndarray,
    R_k: np.ndarray,
    state: EmformerStreamState,
    weights: TransformerStackWeights,
    cfg: EmformerConfig,
    counter: FlopCounter | None = None,
):
    """Process one segment once its right context is available.

    Returns the final-normalised centre outputs and the post-segment state.
    """
    nc = C_k.shape[0]
    if nc == 0:
        raise ContractError("zero-length centre segment")
    if state.layers != cfg.layers:
        raise ContractError(f"state has {state.layers} layers, config has {cfg.layers}")
    if C_k.shape[1] != cfg.model_dim or R_k.shape[1] != cfg.model_dim:
        raise ShapeError(f"segment dims C{C_k.shape} R{R_k.shape} vs model dim {cfg.model_dim}")
    if nc > cfg.center or R_k.shape[0] > cfg.right:
        raise ContractError(f"segment C={nc}, R={R_k.shape[0]} exceeds configured c={cfg.center}, r={cfg.right}")
    d = cfg.model_dim
    cache_k, cache_v, retained = list(state.cache_k), list(state.cache_v), list(state.retained)
    bank = list(state.bank)
    pending: dict[int, np.ndarray] = {}
    x = np.concatenate([C_k, R_k])
    for n, w in enumerate(weights.layers):
        xhat = w.norm_attn(x)
        q, k_new, v_new = w.query(xhat), w.key(xhat), w.value(xhat)
        left_k, left_v = state.left_kv(n, w)
        keys = [left_k, k_new]
        vals = [left_v, v_new]
        if bank[n].shape[0]:
            keys.append(w.key(bank[n]))
            vals.append(w.value(bank[n]))
        keys_all, vals_all = np.concatenate(keys), np.concatenate(vals)
        _count_attention(counter, x.shape[0], keys_all.shape[0], x.shape[0] + bank[n].shape[0], d)
        z = w.attend(q, keys_all, vals_all, cfg.heads) + x
        if cfg.memory > 0 and n + 1 < cfg.layers:
            mk, mv = np.concatenate([left_k, k_new]), np.concatenate([left_v, v_new])
            _count_memory(counter, mk.shape[0], d)
            pending[n + 1] = compute_memory_vector(xhat[:nc], mk, mv, w, cfg.heads)
        if state.use_cache:
            cache_k[n], cache_v[n] = update_kv_cache(cache_k[n], cache_v[n], k_new[:nc], v_new[:nc], cfg.left)
        else:
            retained[n] = np.concatenate([retained[n], xhat[:nc]])[-cfg.left :] if cfg.left else retained[n][:0]
        x = w.ffn_block(z)
    for n, m in pending.items():
        bank[n] = np.concatenate([bank[n], m[None, :]])[-cfg.memory :]
    new_state = replace(
        state,
        cache_k=tuple(cache_k),
        cache_v=tuple(cache_v),
        retained=tuple(retained),
        bank=tuple(bank),
        segment=state.segment + 1,
    )
    return weights.final_norm(x[:nc]), new_state


def segment_bounds(frames: int, center: int, right: int):
    for cs in range(0, frames, center):
        ce = min(cs + center, frames)
        yield cs, ce, min(ce + right, frames)


def emformer_forward(
    x: np.ndarray,
    cfg: EmformerConfig,
    weights: TransformerStackWeights,
    use_cache: bool = True,
    counters: list | None = None,
) -> np.ndarray:
    """Whole-utterance streaming pass; ``counters`` collects one FlopCounter per segment."""
    check_weights(cfg, weights)
    state = EmformerStreamState.initial(cfg, use_cache)
    outs = []
    for cs, ce, re in segment_bounds(x.shape[0], cfg.center, cfg.right):
        counter = FlopCounter() if counters is not None else None
        y, state = emformer_segment_forward(x[cs:ce], x[ce:re], state, weights, cfg, counter)
        outs.append(y)
        if counters is not None:
            counters.append(counter)
    return np.concatenate(outs) if outs else _empty(cfg.model_dim)


@dataclass(frozen=True, eq=False)
class AmtrfStreamState:
    """Raw left-context input frames plus per-layer memory banks."""

    left_frames: np.ndarray
    bank: tuple[np.ndarray, ...]
    segment: int = 0

    @classmethod
    def initial(cls, cfg: EmformerConfig) -> "AmtrfStreamState":
        return cls(_empty(cfg.model_dim), tuple(_empty(cfg.model_dim) for _ in range(cfg.layers)))


def amtrf_segment_forward(
    L_k: np.ndarray,
    C_k: np.ndarray,
    R_k: np.ndarray,
    memory: tuple[np.ndarray, ...],
    weights: TransformerStackWeights,
    cfg: EmformerConfig,
    counter: FlopCounter | None = None,
):
    """Every layer re-processes the full contextual segment [L; C; R].

    Returns (centre outputs, updated memory banks, counter).
    """
    nl, nc = L_k.shape[0], C_k.shape[0]
    if nc == 0:
        raise ContractError("zero-length centre segment")
    if len(memory) != cfg.layers:
        raise ContractError(f"memory has {len(memory)} layers, config has {cfg.layers}")
    for name, blk in (("L", L_k), ("C", C_k), ("R", R_k)):
        if blk.ndim != 2 or blk.shape[1] != cfg.model_dim:
            raise ShapeError(f"block {name} has shape {blk.shape}, expected (*, {cfg.model_dim})")
    d = cfg.model_dim
    counter = FlopCounter() if counter is None else counter
    bank = list(memory)
    pending = {}
    x = np.concatenate([L_k, C_k, R_k])
    for n, w in enumerate(weights.layers):
        xhat = w.norm_attn(x)
        q, k, v = w.query(xhat), w.key(xhat), w.value(xhat)
        if bank[n].shape[0]:
            keys = np.concatenate([k, w.key(bank[n])])
            vals = np.concatenate([v, w.value(bank[n])])
        else:
            keys, vals = k, v
        _count_attention(counter, x.shape[0], keys.shape[0], x.shape[0] + bank[n].shape[0], d)
        z = w.attend(q, keys, vals, cfg.heads) + x
        if cfg.memory > 0 and n + 1 < cfg.layers:
            _count_memory(counter, k.shape[0], d)
            pending[n + 1] = compute_memory_vector(xhat[nl : nl + nc], k, v, w, cfg.heads)
        x = w.ffn_block(z)
    for n, m in pending.items():
        bank[n] = np.concatenate([bank[n], m[None, :]])[-cfg.memory :]
    return weights.final_norm(x[nl : nl + nc]), tuple(bank), counter


def amtrf_step(C_k, R_k, state: AmtrfStreamState, weights, cfg: EmformerConfig, counter=None):
    """Stateful wrapper: supplies the last ``left`` raw centre frames as L_k."""
    y, bank, counter = amtrf_segment_forward(state.left_frames, C_k, R_k, state.bank, weights, cfg, counter)
    left = np.concatenate([state.left_frames, C_k])[-cfg.left :] if cfg.left else state.left_frames
    return y, AmtrfStreamState(left, bank, state.segment + 1), counter


def amtrf_forward(x: np.ndarray, cfg: EmformerConfig, weights: TransformerStackWeights, counters: list | None = None):
    check_weights(cfg, weights)
    state = AmtrfStreamState.initial(cfg)
    outs = []
    for cs, ce, re in segment_bounds(x.shape[0], cfg.center, cfg.right):
        y, state, counter = amtrf_step(x[cs:ce], x[ce:re], state, weights, cfg)
        outs.append(y)
        if counters is not None:
            counters.append(counter)
    return np.concatenate(outs) if outs else _empty(cfg.model_dim)
