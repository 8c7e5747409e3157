from dataclasses import replace

import numpy as np
import pytest

import reference as ref
import streaming_am.emformer as emf
from streaming_am.emformer import (
    AmtrfStreamState,
    EmformerConfig,
    EmformerStreamState,
    FlopCounter,
    amtrf_forward,
    amtrf_segment_forward,
    amtrf_step,
    compute_memory_vector,
    emformer_forward,
    emformer_segment_forward,
    update_kv_cache,
)
from streaming_am.errors import ConfigError, ContractError, ShapeError
from streaming_am.transformer import offline_emformer_oracle
from streaming_am.verify import random_stack


def make(rng, **kw):
    base = dict(layers=2, model_dim=8, heads=2, head_dim=4, ffn_dim=16, center=2, right=1, left=2, memory=0)
    base.update(kw)
    cfg = EmformerConfig(**base)
    return cfg, random_stack(rng, cfg)


def test_three_segment_example_matches_oracle(rng):
    cfg, stack = make(rng)
    x = rng.standard_normal((6, 8)).astype(np.float32)
    out = emformer_forward(x, cfg, stack)
    np.testing.assert_allclose(out, offline_emformer_oracle(x, cfg, stack), atol=1e-5)
    np.testing.assert_allclose(out, ref.emformer_segments(x, stack, 2, 2, 1, 2, 0), atol=1e-5)


@pytest.mark.parametrize("memory", [1, 3])
def test_memory_bank_matches_scalar_reference(rng, memory):
    cfg, stack = make(rng, layers=3, center=2, right=2, left=1, memory=memory)
    x = rng.standard_normal((11, 8)).astype(np.float32)
    expected = ref.emformer_segments(x, stack, 2, 2, 2, 1, memory)
    np.testing.assert_allclose(emformer_forward(x, cfg, stack), expected, atol=1e-5)


def test_cache_is_fifo_of_newest_centre_keys(rng):
    cfg, stack = make(rng, layers=1, center=3, right=1, left=2)
    x = rng.standard_normal((7, 8)).astype(np.float32)
    state = EmformerStreamState.initial(cfg)
    _, state = emformer_segment_forward(x[0:3], x[3:4], state, stack, cfg)
    w = stack.layers[0]
    expected_k = w.key(w.norm_attn(x[0:4]))[1:3]  # centre frames 1, 2; right frame 3 excluded
    assert state.cache_k[0].shape == (2, 8)
    np.testing.assert_array_equal(state.cache_k[0], expected_k)


def test_update_kv_cache():
    ck = np.arange(4, dtype=np.float32).reshape(2, 2)
    nk = np.arange(4, 10, dtype=np.float32).reshape(3, 2)
    k, v = update_kv_cache(ck, ck, nk, nk, 3)
    assert k.tolist() == [[4, 5], [6, 7], [8, 9]]
    k, _ = update_kv_cache(ck, ck, nk, nk, 0)
    assert k.shape == (0, 2)


def test_recompute_path_agrees_with_cache(rng):
    cfg, stack = make(rng, layers=3, center=2, right=2, left=3, memory=2)
    x = rng.standard_normal((13, 8)).astype(np.float32)
    a = emformer_forward(x, cfg, stack)
    b = emformer_forward(x, cfg, stack, use_cache=False)
    assert np.abs(a - b).max() <= 1e-6


def test_memory_disabled_never_computes_memory(rng, monkeypatch):
    def boom(*args, **kwargs):
        raise AssertionError("memory vector computed with M=0")

    monkeypatch.setattr(emf, "compute_memory_vector", boom)
    cfg, stack = make(rng, layers=3, memory=0)
    emformer_forward(rng.standard_normal((9, 8)).astype(np.float32), cfg, stack)


def test_bank_capacity_and_layer_zero_empty(rng):
    cfg, stack = make(rng, layers=3, center=1, right=0, left=0, memory=2)
    x = rng.standard_normal((5, 8)).astype(np.float32)
    state = EmformerStreamState.initial(cfg)
    for t in range(5):
        _, state = emformer_segment_forward(x[t : t + 1], x[:0], state, stack, cfg)
        assert state.bank[0].shape[0] == 0
        assert state.bank[1].shape[0] == state.bank[2].shape[0] == min(t + 1, 2)


def test_memory_vector_scalar_oracle(rng):
    cfg, stack = make(rng, layers=1)
    w = stack.layers[0]
    c_hat = rng.standard_normal((3, 8)).astype(np.float32)
    keys = rng.standard_normal((5, 8)).astype(np.float32)
    vals = rng.standard_normal((5, 8)).astype(np.float32)
    L = ref.Layer(w)
    pooled = c_hat.astype(np.float64).mean(axis=0, keepdims=True)
    expected = ref.linear(ref.attention(ref.linear(pooled, L.wq, L.bq), keys, vals, 2), L.wo, L.bo)[0]
    np.testing.assert_allclose(compute_memory_vector(c_hat, keys, vals, w, 2), expected, atol=1e-5)
    with pytest.raises(ContractError):
        compute_memory_vector(c_hat[:0], keys, vals, w, 2)


def test_amtrf_without_left_context_equals_emformer(rng):
    cfg, stack = make(rng, layers=2, center=3, right=2, left=0, memory=2)
    x = rng.standard_normal((10, 8)).astype(np.float32)
    np.testing.assert_allclose(amtrf_forward(x, cfg, stack), emformer_forward(x, cfg, stack), atol=1e-6)


def test_amtrf_scalar_oracle(rng):
    cfg, stack = make(rng, layers=2, center=1, right=1, left=1, memory=0)
    x = rng.standard_normal((4, 8)).astype(np.float32)
    expected = ref.amtrf_segments(x, stack, 2, 1, 1, 1)
    np.testing.assert_allclose(amtrf_forward(x, cfg, stack), expected, atol=1e-5)


def test_amtrf_step_carries_raw_left_frames(rng):
    cfg, stack = make(rng, layers=1, center=2, right=0, left=3)
    x = rng.standard_normal((6, 8)).astype(np.float32)
    state = AmtrfStreamState.initial(cfg)
    for cs in range(0, 6, 2):
        _, state, _ = amtrf_step(x[cs : cs + 2], x[:0], state, stack, cfg)
    assert np.array_equal(state.left_frames, x[3:6])


def test_flop_counts_hand_computed(rng):
    cfg, stack = make(rng, layers=1, center=2, right=1, left=2, memory=0)
    x = rng.standard_normal((7, 8)).astype(np.float32)
    e, a = [], []
    emformer_forward(x, cfg, stack, counters=e)
    amtrf_forward(x, cfg, stack, counters=a)
    d = 8
    # segment 2: centre 4..5, right 6, left 2..3
    assert e[2]["scores"] == 2 * 3 * 5 * d  # 3 queries over 5 keys
    assert a[2]["scores"] == 2 * 5 * 5 * d  # 5 queries over 5 keys
    assert e[2]["kv_proj"] == 2 * 2 * 3 * d * d
    assert a[2]["kv_proj"] == 2 * 2 * 5 * d * d
    assert e[2].shared_term() / a[2].shared_term() == pytest.approx(3 / 5)
    # segment 0 has no left context, so both schemes cost the same
    assert e[0] == a[0]
    for k in (1, 2):
        assert e[k].attention_total() < a[k].attention_total()


def test_deterministic(rng):
    cfg, stack = make(rng, memory=2)
    x = rng.standard_normal((9, 8)).astype(np.float32)
    assert np.array_equal(emformer_forward(x, cfg, stack), emformer_forward(x, cfg, stack))


def test_partial_last_segment(rng):
    cfg, stack = make(rng, center=4, right=2, left=2, memory=1)
    x = rng.standard_normal((6, 8)).astype(np.float32)  # segment 1: 2 centre frames, no right
    out = emformer_forward(x, cfg, stack)
    assert out.shape == (6, 8)
    np.testing.assert_allclose(out, offline_emformer_oracle(x, cfg, stack), atol=1e-5)


def test_empty_utterance(rng):
    cfg, stack = make(rng)
    assert emformer_forward(np.zeros((0, 8), np.float32), cfg, stack).shape == (0, 8)


def test_segment_errors(rng):
    cfg, stack = make(rng)
    state = EmformerStreamState.initial(cfg)
    z = np.zeros((0, 8), np.float32)
    with pytest.raises(ContractError):
        emformer_segment_forward(z, z, state, stack, cfg)
    with pytest.raises(ContractError):
        emformer_segment_forward(np.zeros((3, 8), np.float32), z, state, stack, cfg)
    with pytest.raises(ShapeError):
        emformer_segment_forward(np.zeros((2, 4), np.float32), np.zeros((0, 4), np.float32), state, stack, cfg)
    with pytest.raises(ContractError):
        emformer_segment_forward(np.zeros((2, 8), np.float32), z, EmformerStreamState.initial(replace(cfg, layers=3)), stack, cfg)
    with pytest.raises(ConfigError):
        emformer_forward(z, replace(cfg, layers=3), stack)
    with pytest.raises(ShapeError):
        amtrf_segment_forward(np.zeros((1, 4), np.float32), np.zeros((1, 8), np.float32), z, state.bank, stack, cfg)


def test_config_validation():
    with pytest.raises(ConfigError):
        EmformerConfig(1, 8, 2, 3, 16, center=2)
    with pytest.raises(ConfigError):
        EmformerConfig(1, 8, 2, 4, 16, center=0)
    with pytest.raises(ConfigError):
        EmformerConfig(1, 8, 2, 4, 16, center=2, left=-1)


def test_flop_counter_categories():
    c = FlopCounter(scores=4, weighted_sum=6, q_proj=1, memory=2, ffn=100)
    assert c.shared_term() == 10 and c.attention_total() == 13
