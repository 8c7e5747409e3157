"""Cross-module property suite run by ``streaming-am verify``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import EncoderConfig, init_weights, load_preset
from .emformer import EmformerConfig, amtrf_forward, emformer_forward
from .frontend import FeatureSequence
from .numerics import DTYPE
from .quant import matvec_error_bound, quantize_per_channel, quantized_matvec
from .recurrent import (
    LcblstmConfig,
    LcblstmLayerWeights,
    LstmLayerWeights,
    LstmState,
    lcblstm_forward,
    lstm_forward_streaming,
)
from .streamer import Encoder, chunked, compute_eil, concat_blocks, run_stream
from .transformer import TransformerStackWeights, offline_emformer_oracle

# (preset, expected EIL in ms)
EIL_TABLE = (
    ("assistant-emformer-140", 140),
    ("assistant-emformer-80", 80),
    ("video-vi-emformer", 1060),
    ("video-de-es-emformer", 720),
    ("assistant-lstm", 120),
)


@dataclass(frozen=True)
class PropertyResult:
    name: str
    max_error: float
    tolerance: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"{status}  {self.name:<28} max_error={self.max_error:.3e}  tol={self.tolerance:.1e}{extra}"


def relative_error(actual: np.ndarray, reference: np.ndarray) -> float:
    """max |a - b| / max |b| (0 for two empty or all-zero arrays)."""
    if actual.shape != reference.shape:
        return float("inf")
    if actual.size == 0:
        return 0.0
    scale = float(np.abs(reference).max())
    diff = float(np.abs(actual.astype(np.float64) - reference).max())
    return diff / scale if scale > 0 else diff


def random_lstm_layers(rng, input_dim: int, hidden: int, layers: int) -> list[LstmLayerWeights]:
    out, d = [], input_dim
    for _ in range(layers):
        w = (rng.standard_normal((4 * hidden, d + hidden)) / np.sqrt(d + hidden)).astype(DTYPE)
        b = (0.1 * rng.standard_normal(4 * hidden)).astype(DTYPE)
        out.append(LstmLayerWeights(w, b))
        d = hidden
    return out


def random_stack(rng, cfg: EmformerConfig) -> TransformerStackWeights:
    tensors = {}
    for name, shape in TransformerStackWeights.tensor_shapes(cfg.layers, cfg.model_dim, cfg.ffn_dim).items():
        if name.endswith(".gain"):
            t = 1 + 0.1 * rng.standard_normal(shape)
        elif len(shape) == 2:
            t = rng.standard_normal(shape) / np.sqrt(shape[1])
        else:
            t = 0.1 * rng.standard_normal(shape)
        tensors[name] = np.asarray(t, DTYPE)
    return TransformerStackWeights.from_weights(tensors, cfg.layers)


def random_emformer_config(rng, max_layers=4, max_c=6, max_r=6, max_l=6, max_m=4) -> EmformerConfig:
    heads = int(rng.choice([1, 2, 4]))
    head_dim = int(rng.choice([2, 4, 8, 16]))
    return EmformerConfig(
        layers=int(rng.integers(1, max_layers + 1)),
        model_dim=heads * head_dim,
        heads=heads,
        head_dim=head_dim,
        ffn_dim=int(rng.choice([8, 16, 32])),
        center=int(rng.integers(1, max_c + 1)),
        right=int(rng.integers(0, max_r + 1)),
        left=int(rng.integers(0, max_l + 1)),
        memory=int(rng.integers(0, max_m + 1)),
    )


def random_chunking(rng, total: int) -> list[int]:
    cuts = sorted(rng.choice(np.arange(1, total), size=min(total - 1, int(rng.integers(0, 6))), replace=False)) if total > 1 else []
    edges = [0, *map(int, cuts), total]
    return [b - a for a, b in zip(edges, edges[1:])]


def check_eil_table() -> PropertyResult:
    errs, shown = [], []
    for name, expected in EIL_TABLE:
        got = compute_eil(load_preset(name)).eil_ms
        errs.append(abs(got - expected))
        shown.append(f"{got:g}")
    return PropertyResult("eil_table", max(errs), 0.0, "ms: " + "/".join(shown))


def check_lstm_chunking(rng, trials: int = 10) -> PropertyResult:
    worst = 0.0
    for _ in range(trials):
        d, h, n = int(rng.integers(1, 9)), int(rng.integers(1, 9)), int(rng.integers(1, 4))
        layers = random_lstm_layers(rng, d, h, n)
        T = int(rng.integers(1, 40))
        x = rng.standard_normal((T, d)).astype(DTYPE)
        sub = {0: int(rng.integers(1, 5))} if rng.random() < 0.5 else {}
        full, _ = lstm_forward_streaming(x, LstmState.zeros([h] * n), layers, subsample=sub)
        state, parts, start = LstmState.zeros([h] * n), [], 0
        for size in random_chunking(rng, T):
            y, state = lstm_forward_streaming(x[start : start + size], state, layers, subsample=sub)
            parts.append(y)
            start += size
        streamed = np.concatenate(parts)
        worst = max(worst, 0.0 if np.array_equal(streamed, full) else float(np.abs(streamed - full).max() or np.inf))
    return PropertyResult("lstm_chunking_bitwise", worst, 0.0)


def check_lcblstm_forward(rng, trials: int = 10) -> PropertyResult:
    worst = 0.0
    for _ in range(trials):
        d, h = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        n = int(rng.integers(1, 4))
        sub = tuple(i for i in range(n) if rng.random() < 0.3)
        stride = 2 ** len(sub)
        cfg = LcblstmConfig(n, h, stride * int(rng.integers(1, 4)), int(rng.integers(0, 5)), sub)
        layers, dim = [], d
        for _ in range(n):
            fwd, bwd = random_lstm_layers(rng, dim, h, 1)[0], random_lstm_layers(rng, dim, h, 1)[0]
            layers.append(LcblstmLayerWeights(fwd, bwd))
            dim = 2 * h
        x = rng.standard_normal((int(rng.integers(1, 40)), d)).astype(DTYPE)
        trace: list = []
        out = lcblstm_forward(x, layers, cfg, trace)
        for i, w in enumerate(layers):
            ref, _ = lstm_forward_streaming(trace[i], LstmState.zeros([h]), [w.forward])
            if i in sub:
                ref = ref[::2]
            got = (trace[i + 1] if i + 1 < n else out)[:, :h]
            if got.shape != ref.shape:
                worst = float("inf")
            elif ref.size:
                worst = max(worst, float(np.abs(got - ref).max()))
    return PropertyResult("lcblstm_forward_oracle", worst, 1e-6)


def _stack_for(cfg: EncoderConfig, weights) -> TransformerStackWeights:
    return TransformerStackWeights.from_weights(weights, cfg.layers)


def check_emformer_oracle(rng, preset: EncoderConfig | None, weights=None, trials: int = 10):
    worst_oracle = worst_cache = 0.0
    cases = []
    if preset is not None and preset.family in ("emformer", "amtrf"):
        ecfg = preset.emformer_config()
        T = 2 * ecfg.center + ecfg.right + 1
        x = rng.standard_normal((T, ecfg.model_dim)).astype(DTYPE)
        cases.append((ecfg, _stack_for(preset, weights), x))
    for _ in range(trials):
        ecfg = random_emformer_config(rng)
        x = rng.standard_normal((int(rng.integers(1, 41)), ecfg.model_dim)).astype(DTYPE)
        cases.append((ecfg, random_stack(rng, ecfg), x))
    for ecfg, stack, x in cases:
        streamed = emformer_forward(x, ecfg, stack)
        worst_oracle = max(worst_oracle, relative_error(streamed, offline_emformer_oracle(x, ecfg, stack)))
        recomputed = emformer_forward(x, ecfg, stack, use_cache=False)
        worst_cache = max(worst_cache, float(np.abs(streamed - recomputed).max()) if x.size else 0.0)
    return (
        PropertyResult("emformer_vs_offline_oracle", worst_oracle, 1e-4, f"{len(cases)} configs"),
        PropertyResult("kv_cache_vs_recompute", worst_cache, 1e-6, f"{len(cases)} configs"),
    )


def check_amtrf_cost(rng, trials: int = 5) -> PropertyResult:
    """Shared (query x key) term: measured Emformer/AM-TRF ratio vs (c+r)/(l+c+r)."""
    worst = 0.0
    for _ in range(trials):
        ecfg = random_emformer_config(rng, max_layers=2, max_m=0)
        ecfg = EmformerConfig(**{**ecfg.__dict__, "left": max(ecfg.left, 1), "right": ecfg.right})
        T = ecfg.center * (ecfg.left // ecfg.center + 3) + ecfg.right
        x = rng.standard_normal((T, ecfg.model_dim)).astype(DTYPE)
        stack = random_stack(rng, ecfg)
        e_counts, a_counts = [], []
        emformer_forward(x, ecfg, stack, counters=e_counts)
        amtrf_forward(x, ecfg, stack, counters=a_counts)
        steady = [
            k for k in range(len(e_counts)) if (k * ecfg.center >= ecfg.left and (k + 1) * ecfg.center + ecfg.right <= T)
        ]
        expected = (ecfg.center + ecfg.right) / (ecfg.left + ecfg.center + ecfg.right)
        for k in steady:
            ratio = e_counts[k].shared_term() / a_counts[k].shared_term()
            worst = max(worst, abs(ratio - expected) / expected)
            if not e_counts[k].attention_total() < a_counts[k].attention_total():
                worst = float("inf")
    return PropertyResult("amtrf_cost_ratio", worst, 0.05)


def check_quant_bounds(rng, trials: int = 200) -> PropertyResult:
    violations = 0
    worst = 0.0
    for _ in range(trials):
        rows, cols = int(rng.integers(1, 17)), int(rng.integers(1, 17))
        w = (rng.standard_normal((rows, cols)) * rng.uniform(0.01, 10)).astype(DTYPE)
        qw = quantize_per_channel(w)
        err = np.abs(qw.dequantize() - w.astype(np.float64)).max(axis=1)
        worst = max(worst, float((err / (qw.scale / 2)).max()))
        violations += int(np.any(err > qw.scale.astype(np.float64) / 2))
        x = rng.uniform(-1, 1, cols).astype(DTYPE)
        ref = (w @ x).astype(np.float64)
        got = quantized_matvec(qw, x).astype(np.float64)
        bound = matvec_error_bound(qw, w, x)
        violations += int(np.any(np.abs(got - ref) > bound))
    return PropertyResult("quant_bounds", float(violations), 0.0, f"worst round-trip err/(scale/2)={worst:.3f}")


def check_stream_vs_batch(rng, cfg: EncoderConfig, weights, raw_frames: int) -> PropertyResult:
    enc = Encoder(cfg, weights)
    seq = FeatureSequence(rng.standard_normal((raw_frames, cfg.input_dim)).astype(DTYPE), cfg.input_rate_ms)
    batch = enc.encode(seq).data
    size = int(rng.integers(1, 2 * cfg.frontend.stack + 8))
    streamed = concat_blocks(run_stream(enc.open_stream(), chunked(seq.data, size)), enc.output_dim)
    same = np.array_equal(streamed, batch)
    err = 0.0 if same else (float(np.abs(streamed - batch).max()) if streamed.shape == batch.shape else np.inf)
    return PropertyResult("session_stream_vs_batch", err, 0.0, f"{raw_frames} frames, chunks of {size}")


def run_suite(preset_name: str, seed: int) -> list[PropertyResult]:
    cfg = load_preset(preset_name)
    rng = np.random.default_rng(seed)
    weights = init_weights(cfg, seed)
    results = [check_eil_table(), check_lstm_chunking(rng), check_lcblstm_forward(rng)]
    results.extend(check_emformer_oracle(rng, cfg, weights))
    results.append(check_amtrf_cost(rng))
    results.append(check_quant_bounds(rng))
    if cfg.family in ("emformer", "amtrf", "lcblstm"):
        per_segment = (cfg.c_ms // cfg.input_rate_ms)
        raw = 2 * per_segment + (cfg.r_ms // cfg.input_rate_ms) + cfg.frontend.stack + 1
    else:
        raw = 3 * (cfg.c_ms // cfg.input_rate_ms) + 3
    results.append(check_stream_vs_batch(rng, cfg, weights, raw))
    return results

