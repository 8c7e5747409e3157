"""Unidirectional LSTM streaming and latency-controlled BLSTM block processing.

Gate layout of the combined weight (4H x (D+H)) and bias (4H) is
input, forget, cell candidate, output, stacked along rows; the columns
hold the input part first and the recurrent part second.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .numerics import DTYPE, linear, sigmoid
from .quant import QuantizedMatrix


@dataclass(frozen=True, eq=False)
class LstmLayerWeights:
    weight: np.ndarray | QuantizedMatrix
    bias: np.ndarray

    def __post_init__(self):
        rows, cols = self.weight.shape
        if rows % 4 or self.bias.shape != (rows,):
            raise ShapeError(f"LSTM weight {self.weight.shape} / bias {self.bias.shape} inconsistent")
        if cols <= rows // 4:
            raise ShapeError(f"LSTM weight {self.weight.shape} leaves no input columns")
        d = cols - rows // 4
        if isinstance(self.weight, QuantizedMatrix):
            wx, wh = self.weight.column_slice(0, d), self.weight.column_slice(d, cols)
        else:
            wx, wh = self.weight[:, :d], self.weight[:, d:]
        object.__setattr__(self, "_wx", wx)
        object.__setattr__(self, "_wh", wh)

    @property
    def hidden_dim(self) -> int:
        return self.weight.shape[0] // 4

    @property
    def input_dim(self) -> int:
        return self.weight.shape[1] - self.hidden_dim

    def input_projection(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.input_dim:
            raise ShapeError(f"LSTM input dim {x.shape[1]} != expected {self.input_dim}")
        return linear(x, self._wx)

    def recurrent_projection(self, h: np.ndarray) -> np.ndarray:
        return linear(h.reshape(1, -1), self._wh)[0]

    @classmethod
    def from_weights(cls, weights, prefix: str) -> "LstmLayerWeights":
        return cls(weights[f"{prefix}.weight"], weights[f"{prefix}.bias"])

    @staticmethod
    def tensor_shapes(prefix: str, input_dim: int, hidden: int) -> dict[str, tuple[int, ...]]:
        return {
            f"{prefix}.weight": (4 * hidden, input_dim + hidden),
            f"{prefix}.bias": (4 * hidden,),
        }


@dataclass
class LstmState:
    """Per-layer hidden/cell vectors plus frames consumed (for decimation phase)."""

    h: list[np.ndarray]
    c: list[np.ndarray]
    frames_seen: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.frames_seen:
            self.frames_seen = [0] * len(self.h)

    @classmethod
    def zeros(cls, hidden_dims: list[int]) -> "LstmState":
        return cls([np.zeros(n, DTYPE) for n in hidden_dims], [np.zeros(n, DTYPE) for n in hidden_dims])

    def copy(self) -> "LstmState":
        return LstmState([h.copy() for h in self.h], [c.copy() for c in self.c], list(self.frames_seen))


def _step(xproj: np.ndarray, h: np.ndarray, c: np.ndarray, w: LstmLayerWeights):
    H = w.hidden_dim
    gates = xproj + w.recurrent_projection(h) + w.bias
    i = sigmoid(gates[:H])
    f = sigmoid(gates[H : 2 * H])
    g = np.tanh(gates[2 * H : 3 * H])
    o = sigmoid(gates[3 * H :])
    c = f * c + i * g
    h = o * np.tanh(c)
    return h, c


def lstm_cell_step(x: np.ndarray, h: np.ndarray, c: np.ndarray, w: LstmLayerWeights):
    """One recurrence step; returns ``(y, (h', c'))`` with ``y = h'``."""
    x = np.asarray(x, DTYPE)
    if x.shape != (w.input_dim,) or h.shape != (w.hidden_dim,) or c.shape != (w.hidden_dim,):
        raise ShapeError(
            f"LSTM step shapes x{x.shape} h{h.shape} c{c.shape} vs D={w.input_dim} H={w.hidden_dim}"
        )
    h, c = _step(w.input_projection(x.reshape(1, -1))[0], h, c, w)
    return h, (h, c)


def lstm_layer_forward(x: np.ndarray, h: np.ndarray, c: np.ndarray, w: LstmLayerWeights):
    """Run one layer over (T x D) frames from state (h, c); returns (Y, h, c)."""
    out = np.empty((x.shape[0], w.hidden_dim), DTYPE)
    if x.shape[0] == 0:
        return out, h, c
    xproj = w.input_projection(x)
    for t in range(x.shape[0]):
        h, c = _step(xproj[t], h, c, w)
        out[t] = h
    return out, h, c


def _decimate(y: np.ndarray, offset: int, factor: int) -> np.ndarray:
    """Keep frames whose global index (offset + i) is a multiple of ``factor``."""
    first = (-offset) % factor
    return y[first::factor]


def lstm_forward_streaming(
    chunk: np.ndarray,
    state: LstmState,
    layers: list[LstmLayerWeights],
    batch_frames: int | None = None,
    subsample: dict[int, int] | None = None,
):
    """Advance a unidirectional LSTM stack over ``chunk``.

    ``batch_frames`` only sets the compute granularity; results are identical
    for every chunking. ``subsample`` maps a layer index to a decimation
    factor applied to that layer's output before the next layer.
    """
    subsample = subsample or {}
    if len(state.h) != len(layers):
        raise ContractError(f"state has {len(state.h)} layers, weights have {len(layers)}")
    chunk = np.asarray(chunk, DTYPE)
    if chunk.ndim != 2 or chunk.shape[1] != layers[0].input_dim:
        raise ShapeError(f"LSTM chunk shape {chunk.shape} does not match input dim {layers[0].input_dim}")
    state = state.copy()
    step = batch_frames or max(chunk.shape[0], 1)
    pieces = []
    for start in range(0, chunk.shape[0], step):
        x = chunk[start : start + step]
        for n, w in enumerate(layers):
            y, state.h[n], state.c[n] = lstm_layer_forward(x, state.h[n], state.c[n], w)
            offset = state.frames_seen[n]
            state.frames_seen[n] += y.shape[0]
            if n in subsample:
                y = _decimate(y, offset, subsample[n])
            x = y
        pieces.append(x)
    if not pieces:
        return np.zeros((0, layers[-1].hidden_dim), DTYPE), state
    return np.concatenate(pieces), state


@dataclass(frozen=True)
class LcblstmConfig:
    layers: int
    hidden_per_direction: int
    center_frames: int
    right_frames: int
    subsample_after: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "subsample_after", tuple(self.subsample_after))
        if self.center_frames < 1:
            raise ConfigError(f"center_frames must be >= 1, got {self.center_frames}")
        if self.right_frames < 0:
            raise ConfigError(f"right_frames must be >= 0, got {self.right_frames}")
        if any(not 0 <= n < self.layers for n in self.subsample_after):
            raise ConfigError(f"subsample_after {self.subsample_after} outside 0..{self.layers - 1}")
        if self.center_frames % self.stride:
            raise ConfigError(
                f"center_frames {self.center_frames} must be a multiple of the encoder stride {self.stride}"
            )

    @property
    def stride(self) -> int:
        return 2 ** len(set(self.subsample_after))


@dataclass(frozen=True, eq=False)
class LcblstmLayerWeights:
    forward: LstmLayerWeights
    backward: LstmLayerWeights


def lcblstm_layer_segment(C: np.ndarray, R: np.ndarray, h, c, w: LcblstmLayerWeights):
    """One layer on one segment: forward from carried state, backward from zeros."""
    x = np.concatenate([C, R])
    nc = C.shape[0]
    hf, cf = h, c
    fwd = np.empty((x.shape[0], w.forward.hidden_dim), DTYPE)
    if x.shape[0]:
        xproj = w.forward.input_projection(x)
        for t in range(x.shape[0]):
            hf, cf = _step(xproj[t], hf, cf, w.forward)
            fwd[t] = hf
            if t == nc - 1:
                carried = (hf, cf)
    Hb = w.backward.hidden_dim
    bwd_rev, _, _ = lstm_layer_forward(x[::-1], np.zeros(Hb, DTYPE), np.zeros(Hb, DTYPE), w.backward)
    out = np.concatenate([fwd, bwd_rev[::-1]], axis=1)
    return out[:nc], out[nc:], carried


def lcblstm_forward_segment(
    C_k: np.ndarray,
    R_k: np.ndarray,
    carried: LstmState,
    layers: list[LcblstmLayerWeights],
    cfg: LcblstmConfig,
    trace: list | None = None,
):
    """Push segment ``k`` through every layer.

    Returns the top layer's centre and right-context outputs (2H wide) and
    the forward states at the last centre frame of each layer.
    ``trace``, if given, receives each layer's centre input.
    """
    if C_k.shape[0] == 0:
        raise ContractError("empty centre segment")
    if len(carried.h) != len(layers):
        raise ContractError(f"carried state has {len(carried.h)} layers, weights have {len(layers)}")
    if C_k.shape[1] != layers[0].forward.input_dim or R_k.shape[1] != C_k.shape[1]:
        raise ShapeError(f"segment dims C{C_k.shape} R{R_k.shape} vs input dim {layers[0].forward.input_dim}")
    new = carried.copy()
    C, R = C_k, R_k
    for n, w in enumerate(layers):
        if trace is not None:
            trace.append(C)
        C, R, (new.h[n], new.c[n]) = lcblstm_layer_segment(C, R, new.h[n], new.c[n], w)
        new.frames_seen[n] += C.shape[0]
        if n in cfg.subsample_after:
            C, R = C[::2], R[::2]
    return C, R, new


def lcblstm_forward(
    x: np.ndarray, layers: list[LcblstmLayerWeights], cfg: LcblstmConfig, trace: list | None = None
) -> np.ndarray:
    """Whole-utterance LCBLSTM by segment loop from zero state."""
    state = LstmState.zeros([w.forward.hidden_dim for w in layers])
    c, r = cfg.center_frames, cfg.right_frames
    per_layer: list[list[np.ndarray]] = [[] for _ in layers]
    outs = []
    for start in range(0, x.shape[0], c):
        seg_trace = [] if trace is not None else None
        C, _, state = lcblstm_forward_segment(x[start : start + c], x[start + c : start + c + r], state, layers, cfg, seg_trace)
        outs.append(C)
        if trace is not None:
            for n, ci in enumerate(seg_trace):
                per_layer[n].append(ci)
    if trace is not None:
        trace.extend(np.concatenate(p) if p else np.zeros((0, 0), DTYPE) for p in per_layer)
    if not outs:
        return np.zeros((0, 2 * layers[-1].forward.hidden_dim), DTYPE)
    return np.concatenate(outs)
