"""Streaming sessions, batch encoding and encoder-induced latency (EIL)."""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np

from .config import EncoderConfig, check_weights
from .emformer import (
    AmtrfStreamState,
    EmformerStreamState,
    amtrf_forward,
    amtrf_step,
    emformer_forward,
    emformer_segment_forward,
)
from .errors import ConfigError, ShapeError, StreamClosedError
from .frontend import FeatureSequence, StreamingFrontend, apply_frontend
from .numerics import DTYPE, as_matrix
from .recurrent import (
    LcblstmLayerWeights,
    LstmLayerWeights,
    LstmState,
    lcblstm_forward,
    lcblstm_forward_segment,
    lstm_forward_streaming,
)
from .transformer import TransformerStackWeights, transformer_stack_forward
from .weights import WeightSet


@dataclass(frozen=True)
class EilReport:
    right_context_ms: float
    half_center_ms: float
    frontend_lookahead_ms: float

    @property
    def eil_ms(self) -> float:
        return self.right_context_ms + self.half_center_ms + self.frontend_lookahead_ms

    def to_dict(self) -> dict:
        return {
            "eil_ms": self.eil_ms,
            "right_context_ms": self.right_context_ms,
            "half_center_ms": self.half_center_ms,
            "frontend_lookahead_ms": self.frontend_lookahead_ms,
        }


def compute_eil(cfg: EncoderConfig) -> EilReport:
    """Right context + half the centre segment (+ look-ahead stacking in the frontend)."""
    if cfg.family == "transformer_offline" or cfg.c_ms <= 0:
        raise ConfigError(f"{cfg.name}: EIL needs block geometry; family {cfg.family} has none")
    lookahead = cfg.frontend.lookahead_frames * cfg.input_rate_ms
    return EilReport(float(cfg.r_ms), cfg.c_ms / 2, float(lookahead))


class Encoder:
    """An encoder configuration bound to its weights."""

    def __init__(self, cfg: EncoderConfig, weights: WeightSet):
        check_weights(cfg, weights)
        if cfg.quantized and not weights.is_quantized:
            weights = weights.quantized()
        self.cfg = cfg
        self.weights = weights
        fam = cfg.family
        if fam in ("transformer_offline", "emformer", "amtrf"):
            self.stack = TransformerStackWeights.from_weights(weights, cfg.layers)
        elif fam == "lstm":
            self.lstm = [LstmLayerWeights.from_weights(weights, f"layers.{n}") for n in range(cfg.layers)]
        else:
            self.lcblstm = [
                LcblstmLayerWeights(
                    LstmLayerWeights.from_weights(weights, f"layers.{n}.fwd"),
                    LstmLayerWeights.from_weights(weights, f"layers.{n}.bwd"),
                )
                for n in range(cfg.layers)
            ]

    @property
    def output_dim(self) -> int:
        return self.cfg.output_dim

    def _check_input(self, seq: FeatureSequence) -> None:
        if seq.dim != self.cfg.input_dim:
            raise ShapeError(f"features have dim {seq.dim}, encoder expects {self.cfg.input_dim}")
        if seq.frame_rate_ms != self.cfg.input_rate_ms:
            raise ShapeError(f"features are at {seq.frame_rate_ms} ms, encoder expects {self.cfg.input_rate_ms} ms")

    def encode_frames(self, x: np.ndarray) -> np.ndarray:
        """Encode post-frontend frames in one call."""
        cfg = self.cfg
        if cfg.family == "transformer_offline":
            if x.shape[0] == 0:
                return np.zeros((0, cfg.model_dim), DTYPE)
            return transformer_stack_forward(x, self.stack, cfg.heads)
        if cfg.family == "emformer":
            return emformer_forward(x, cfg.emformer_config(), self.stack)
        if cfg.family == "amtrf":
            return amtrf_forward(x, cfg.emformer_config(), self.stack)
        if cfg.family == "lcblstm":
            return lcblstm_forward(x, self.lcblstm, cfg.lcblstm_config())
        state = LstmState.zeros([cfg.model_dim] * cfg.layers)
        y, _ = lstm_forward_streaming(x, state, self.lstm, subsample=dict(cfg.subsample))
        return y

    def encode(self, seq: FeatureSequence) -> FeatureSequence:
        """Whole-utterance (batch) run."""
        self._check_input(seq)
        x = apply_frontend(seq, self.cfg.frontend, self.weights)
        return FeatureSequence(self.encode_frames(x.data), self.cfg.output_rate_ms)

    def open_stream(self) -> "StreamingSession":
        return StreamingSession(self)


class StreamingSession:
    """Feeds incrementally arriving features and emits blocks as they complete.

    A block for segment k is emitted once its centre and full right context
    have arrived (or at ``flush`` for the trailing partial segment).
    """

    def __init__(self, encoder: Encoder):
        self.encoder = encoder
        cfg = encoder.cfg
        self.cfg = cfg
        self.frontend = StreamingFrontend(cfg.frontend, encoder.weights, cfg.input_dim)
        self._buf = np.zeros((0, cfg.frontend_dim), DTYPE)
        self.frames_received = 0  # raw input frames
        self.frames_available = 0  # post-frontend frames
        self.closed = False
        fam = cfg.family
        if fam == "emformer":
            self._ecfg = cfg.emformer_config()
            self._state = EmformerStreamState.initial(self._ecfg)
        elif fam == "amtrf":
            self._ecfg = cfg.emformer_config()
            self._state = AmtrfStreamState.initial(self._ecfg)
        elif fam in ("lstm", "lcblstm"):
            self._state = LstmState.zeros([cfg.model_dim] * cfg.layers)
        else:
            self._state = None

    def accept(self, chunk) -> list[np.ndarray]:
        if self.closed:
            raise StreamClosedError("stream already flushed")
        if isinstance(chunk, FeatureSequence):
            chunk = chunk.data
        chunk = as_matrix(chunk, name="feature chunk")
        if chunk.shape[1] != self.cfg.input_dim:
            raise ShapeError(f"chunk has dim {chunk.shape[1]}, encoder expects {self.cfg.input_dim}")
        self.frames_received += chunk.shape[0]
        return self._feed(self.frontend.push(chunk), final=False)

    def flush(self) -> list[np.ndarray]:
        if self.closed:
            raise StreamClosedError("stream already flushed")
        blocks = self._feed(self.frontend.flush(), final=True)
        self.closed = True
        return blocks

    def _feed(self, frames: np.ndarray, final: bool) -> list[np.ndarray]:
        self.frames_available += frames.shape[0]
        self._buf = np.concatenate([self._buf, frames])
        fam = self.cfg.family
        if fam == "transformer_offline":
            if not final or self._buf.shape[0] == 0:
                return []
            return [self.encoder.encode_frames(self._buf)]
        if fam == "lstm":
            return self._feed_lstm(final)
        return self._feed_segments(final)

    def _feed_lstm(self, final: bool) -> list[np.ndarray]:
        batch = self.cfg.center_frames
        blocks = []
        while self._buf.shape[0] >= batch or (final and self._buf.shape[0]):
            x, self._buf = self._buf[:batch], self._buf[batch:]
            y, self._state = lstm_forward_streaming(
                x, self._state, self.encoder.lstm, batch_frames=batch, subsample=dict(self.cfg.subsample)
            )
            if y.shape[0]:
                blocks.append(y)
        return blocks

    def _feed_segments(self, final: bool) -> list[np.ndarray]:
        c, r = self.cfg.center_frames, self.cfg.right_frames
        blocks = []
        while self._buf.shape[0] >= c + r or (final and self._buf.shape[0]):
            C, R = self._buf[:c], self._buf[c : c + r]
            blocks.append(self._segment(C, R))
            self._buf = self._buf[C.shape[0] :]
        return blocks

    def _segment(self, C: np.ndarray, R: np.ndarray) -> np.ndarray:
        fam = self.cfg.family
        if fam == "emformer":
            y, self._state = emformer_segment_forward(C, R, self._state, self.encoder.stack, self._ecfg)
        elif fam == "amtrf":
            y, self._state, _ = amtrf_step(C, R, self._state, self.encoder.stack, self._ecfg)
        else:
            y, _, self._state = lcblstm_forward_segment(
                C, R, self._state, self.encoder.lcblstm, self.cfg.lcblstm_config()
            )
        return y


def run_stream(session: StreamingSession, chunks: Iterable, flush: bool = True) -> list[np.ndarray]:
    """Deliver ``chunks`` in order; returns every emitted block (flush included)."""
    blocks = []
    for chunk in chunks:
        blocks.extend(session.accept(chunk))
    if flush:
        blocks.extend(session.flush())
    return blocks


def concat_blocks(blocks: list[np.ndarray], dim: int) -> np.ndarray:
    return np.concatenate(blocks) if blocks else np.zeros((0, dim), DTYPE)


def chunked(data: np.ndarray, size: int):
    for start in range(0, data.shape[0], size):
        yield data[start : start + size]
