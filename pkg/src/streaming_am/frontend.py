"""Feature frontends: projection, frame stacking and look-ahead stacking."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import DTYPE, as_matrix, linear


@dataclass(frozen=True)
class FeatureSequence:
    """A (frames x dim) float32 matrix plus its frame rate."""

    data: np.ndarray
    frame_rate_ms: int = 10

    def __post_init__(self):
        if self.frame_rate_ms <= 0:
            raise ShapeError(f"frame_rate_ms must be positive, got {self.frame_rate_ms}")
        object.__setattr__(self, "data", as_matrix(self.data, name="features"))

    @classmethod
    def empty(cls, dim: int, frame_rate_ms: int = 10) -> "FeatureSequence":
        return cls(np.zeros((0, dim), DTYPE), frame_rate_ms)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def duration_ms(self) -> int:
        return self.frames * self.frame_rate_ms


class FrontendOrder(str, enum.Enum):
    PROJECT_THEN_STACK = "project_then_stack"
    STACK_ONLY = "stack_only"
    LOOKAHEAD_THEN_PASSTHROUGH = "lookahead_then_passthrough"


@dataclass(frozen=True)
class FrontendConfig:
    projection: int | None = None
    stack: int = 1
    lookahead_stack: int = 0
    order: FrontendOrder = FrontendOrder.STACK_ONLY
    weight_name: str = "frontend.proj"

    def __post_init__(self):
        object.__setattr__(self, "order", FrontendOrder(self.order))
        if self.stack < 1:
            raise ConfigError(f"stack must be >= 1, got {self.stack}")
        if self.lookahead_stack < 0:
            raise ConfigError(f"lookahead_stack must be >= 0, got {self.lookahead_stack}")
        if self.order is FrontendOrder.LOOKAHEAD_THEN_PASSTHROUGH:
            if self.projection is not None or self.stack != 1:
                raise ConfigError("look-ahead frontends take no projection and stack=1")
        elif self.lookahead_stack:
            raise ConfigError(f"lookahead_stack requires order {FrontendOrder.LOOKAHEAD_THEN_PASSTHROUGH.value}")
        if self.order is FrontendOrder.STACK_ONLY and self.projection is not None:
            raise ConfigError("stack_only frontends take no projection")

    def output_dim(self, input_dim: int) -> int:
        if self.order is FrontendOrder.LOOKAHEAD_THEN_PASSTHROUGH:
            return input_dim * (self.lookahead_stack + 1)
        return (self.projection or input_dim) * self.stack

    def output_rate_ms(self, input_rate_ms: int) -> int:
        return input_rate_ms * self.stack

    @property
    def lookahead_frames(self) -> int:
        return self.lookahead_stack

    def tensor_shapes(self, input_dim: int) -> dict[str, tuple[int, ...]]:
        if self.projection is None:
            return {}
        return {
            f"{self.weight_name}.weight": (self.projection, input_dim),
            f"{self.weight_name}.bias": (self.projection,),
        }

    def to_dict(self) -> dict:
        return {
            "projection": self.projection,
            "stack": self.stack,
            "lookahead_stack": self.lookahead_stack,
            "order": self.order.value,
        }


def project(data: np.ndarray, cfg: FrontendConfig, weights) -> np.ndarray:
    if cfg.projection is None:
        return data
    w = weights[f"{cfg.weight_name}.weight"]
    b = weights[f"{cfg.weight_name}.bias"]
    if w.shape[1] != data.shape[1]:
        raise ShapeError(f"frontend projection expects dim {w.shape[1]}, got {data.shape[1]}")
    return linear(data, w, b)


def stack_frames(data: np.ndarray, n: int) -> np.ndarray:
    """Concatenate each run of ``n`` frames; a trailing partial group is dropped."""
    groups = data.shape[0] // n
    return np.ascontiguousarray(data[: groups * n].reshape(groups, n * data.shape[1]))


def lookahead_rows(data: np.ndarray, future: int, total: int | None = None) -> np.ndarray:
    """Rows t..t+future concatenated for t < ``total``; missing frames are zeros."""
    frames, dim = data.shape
    total = frames if total is None else total
    padded = np.zeros((total + future, dim), DTYPE)
    padded[: min(frames, total + future)] = data[: total + future]
    out = np.empty((total, dim * (future + 1)), DTYPE)
    for j in range(future + 1):
        out[:, j * dim : (j + 1) * dim] = padded[j : j + total]
    return out


def lstm_lookahead_stack(seq: FeatureSequence, future: int) -> FeatureSequence:
    if future < 0:
        raise ConfigError(f"future must be >= 0, got {future}")
    if future == 0:
        return seq
    return FeatureSequence(lookahead_rows(seq.data, future), seq.frame_rate_ms)


def apply_frontend(seq: FeatureSequence, cfg: FrontendConfig, weights) -> FeatureSequence:
    if cfg.order is FrontendOrder.LOOKAHEAD_THEN_PASSTHROUGH:
        return lstm_lookahead_stack(seq, cfg.lookahead_stack)
    data = project(seq.data, cfg, weights)
    return FeatureSequence(stack_frames(data, cfg.stack), cfg.output_rate_ms(seq.frame_rate_ms))


class StreamingFrontend:
    """Incremental ``apply_frontend``: concatenated outputs equal the batch result."""

    def __init__(self, cfg: FrontendConfig, weights, input_dim: int):
        self.cfg = cfg
        self.weights = weights
        self.input_dim = input_dim
        self._pending = np.zeros((0, cfg.projection or input_dim), DTYPE)
        self._emitted = 0  # look-ahead mode: output frames already produced

    def push(self, chunk: np.ndarray) -> np.ndarray:
        if chunk.shape[1] != self.input_dim:
            raise ShapeError(f"feature chunk has dim {chunk.shape[1]}, expected {self.input_dim}")
        cfg = self.cfg
        if cfg.order is FrontendOrder.LOOKAHEAD_THEN_PASSTHROUGH:
            self._pending = np.concatenate([self._pending, chunk])
            ready = self._pending.shape[0] - cfg.lookahead_stack
            if ready <= 0:
                return np.zeros((0, cfg.output_dim(self.input_dim)), DTYPE)
            out = lookahead_rows(self._pending, cfg.lookahead_stack, ready)
            self._pending = self._pending[ready:]
            return out
        self._pending = np.concatenate([self._pending, project(chunk, cfg, self.weights)])
        groups = self._pending.shape[0] // cfg.stack
        out = stack_frames(self._pending, cfg.stack)
        self._pending = self._pending[groups * cfg.stack :]
        return out

    def flush(self) -> np.ndarray:
        cfg = self.cfg
        if cfg.order is FrontendOrder.LOOKAHEAD_THEN_PASSTHROUGH:
            out = lookahead_rows(self._pending, cfg.lookahead_stack)
        else:
            out = np.zeros((0, cfg.output_dim(self.input_dim)), DTYPE)
        self._pending = self._pending[:0]
        return out
