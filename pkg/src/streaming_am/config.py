"""Encoder configurations, named presets, parameter counting and weight init."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .emformer import EmformerConfig
from .errors import ConfigError
from .frontend import FrontendConfig, FrontendOrder
from .numerics import DTYPE
from .recurrent import LcblstmConfig, LstmLayerWeights
from .transformer import TransformerStackWeights
from .weights import WeightSet

FAMILIES = ("lstm", "lcblstm", "transformer_offline", "emformer", "amtrf")
ATTENTION_FAMILIES = ("transformer_offline", "emformer", "amtrf")


@dataclass(frozen=True)
class EncoderConfig:
    """Full architectural description of one encoder.

    ``model_dim`` is the transformer width, or the LSTM cells per direction
    for the recurrent families. Geometry is in milliseconds; for ``lstm``,
    ``c_ms`` is the forward batch. ``subsample`` lists (layer, factor)
    decimations applied to a layer's output. ``output_units`` sizes the
    classification layer that sits on top of the encoder; it only enters
    parameter counts.
    """

    family: str
    layers: int
    model_dim: int
    name: str = "custom"
    input_dim: int = 80
    input_rate_ms: int = 10
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    heads: int = 0
    head_dim: int = 0
    ffn_dim: int = 0
    c_ms: int = 0
    r_ms: int = 0
    l_ms: int = 0
    memory: int = 0
    subsample: tuple[tuple[int, int], ...] = ()
    output_units: int = 0
    quantized: bool = False

    def __post_init__(self):
        if isinstance(self.frontend, dict):
            object.__setattr__(self, "frontend", FrontendConfig(**self.frontend))
        object.__setattr__(self, "subsample", tuple((int(a), int(b)) for a, b in self.subsample))
        self.validate()

    # geometry

    @property
    def frame_rate_ms(self) -> int:
        """Frame rate after the frontend; all geometry is expressed in it."""
        return self.frontend.output_rate_ms(self.input_rate_ms)

    def _frames(self, ms: int, what: str) -> int:
        if ms % self.frame_rate_ms:
            raise ConfigError(
                f"{self.name}: {what} of {ms} ms is not a multiple of the {self.frame_rate_ms} ms frame rate"
            )
        return ms // self.frame_rate_ms

    @property
    def center_frames(self) -> int:
        return self._frames(self.c_ms, "centre segment")

    @property
    def right_frames(self) -> int:
        return self._frames(self.r_ms, "right context")

    @property
    def left_frames(self) -> int:
        return self._frames(self.l_ms, "left context")

    @property
    def frontend_dim(self) -> int:
        return self.frontend.output_dim(self.input_dim)

    @property
    def stride(self) -> int:
        s = 1
        for _, f in self.subsample:
            s *= f
        return s

    @property
    def output_dim(self) -> int:
        return 2 * self.model_dim if self.family == "lcblstm" else self.model_dim

    @property
    def output_rate_ms(self) -> int:
        return self.frame_rate_ms * self.stride

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown encoder family {self.family!r}; expected one of {FAMILIES}")
        if self.layers < 1 or self.model_dim < 1:
            raise ConfigError(f"{self.name}: layers and model_dim must be positive")
        if any(not 0 <= n < self.layers or f < 2 for n, f in self.subsample):
            raise ConfigError(f"{self.name}: bad subsample spec {self.subsample}")
        if self.family in ATTENTION_FAMILIES:
            if self.heads * self.head_dim != self.model_dim:
                raise ConfigError(f"{self.name}: heads*head_dim must equal model_dim")
            if self.ffn_dim < 1:
                raise ConfigError(f"{self.name}: ffn_dim must be positive")
            if self.frontend_dim != self.model_dim:
                raise ConfigError(
                    f"{self.name}: frontend produces {self.frontend_dim}-dim frames, model expects {self.model_dim}"
                )
            if self.subsample:
                raise ConfigError(f"{self.name}: attention encoders do not subsample")
        if self.family == "transformer_offline":
            return
        if self.c_ms <= 0:
            raise ConfigError(f"{self.name}: c_ms must be positive for family {self.family}")
        for ms in (self.c_ms, self.r_ms, self.l_ms):
            if ms < 0:
                raise ConfigError(f"{self.name}: geometry must be non-negative")
        self.center_frames, self.right_frames, self.left_frames  # divisibility checks
        if self.family == "lstm" and (self.r_ms or self.l_ms or self.memory):
            raise ConfigError(f"{self.name}: unidirectional LSTM takes no right/left context or memory")
        if self.family == "lcblstm":
            if any(f != 2 for _, f in self.subsample):
                raise ConfigError(f"{self.name}: LCBLSTM subsampling is 2:1 only")
            self.lcblstm_config()
        if self.family in ("emformer", "amtrf"):
            self.emformer_config()

    def emformer_config(self) -> EmformerConfig:
        return EmformerConfig(
            layers=self.layers,
            model_dim=self.model_dim,
            heads=self.heads,
            head_dim=self.head_dim,
            ffn_dim=self.ffn_dim,
            center=self.center_frames,
            right=self.right_frames,
            left=self.left_frames,
            memory=self.memory,
        )

    def lcblstm_config(self) -> LcblstmConfig:
        return LcblstmConfig(
            layers=self.layers,
            hidden_per_direction=self.model_dim,
            center_frames=self.center_frames,
            right_frames=self.right_frames,
            subsample_after=tuple(n for n, _ in self.subsample),
        )

    # serialisation

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frontend"] = self.frontend.to_dict()
        d["subsample"] = [list(p) for p in self.subsample]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        if "frontend" in d and isinstance(d["frontend"], dict):
            d["frontend"] = FrontendConfig(**d["frontend"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def with_(self, **changes) -> "EncoderConfig":
        return replace(self, **changes)


_EMFORMER_FRONTEND = FrontendConfig(projection=128, stack=4, order=FrontendOrder.PROJECT_THEN_STACK)

PRESETS: dict[str, EncoderConfig] = {
    "assistant-lstm": EncoderConfig(
        name="assistant-lstm",
        family="lstm",
        layers=5,
        model_dim=1200,
        frontend=FrontendConfig(lookahead_stack=7, order=FrontendOrder.LOOKAHEAD_THEN_PASSTHROUGH),
        c_ms=100,
        subsample=((0, 4),),
        output_units=8000,
    ),
    "assistant-emformer-140": EncoderConfig(
        name="assistant-emformer-140",
        family="emformer",
        layers=18,
        model_dim=512,
        heads=8,
        head_dim=64,
        ffn_dim=2048,
        frontend=_EMFORMER_FRONTEND,
        c_ms=120,
        r_ms=80,
        l_ms=800,
        memory=0,
        output_units=8000,
    ),
    "assistant-emformer-80": EncoderConfig(
        name="assistant-emformer-80",
        family="emformer",
        layers=18,
        model_dim=512,
        heads=8,
        head_dim=64,
        ffn_dim=2048,
        frontend=_EMFORMER_FRONTEND,
        c_ms=80,
        r_ms=40,
        l_ms=800,
        memory=0,
        output_units=8000,
    ),
    "video-vi-emformer": EncoderConfig(
        name="video-vi-emformer",
        family="emformer",
        layers=26,
        model_dim=512,
        heads=8,
        head_dim=64,
        ffn_dim=2048,
        frontend=_EMFORMER_FRONTEND,
        c_ms=1480,
        r_ms=320,
        l_ms=800,
        memory=4,
    ),
    "video-de-es-emformer": EncoderConfig(
        name="video-de-es-emformer",
        family="emformer",
        layers=26,
        model_dim=512,
        heads=8,
        head_dim=64,
        ffn_dim=2048,
        frontend=_EMFORMER_FRONTEND,
        c_ms=800,
        r_ms=320,
        l_ms=800,
        memory=4,
    ),
    "video-en-emformer-stride8": EncoderConfig(
        name="video-en-emformer-stride8",
        family="emformer",
        layers=36,
        model_dim=512,
        heads=8,
        head_dim=64,
        ffn_dim=2048,
        frontend=FrontendConfig(projection=64, stack=8, order=FrontendOrder.PROJECT_THEN_STACK),
        c_ms=800,
        r_ms=320,
        l_ms=800,
        memory=4,
    ),
    "video-en-lcblstm": EncoderConfig(
        name="video-en-lcblstm",
        family="lcblstm",
        layers=6,
        model_dim=1000,
        c_ms=800,
        r_ms=320,
        subsample=((0, 2), (1, 2), (2, 2)),
    ),
}


def load_preset(name: str) -> EncoderConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; known presets: {', '.join(PRESETS)}") from None


def tensor_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """Every tensor the encoder needs, by name (the output layer is not included)."""
    shapes = dict(cfg.frontend.tensor_shapes(cfg.input_dim))
    if cfg.family in ATTENTION_FAMILIES:
        shapes.update(TransformerStackWeights.tensor_shapes(cfg.layers, cfg.model_dim, cfg.ffn_dim))
        return shapes
    dim = cfg.frontend_dim
    for n in range(cfg.layers):
        if cfg.family == "lstm":
            shapes.update(LstmLayerWeights.tensor_shapes(f"layers.{n}", dim, cfg.model_dim))
            dim = cfg.model_dim
        else:
            for direction in ("fwd", "bwd"):
                shapes.update(LstmLayerWeights.tensor_shapes(f"layers.{n}.{direction}", dim, cfg.model_dim))
            dim = 2 * cfg.model_dim
    return shapes


@dataclass(frozen=True)
class ParameterCount:
    encoder: int
    output_layer: int

    @property
    def total(self) -> int:
        return self.encoder + self.output_layer


def count_parameters(cfg: EncoderConfig) -> ParameterCount:
    encoder = sum(int(np.prod(s)) for s in tensor_shapes(cfg).values())
    output = (cfg.output_dim + 1) * cfg.output_units if cfg.output_units else 0
    return ParameterCount(encoder, output)


def init_weights(cfg: EncoderConfig, seed: int = 0) -> WeightSet:
    """Random weights with fan-in scaling; norm gains jittered around 1."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in tensor_shapes(cfg).items():
        if name.endswith(".gain"):
            t = 1.0 + 0.1 * rng.standard_normal(shape)
        elif len(shape) == 2:
            t = rng.standard_normal(shape, dtype=np.float32) / np.float32(np.sqrt(shape[1]))
        else:
            t = 0.1 * rng.standard_normal(shape)
        tensors[name] = np.asarray(t, dtype=DTYPE)
    return WeightSet(tensors)


def check_weights(cfg: EncoderConfig, weights: WeightSet) -> None:
    expected = tensor_shapes(cfg)
    weights.require(expected)
    for name, shape in expected.items():
        if tuple(weights[name].shape) != shape:
            raise ConfigError(f"tensor {name!r} has shape {tuple(weights[name].shape)}, config expects {shape}")
