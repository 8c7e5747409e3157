"""Streaming acoustic-encoder inference with block-processed attention and LSTMs."""

from .config import EncoderConfig, PRESETS, count_parameters, init_weights, load_preset
from .emformer import EmformerConfig, EmformerStreamState, emformer_forward, emformer_segment_forward
from .errors import (
    ConfigError,
    ContractError,
    FormatError,
    MissingTensorError,
    ShapeError,
    StreamClosedError,
    StreamingAMError,
)
from .frontend import FeatureSequence, FrontendConfig, apply_frontend
from .quant import QuantizedMatrix, quantize_per_channel, quantized_matvec
from .streamer import EilReport, Encoder, StreamingSession, compute_eil, run_stream
from .weights import WeightSet

__version__ = "0.1.0"
