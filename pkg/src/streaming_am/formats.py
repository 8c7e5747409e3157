"""On-disk formats: FEA1 feature files and model bundles.

See docs/formats.md for the byte layouts.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import EncoderConfig, check_weights
from .errors import ConfigError, FormatError, MissingTensorError
from .frontend import FeatureSequence
from .quant import DTYPE_TAG, QuantizedMatrix
from .weights import WeightSet

MAGIC = b"FEA1"
HEADER = struct.Struct("<4sIII")
MANIFEST = "manifest.json"
BLOB = "tensors.bin"
BUNDLE_FORMAT = "streaming-am-bundle"
ALIGN = 8


def feature_bytes(seq: FeatureSequence) -> bytes:
    header = HEADER.pack(MAGIC, seq.frames, seq.dim, seq.frame_rate_ms)
    return header + seq.data.astype("<f4").tobytes()


def write_features(path, seq: FeatureSequence) -> None:
    Path(path).write_bytes(feature_bytes(seq))


def parse_features(raw: bytes) -> FeatureSequence:
    if len(raw) < HEADER.size:
        raise FormatError(f"truncated header: {len(raw)} of {HEADER.size} bytes", offset=len(raw))
    magic, frames, dim, rate = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if rate == 0:
        raise FormatError("frame_rate_ms must be positive", offset=12)
    expected = HEADER.size + 4 * frames * dim
    if len(raw) != expected:
        raise FormatError(
            f"payload length mismatch: header declares {frames}x{dim} floats ({expected} bytes), file has {len(raw)}",
            offset=min(len(raw), expected),
        )
    data = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(frames, dim)
    bad = np.flatnonzero(~np.isfinite(data.ravel()))
    if bad.size:
        raise FormatError("non-finite feature value", offset=HEADER.size + 4 * int(bad[0]))
    return FeatureSequence(data.astype(np.float32), int(rate))


def read_features(path) -> FeatureSequence:
    return parse_features(Path(path).read_bytes())


def _pad(n: int, align: int = ALIGN) -> int:
    return (-n) % align


def _encode_tensor(t) -> tuple[str, bytes]:
    if isinstance(t, QuantizedMatrix):
        body = t.payload.tobytes()
        body += b"\0" * _pad(len(body), 4)
        body += t.scale.astype("<f4").tobytes() + t.zero_point.astype("<i4").tobytes()
        return DTYPE_TAG, body
    return "f32", np.asarray(t).astype("<f4").tobytes()


def _decode_tensor(entry: dict, blob: bytes):
    name, shape, dtype = entry["name"], tuple(entry["shape"]), entry["dtype"]
    off, nbytes = entry["offset"], entry["nbytes"]
    raw = blob[off : off + nbytes]
    count = int(np.prod(shape)) if shape else 1
    if dtype == "f32":
        if nbytes != 4 * count:
            raise FormatError(f"tensor {name!r}: {nbytes} bytes for f32 shape {shape}", offset=off)
        return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    if dtype == DTYPE_TAG:
        if len(shape) != 2:
            raise FormatError(f"tensor {name!r}: {DTYPE_TAG} requires a 2-D shape", offset=off)
        rows, cols = shape
        payload_end = rows * cols
        scale_at = payload_end + _pad(payload_end, 4)
        if nbytes != scale_at + 8 * rows:
            raise FormatError(f"tensor {name!r}: {nbytes} bytes inconsistent with {DTYPE_TAG} {shape}", offset=off)
        payload = np.frombuffer(raw, dtype=np.int8, count=payload_end).reshape(rows, cols).copy()
        scale = np.frombuffer(raw, dtype="<f4", count=rows, offset=scale_at).astype(np.float32)
        zp = np.frombuffer(raw, dtype="<i4", count=rows, offset=scale_at + 4 * rows).astype(np.int32)
        try:
            return QuantizedMatrix(payload, scale, zp)
        except ValueError as e:
            raise FormatError(f"tensor {name!r}: {e}", offset=off) from None
    raise FormatError(f"tensor {name!r}: unknown dtype {dtype!r}")


def save_bundle(path, cfg: EncoderConfig, weights: WeightSet) -> None:
    """Write ``manifest.json`` plus one ``tensors.bin`` blob into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, parts, offset = [], [], 0
    for name, t in weights.items():
        dtype, body = _encode_tensor(t)
        entries.append(
            {"name": name, "shape": list(t.shape), "dtype": dtype, "offset": offset, "nbytes": len(body)}
        )
        parts.append(body + b"\0" * _pad(len(body)))
        offset += len(parts[-1])
    manifest = {
        "format": BUNDLE_FORMAT,
        "version": 1,
        "byte_order": "little",
        "config": cfg.to_dict(),
        "blob": BLOB,
        "tensors": entries,
    }
    (path / BLOB).write_bytes(b"".join(parts))
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")


def load_bundle(path, require_complete: bool = True) -> tuple[EncoderConfig, WeightSet]:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
    except FileNotFoundError:
        raise FormatError(f"{path}: no {MANIFEST}") from None
    except json.JSONDecodeError as e:
        raise FormatError(f"{path / MANIFEST}: invalid JSON: {e.msg}", offset=e.pos) from None
    if manifest.get("format") != BUNDLE_FORMAT:
        raise FormatError(f"{path}: not a {BUNDLE_FORMAT} manifest")
    try:
        blob = (path / manifest.get("blob", BLOB)).read_bytes()
    except FileNotFoundError:
        raise FormatError(f"{path}: tensor blob missing") from None
    try:
        cfg = EncoderConfig.from_dict(manifest["config"])
    except (KeyError, TypeError) as e:
        raise FormatError(f"{path}: bad config block: {e}") from None
    tensors = {}
    end = 0
    for entry in manifest["tensors"]:
        off, nbytes = entry["offset"], entry["nbytes"]
        if off < end:
            raise FormatError(f"tensor {entry['name']!r} overlaps its predecessor", offset=off)
        if off + nbytes > len(blob):
            raise FormatError(f"tensor {entry['name']!r} runs past the end of the blob", offset=off)
        if entry["name"] in tensors:
            raise FormatError(f"duplicate tensor {entry['name']!r}", offset=off)
        tensors[entry["name"]] = _decode_tensor(entry, blob)
        end = off + nbytes
    weights = WeightSet(tensors)
    if require_complete:
        try:
            check_weights(cfg, weights)
        except (MissingTensorError, ConfigError) as e:
            raise FormatError(f"{path}: {e}") from None
    return cfg, weights
