"""Real-time-factor measurement with concurrent streams.

Each utterance gets two workers: an encoder thread that delivers feature
chunks to a streaming session, and a consumer thread that drains emitted
blocks from a bounded queue (standing in for the search thread).
"""

from __future__ import annotations

import json
import queue
import threading
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .frontend import FeatureSequence
from .streamer import Encoder, chunked

DEFAULT_CONCURRENCY = 10
QUEUE_SIZE = 8
_DONE = object()


@dataclass(frozen=True)
class UtteranceTiming:
    utterance: str
    audio_ms: float
    wall_ms: float
    encode_ms: float
    handoff_ms: float
    blocks: int
    frames_out: int

    @property
    def rtf(self) -> float:
        return self.wall_ms / self.audio_ms

    def to_record(self) -> dict:
        return {"record": "utterance", **asdict(self), "rtf": self.rtf}


@dataclass
class RtfReport:
    rows: list[UtteranceTiming]
    concurrency: int
    workers_per_stream: int
    quantized: bool = False
    preset: str = "custom"
    embeddings: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def aggregate(self) -> dict:
        rtfs = np.array([r.rtf for r in self.rows])
        audio = sum(r.audio_ms for r in self.rows)
        wall = sum(r.wall_ms for r in self.rows)
        return {
            "record": "aggregate",
            "utterances": len(self.rows),
            "mean_rtf": float(rtfs.mean()),
            "p50_rtf": float(np.percentile(rtfs, 50)),
            "p95_rtf": float(np.percentile(rtfs, 95)),
            "total_audio_ms": audio,
            "total_wall_ms": wall,
            "pooled_rtf": wall / audio,
            "concurrency": self.concurrency,
            "workers_per_stream": self.workers_per_stream,
            "quantized": self.quantized,
            "preset": self.preset,
        }

    def to_lines(self) -> str:
        lines = [json.dumps(r.to_record(), sort_keys=True) for r in self.rows]
        lines.append(json.dumps(self.aggregate(), sort_keys=True))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_lines())

    @classmethod
    def from_lines(cls, text: str) -> tuple["RtfReport", dict]:
        """Parse a report file; returns the rebuilt report and the stored aggregate."""
        rows, agg = [], None
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.pop("record")
            if kind == "utterance":
                rec.pop("rtf")
                rows.append(UtteranceTiming(**rec))
            elif kind == "aggregate":
                agg = rec
        if agg is None:
            raise FormatError("report has no aggregate record")
        report = cls(rows, agg["concurrency"], agg["workers_per_stream"], agg["quantized"], agg["preset"])
        return report, {"record": "aggregate", **agg}


def load_corpus(directory) -> list[tuple[str, FeatureSequence]]:
    from .formats import read_features

    paths = sorted(Path(directory).glob("*.fea"))
    if not paths:
        raise FormatError(f"no .fea feature files in {directory}")
    return [(p.stem, read_features(p)) for p in paths]


class BusyWorkSession:
    """Calibration stub: spins for a fixed time per input frame, echoes input."""

    def __init__(self, ms_per_frame: float):
        self.ms_per_frame = ms_per_frame

    def accept(self, chunk) -> list[np.ndarray]:
        deadline = time.perf_counter() + chunk.shape[0] * self.ms_per_frame / 1000
        while time.perf_counter() < deadline:
            pass
        return [np.array(chunk, copy=True)] if chunk.shape[0] else []

    def flush(self) -> list[np.ndarray]:
        return []


def _run_utterance(utt_id, seq, factory, chunk_frames, workers_per_stream, consumer):
    session = factory()
    emitted: list[np.ndarray] = []

    def drain(block):
        emitted.append(block)
        if consumer is not None:
            consumer(block)

    q: queue.Queue | None = None
    worker = None
    if workers_per_stream == 2:
        q = queue.Queue(maxsize=QUEUE_SIZE)

        def consume():
            while (item := q.get()) is not _DONE:
                drain(item)

        worker = threading.Thread(target=consume, name=f"consumer-{utt_id}", daemon=True)
        worker.start()
    send = q.put if q is not None else drain

    encode = 0.0
    t0 = time.perf_counter()
    for chunk in chunked(seq.data, chunk_frames):
        t = time.perf_counter()
        blocks = session.accept(chunk)
        encode += time.perf_counter() - t
        for b in blocks:
            send(b)
    t = time.perf_counter()
    blocks = session.flush()
    encode += time.perf_counter() - t
    for b in blocks:
        send(b)
    if q is not None:
        q.put(_DONE)
        worker.join()
    wall = time.perf_counter() - t0

    out = np.concatenate(emitted) if emitted else np.zeros((0, seq.dim), np.float32)
    timing = UtteranceTiming(
        utterance=utt_id,
        audio_ms=float(seq.duration_ms),
        wall_ms=wall * 1000,
        encode_ms=encode * 1000,
        handoff_ms=(wall - encode) * 1000,
        blocks=len(emitted),
        frames_out=out.shape[0],
    )
    return timing, out


def measure_rtf(
    cfg,
    weights,
    corpus: Sequence[tuple[str, FeatureSequence]],
    concurrency: int = DEFAULT_CONCURRENCY,
    workers_per_stream: int = 2,
    chunk_frames: int = 10,
    consumer: Callable[[np.ndarray], None] | None = None,
    session_factory: Callable[[], object] | None = None,
) -> RtfReport:
    """Decode ``corpus`` with ``concurrency`` simultaneous streams.

    Wall time runs from the first chunk delivery to the end of draining the
    final flush emission. ``session_factory`` replaces the encoder (used
    for calibration stubs); otherwise ``cfg``/``weights`` build one.
    """
    if concurrency < 1:
        raise ConfigError(f"concurrency must be >= 1, got {concurrency}")
    if workers_per_stream not in (1, 2):
        raise ConfigError(f"workers_per_stream must be 1 or 2, got {workers_per_stream}")
    if not corpus:
        raise ConfigError("empty corpus")
    if session_factory is None:
        encoder = Encoder(cfg, weights)
        session_factory = encoder.open_stream
        quantized, preset = encoder.weights.is_quantized, cfg.name
    else:
        quantized = bool(weights is not None and weights.is_quantized)
        preset = cfg.name if cfg is not None else "stub"
    with ThreadPoolExecutor(max_workers=concurrency, thread_name_prefix="stream") as pool:
        futures = [
            pool.submit(_run_utterance, uid, seq, session_factory, chunk_frames, workers_per_stream, consumer)
            for uid, seq in corpus
        ]
        results = [f.result() for f in futures]
    report = RtfReport([t for t, _ in results], concurrency, workers_per_stream, quantized, preset)
    report.embeddings = {t.utterance: out for t, out in results}
    return report
