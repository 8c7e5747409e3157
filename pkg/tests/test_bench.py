import numpy as np
import pytest

from conftest import random_features, small_config
from streaming_am.bench import BusyWorkSession, RtfReport, load_corpus, measure_rtf
from streaming_am.config import init_weights
from streaming_am.errors import ConfigError, FormatError
from streaming_am.formats import write_features
from streaming_am.streamer import Encoder


def corpus(rng, n=4, frames=40):
    return [(f"u{i}", random_features(rng, frames + 7 * i)) for i in range(n)]


@pytest.mark.parametrize("workers", [1, 2])
def test_benchmarked_emissions_equal_plain_encoding(rng, workers):
    cfg = small_config("emformer")
    w = init_weights(cfg, seed=4)
    utts = corpus(rng)
    seen = []
    report = measure_rtf(cfg, w, utts, concurrency=3, workers_per_stream=workers, chunk_frames=7, consumer=seen.append)
    enc = Encoder(cfg, w)
    for uid, seq in utts:
        assert np.array_equal(report.embeddings[uid], enc.encode(seq).data)
    assert sum(r.blocks for r in report.rows) == len(seen)


def test_accounting(rng):
    cfg = small_config("lstm")
    report = measure_rtf(cfg, init_weights(cfg), corpus(rng, 3), concurrency=2)
    assert [r.utterance for r in report.rows] == ["u0", "u1", "u2"]
    for row in report.rows:
        assert row.wall_ms >= row.encode_ms >= 0
        assert row.handoff_ms == pytest.approx(row.wall_ms - row.encode_ms)
        assert row.rtf == row.wall_ms / row.audio_ms
    assert [r.audio_ms for r in report.rows] == [400.0, 470.0, 540.0]


def test_quantized_bench_flagged(rng):
    cfg = small_config("emformer")
    w = init_weights(cfg)
    utts = corpus(rng, 2)
    q = measure_rtf(cfg, w.quantized(), utts, concurrency=1)
    f = measure_rtf(cfg, w, utts, concurrency=1)
    assert q.quantized and not f.quantized
    for uid, _ in utts:
        assert q.embeddings[uid].shape == f.embeddings[uid].shape
        assert not np.array_equal(q.embeddings[uid], f.embeddings[uid])


def test_stub_calibration_concurrency_one(rng):
    ms_per_frame = 2.0  # 10 ms frames -> expected RTF 0.2
    utts = corpus(rng, 3, frames=50)
    report = measure_rtf(None, None, utts, concurrency=1, session_factory=lambda: BusyWorkSession(ms_per_frame))
    expected = ms_per_frame / 10
    assert abs(report.aggregate()["pooled_rtf"] - expected) / expected <= 0.2
    for uid, seq in utts:
        assert np.array_equal(report.embeddings[uid], seq.data)


def test_report_round_trip_recomputes_aggregate(tmp_path, rng):
    cfg = small_config("emformer")
    report = measure_rtf(cfg, init_weights(cfg), corpus(rng, 3), concurrency=2)
    report.write(tmp_path / "r.jsonl")
    rebuilt, stored = RtfReport.from_lines((tmp_path / "r.jsonl").read_text())
    assert rebuilt.aggregate() == stored
    assert len((tmp_path / "r.jsonl").read_text().splitlines()) == 4


def test_report_without_aggregate():
    with pytest.raises(FormatError):
        RtfReport.from_lines('{"record": "utterance", "utterance": "a", "audio_ms": 1, "wall_ms": 1, '
                             '"encode_ms": 1, "handoff_ms": 0, "blocks": 1, "frames_out": 1, "rtf": 1}\n')


def test_load_corpus(tmp_path, rng):
    with pytest.raises(FormatError):
        load_corpus(tmp_path)
    for uid, seq in corpus(rng, 2):
        write_features(tmp_path / f"{uid}.fea", seq)
    assert [uid for uid, _ in load_corpus(tmp_path)] == ["u0", "u1"]


def test_invalid_bench_arguments(rng):
    cfg = small_config("emformer")
    w = init_weights(cfg)
    with pytest.raises(ConfigError):
        measure_rtf(cfg, w, corpus(rng, 1), concurrency=0)
    with pytest.raises(ConfigError):
        measure_rtf(cfg, w, corpus(rng, 1), workers_per_stream=3)
    with pytest.raises(ConfigError):
        measure_rtf(cfg, w, [])
