"""``streaming-am`` command-line entry point.

Exit codes: 0 ok, 1 verification failure, 2 usage or format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import bench, config, formats, streamer, verify
from .errors import ConfigError, StreamingAMError
from .frontend import FeatureSequence

log = logging.getLogger("streaming_am")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _encode(cfg, weights, seq: FeatureSequence, streaming: bool, chunk_frames: int) -> FeatureSequence:
    enc = streamer.Encoder(cfg, weights)
    if not streaming:
        return enc.encode(seq)
    blocks = streamer.run_stream(enc.open_stream(), streamer.chunked(seq.data, chunk_frames))
    return FeatureSequence(streamer.concat_blocks(blocks, enc.output_dim), cfg.output_rate_ms)


def cmd_run(args) -> int:
    cfg, weights = formats.load_bundle(args.model)
    seq = formats.read_features(args.features)
    out = _encode(cfg, weights, seq, args.streaming, args.chunk_frames)
    formats.write_features(args.out, out)
    log.info("wrote %d x %d embeddings to %s", out.frames, out.dim, args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    t0 = time.perf_counter()
    results = verify.run_suite(args.preset, args.seed)
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print(f"{'ALL PASS' if ok else 'FAILED'}  preset={args.preset} seed={args.seed} ({time.perf_counter() - t0:.1f}s)")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_bench(args) -> int:
    cfg, weights = formats.load_bundle(args.model)
    if args.quantized:
        missing = weights.float_matrices()
        if missing:
            raise ConfigError(f"--quantized requested but these tensors are not {formats.DTYPE_TAG}: {', '.join(missing)}")
    elif weights.is_quantized:
        log.info("bundle is quantized; benchmarking the int8 path")
    corpus = bench.load_corpus(args.corpus)
    report = bench.measure_rtf(
        cfg,
        weights,
        corpus,
        concurrency=args.concurrency,
        workers_per_stream=args.workers_per_stream,
        chunk_frames=args.chunk_frames,
    )
    report.write(args.out)
    agg = report.aggregate()
    print(f"{agg['utterances']} utterances  mean RTF {agg['mean_rtf']:.4f}  p95 {agg['p95_rtf']:.4f}  -> {args.out}")
    return EXIT_OK


def cmd_eil(args) -> int:
    if args.model:
        cfg, _ = formats.load_bundle(args.model, require_complete=False)
    else:
        cfg = config.load_preset(args.preset)
    print(json.dumps({"name": cfg.name, **streamer.compute_eil(cfg).to_dict()}, indent=2))
    return EXIT_OK


def cmd_quantize(args) -> int:
    cfg, weights = formats.load_bundle(args.model)
    q = weights.quantized()
    formats.save_bundle(args.out, cfg.with_(quantized=True), q)
    print(f"quantized {len(q.matrix_names)} matrices -> {args.out}")
    return EXIT_OK


def cmd_init(args) -> int:
    if args.config:
        cfg = config.EncoderConfig.from_dict(json.loads(Path(args.config).read_text()))
    else:
        cfg = config.load_preset(args.preset)
    weights = config.init_weights(cfg, args.seed)
    formats.save_bundle(args.out, cfg, weights)
    print(f"{cfg.name}: {weights.num_parameters()} parameters -> {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    """Random feature files, handy for smoke tests and benchmarks."""
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        data = rng.standard_normal((args.frames, args.dim)).astype(np.float32)
        formats.write_features(out / f"utt{i:04d}.fea", FeatureSequence(data, args.frame_rate_ms))
    print(f"wrote {args.count} feature files to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streaming-am", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="encode a feature file")
    r.add_argument("--model", required=True)
    r.add_argument("--features", required=True)
    r.add_argument("--out", required=True)
    mode = r.add_mutually_exclusive_group(required=True)
    mode.add_argument("--streaming", action="store_true")
    mode.add_argument("--batch", action="store_true")
    r.add_argument("--chunk-frames", type=int, default=10, help="input frames per delivered chunk")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run the cross-module property suite")
    v.add_argument("--preset", required=True)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="measure real-time factors")
    b.add_argument("--model", required=True)
    b.add_argument("--corpus", required=True, help="directory of .fea files")
    b.add_argument("--concurrency", type=int, default=bench.DEFAULT_CONCURRENCY)
    b.add_argument("--workers-per-stream", type=int, default=2, choices=(1, 2))
    b.add_argument("--chunk-frames", type=int, default=10)
    b.add_argument("--quantized", action="store_true", help="require an i8-perchan bundle")
    b.add_argument("--out", default="rtf_report.jsonl")
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("eil", help="print encoder-induced latency")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset")
    src.add_argument("--model")
    e.set_defaults(func=cmd_eil)

    q = sub.add_parser("quantize", help="convert an f32 bundle to i8-perchan")
    q.add_argument("--model", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_quantize)

    i = sub.add_parser("init", help="write a bundle with random weights")
    src = i.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset")
    src.add_argument("--config", help="JSON EncoderConfig document")
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_init)

    s = sub.add_parser("synth", help="write random feature files")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=3)
    s.add_argument("--frames", type=int, default=100)
    s.add_argument("--dim", type=int, default=80)
    s.add_argument("--frame-rate-ms", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (StreamingAMError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
