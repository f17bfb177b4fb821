#!/usr/bin/env python3
"""Benchmark single-thread tick latency per control mode with mock backends."""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from latentsteer.backends.mock import MockExtractor, MockGenerator
from latentsteer.core import Mode, PipelineConfig
from latentsteer.frameio import SyntheticSource
from latentsteer.pipeline import Pipeline


def bench(mode: Mode, frames: int, source_size: tuple[int, int], resolution: int) -> None:
    config = PipelineConfig(mode=mode, warmup_frames=2)
    pipeline = Pipeline(MockExtractor(), MockGenerator(resolution=resolution), config)
    warmup = 5
    batch = list(SyntheticSource(frames + warmup, size=source_size))
    for frame in batch[:warmup]:
        pipeline.tick(frame)
    latencies = []
    started = time.perf_counter()
    for frame in batch[warmup:]:
        t0 = time.perf_counter()
        pipeline.tick(frame)
        latencies.append(time.perf_counter() - t0)
    elapsed = time.perf_counter() - started
    latencies.sort()
    p50 = latencies[len(latencies) // 2] * 1000
    p95 = latencies[int(len(latencies) * 0.95)] * 1000
    print(
        f"{mode.value:>14}: {frames / elapsed:6.1f} ticks/s   "
        f"p50 {p50:6.2f} ms   p95 {p95:6.2f} ms"
    )


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.strip())
    parser.add_argument("--frames", type=int, default=100)
    parser.add_argument("--resolution", type=int, default=256, help="Generator output resolution.")
    parser.add_argument("--source-size", default="320x240")
    parser.add_argument("--mode", choices=[m.value for m in Mode], default=None,
                        help="Bench one mode instead of all three.")
    args = parser.parse_args()

    w, h = (int(x) for x in args.source_size.lower().split("x"))
    modes = [Mode(args.mode)] if args.mode else list(Mode)
    print(f"source {w}x{h}, output {args.resolution}x{args.resolution}, {args.frames} frames")
    for mode in modes:
        bench(mode, args.frames, (w, h), args.resolution)


if __name__ == "__main__":
    main()
