#!/usr/bin/env python3
"""Freeze golden output hashes for the render fixture, one list per mode.

Run after (re)generating the fixture with make_fixture.py. The hashes cover
raw output pixels, not PNG bytes, so they are insensitive to the PNG
encoder while still pinning the synthesis result exactly.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from latentsteer.backends.mock import MockExtractor, MockGenerator
from latentsteer.core import Mode, PipelineConfig
from latentsteer.frameio import DirectorySource, HashingSink, keypoint_provider, read_keypoint_log
from latentsteer.pipeline import Pipeline, run_loop


def hashes_for_mode(root: Path, config: PipelineConfig, mode: Mode) -> list[str]:
    pipeline = Pipeline(MockExtractor(), MockGenerator(), config.updated(mode=mode))
    provider = keypoint_provider(read_keypoint_log(root / "keypoints.jsonl"))
    sink = HashingSink()
    run_loop(pipeline, DirectorySource(root / "frames"), sink,
             keypoint_provider=provider, drop=False)
    return sink.hashes


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--root",
        type=Path,
        default=Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "session60",
    )
    args = parser.parse_args()

    config = PipelineConfig.from_json_dict(
        json.loads((args.root / "render_config.json").read_text())
    )
    goldens = {
        mode.value: hashes_for_mode(args.root, config, mode) for mode in Mode
    }
    out = args.root / "golden_hashes.json"
    out.write_text(json.dumps(goldens, indent=2, sort_keys=True) + "\n")
    for name, hashes in goldens.items():
        print(f"{name}: {len(hashes)} hashes, first {hashes[0][:16]}")
    print(f"-> {out}")


if __name__ == "__main__":
    main()
