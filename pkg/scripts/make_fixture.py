#!/usr/bin/env python3
"""Generate the committed 60-frame render fixture.

Writes numbered PNG frames, an aligned keypoint log, and the render config
the acceptance suite replays. Frames are smooth procedural gradients with a
moving highlight, so they compress well and still vary frame to frame; the
keypoint tracks sweep the hand through a range of angles and spreads so all
three control modes see motion.

Regenerating overwrites in place and is deterministic: no RNG is involved.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from latentsteer.core import Frame, KeypointSet
from latentsteer.frameio import encode_png, frame_filename, write_keypoint_log

FRAME_COUNT = 60
SIZE = (320, 240)

RENDER_CONFIG = {
    "mode": "style_mix",
    "layers": {"conv5_3": 1.0},
    "psi": 0.7,
    "warmup_frames": 30,
    "session_seed": 7,
    "static_seed": 42,
}


def fixture_frame(index: int) -> Frame:
    w, h = SIZE
    t = index / FRAME_COUNT
    ys, xs = np.mgrid[0:h, 0:w]
    u = xs / w
    v = ys / h
    red = 0.5 + 0.5 * np.sin(2 * np.pi * (u + 0.7 * t))
    green = 0.5 + 0.5 * np.sin(2 * np.pi * (v - 0.4 * t + 0.25))
    blue = 0.5 + 0.5 * np.sin(2 * np.pi * (0.5 * u + 0.5 * v + t))
    cx = 0.5 + 0.3 * np.cos(2 * np.pi * t)
    cy = 0.5 + 0.3 * np.sin(2 * np.pi * t)
    highlight = 0.8 * np.exp(-((u - cx) ** 2 + (v - cy) ** 2) / 0.02)
    rgb = np.stack([red, green, blue], axis=-1) + highlight[..., None]
    pixels = np.clip(rgb * 255.0, 0, 255).astype(np.uint8)
    return Frame.from_array(pixels, timestamp_ns=0, sequence=index)


def hand_track(index: int) -> KeypointSet:
    """Right hand whose pointing angle sweeps -60..150 deg as it opens."""
    t = index / (FRAME_COUNT - 1)
    angle = np.radians(-60.0 + 210.0 * t)
    length = 0.10 + 0.20 * t
    wrist = (0.5 + 0.05 * np.cos(2 * np.pi * t), 0.55)
    tip = (wrist[0] + length * np.sin(angle), wrist[1] - length * np.cos(angle))
    points = np.array([
        [wrist[0], wrist[1], 0.9],
        [tip[0], tip[1], 0.9],
    ])
    return KeypointSet(points=points, part="hand",
                       landmark_ids=(0, 12), handedness="right")


def body_track(index: int) -> KeypointSet:
    """Torso landmarks spiralling outward from frame center."""
    t = index / (FRAME_COUNT - 1)
    radius = 0.05 + 0.30 * t
    phase = 2 * np.pi * t
    points = []
    for k, lid in enumerate((0, 11, 12)):
        theta = phase + k * 2 * np.pi / 3
        points.append([
            0.5 + radius * np.cos(theta),
            0.5 + radius * np.sin(theta),
            0.85,
        ])
    return KeypointSet(points=np.array(points), part="body",
                       landmark_ids=(0, 11, 12), handedness=None)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--root",
        type=Path,
        default=Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "session60",
    )
    args = parser.parse_args()

    frames_dir = args.root / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    total = 0
    for i in range(FRAME_COUNT):
        data = encode_png(fixture_frame(i))
        (frames_dir / frame_filename(i)).write_bytes(data)
        total += len(data)

    log = {i: [hand_track(i), body_track(i)] for i in range(FRAME_COUNT)}
    write_keypoint_log(args.root / "keypoints.jsonl", log)

    config_path = args.root / "render_config.json"
    config_path.write_text(json.dumps(RENDER_CONFIG, indent=2, sort_keys=True) + "\n")

    print(f"{FRAME_COUNT} frames ({total / 1024:.0f} KiB) -> {frames_dir}")
    print(f"keypoints -> {args.root / 'keypoints.jsonl'}")
    print(f"config -> {config_path}")


if __name__ == "__main__":
    main()
