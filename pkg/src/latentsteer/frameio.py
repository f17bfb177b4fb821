"""Frame sources and sinks, keypoint logs, and image byte codecs.

Sources are iterables of Frame. Sinks are callables taking one TickResult;
the pipeline invokes them in output order. A keypoint log is JSONL, one
object per line: {sequence, part, handedness, points: [[x, y, confidence,
landmark_id], ...]} with any number of lines per frame sequence.
"""
from __future__ import annotations

import hashlib
import io
import json
import re
import time
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np
from PIL import Image

from .core import Frame, KeypointSet, seeded_rng
from .errors import ConfigError, ContractError

FRAME_NAME_RE = re.compile(r"^frame_(\d{6})\.png$")


def frame_filename(index: int) -> str:
    if not 0 <= index <= 999_999:
        raise ContractError(f"frame index {index} outside the 6-digit range")
    return f"frame_{index:06d}.png"


class DirectorySource:
    """Reads a frame_%06d.png sequence; indices must be contiguous."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise ConfigError(f"frame directory {self.directory} does not exist")
        found: dict[int, Path] = {}
        for path in self.directory.iterdir():
            m = FRAME_NAME_RE.match(path.name)
            if m:
                found[int(m.group(1))] = path
        if not found:
            raise ConfigError(f"no frame_%06d.png files in {self.directory}")
        indices = sorted(found)
        first, last = indices[0], indices[-1]
        missing = sorted(set(range(first, last + 1)) - set(indices))
        if missing:
            shown = ", ".join(str(i) for i in missing[:10])
            more = "" if len(missing) <= 10 else f" (+{len(missing) - 10} more)"
            raise ConfigError(f"frame sequence has gaps at indices {shown}{more}")
        self._files = [(i, found[i]) for i in indices]

    def __len__(self) -> int:
        return len(self._files)

    def __iter__(self) -> Iterator[Frame]:
        for index, path in self._files:
            with Image.open(path) as img:
                pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
            yield Frame.from_array(pixels, timestamp_ns=0, sequence=index)


class SyntheticSource:
    """Deterministic noise frames, optionally paced to a target rate.

    Pacing uses absolute deadlines from the start instant, so the average
    rate holds even when individual sleeps jitter.
    """

    def __init__(
        self,
        count: int,
        size: tuple[int, int] = (256, 256),
        seed: int = 0,
        fps: float | None = None,
    ):
        if count < 0:
            raise ContractError("count must be >= 0")
        if fps is not None and fps <= 0:
            raise ContractError("fps must be positive")
        self.count = count
        self.size = (int(size[0]), int(size[1]))
        self.seed = seed
        self.fps = fps

    def __len__(self) -> int:
        return self.count

    def __iter__(self) -> Iterator[Frame]:
        w, h = self.size
        interval = None if self.fps is None else 1.0 / self.fps
        start = time.monotonic()
        for i in range(self.count):
            if interval is not None:
                deadline = start + i * interval
                delay = deadline - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
            pixels = seeded_rng(self.seed + i).integers(
                0, 256, size=(h, w, 3), dtype=np.uint8
            )
            yield Frame.from_array(
                pixels, timestamp_ns=time.monotonic_ns(), sequence=i
            )


def camera_source(device: int = 0, size: tuple[int, int] | None = None) -> Iterator[Frame]:
    """Live camera adapter (requires opencv); yields frames until closed."""
    try:
        import cv2
    except ImportError as exc:
        raise ConfigError("camera capture needs the opencv-python package") from exc
    cap = cv2.VideoCapture(device)
    if not cap.isOpened():
        raise ConfigError(f"cannot open camera device {device}")
    if size is not None:
        cap.set(cv2.CAP_PROP_FRAME_WIDTH, size[0])
        cap.set(cv2.CAP_PROP_FRAME_HEIGHT, size[1])
    sequence = 0
    try:
        while True:
            ok, bgr = cap.read()
            if not ok:
                return
            rgb = np.ascontiguousarray(bgr[:, :, ::-1])
            yield Frame.from_array(
                rgb, timestamp_ns=time.monotonic_ns(), sequence=sequence
            )
            sequence += 1
    finally:
        cap.release()


class DirectorySink:
    """Writes each output as frame_%06d.png, numbered in arrival order."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.count = 0

    def __call__(self, result) -> None:
        path = self.directory / frame_filename(self.count)
        Image.fromarray(np.asarray(result.output.pixels)).save(path, format="PNG")
        self.count += 1


class HashingSink:
    """Collects one sha256 per output frame, over the raw RGB bytes.

    Hashing pixels rather than encoded files keeps the digests stable
    across image-library versions.
    """

    def __init__(self):
        self.hashes: list[str] = []

    def __call__(self, result) -> None:
        digest = hashlib.sha256(result.output.pixels.tobytes()).hexdigest()
        self.hashes.append(digest)


class NullSink:
    def __call__(self, result) -> None:
        pass


def tee_sink(*sinks: Callable) -> Callable:
    def fanout(result) -> None:
        for sink in sinks:
            sink(result)
    return fanout


def encode_jpeg(frame: Frame, quality: int = 85) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(frame.pixels)).save(buf, format="JPEG", quality=quality)
    return buf.getvalue()


def encode_png(frame: Frame) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(frame.pixels)).save(buf, format="PNG")
    return buf.getvalue()


def _keypoint_set_from_obj(obj: Mapping, where: str) -> tuple[int, KeypointSet]:
    try:
        sequence = int(obj["sequence"])
        part = str(obj["part"])
        points = obj["points"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: bad keypoint record: {exc}") from exc
    if sequence < 0:
        raise ConfigError(f"{where}: sequence must be >= 0")
    handedness = obj.get("handedness")
    rows = []
    ids = []
    for p in points:
        if len(p) != 4:
            raise ConfigError(f"{where}: each point needs [x, y, confidence, landmark_id]")
        rows.append([float(p[0]), float(p[1]), float(p[2])])
        ids.append(int(p[3]))
    if not rows:
        raise ConfigError(f"{where}: empty points list")
    try:
        kp = KeypointSet(
            np.array(rows), part=part, landmark_ids=tuple(ids), handedness=handedness
        )
    except ContractError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return sequence, kp


def read_keypoint_log(path: str | Path) -> dict[int, list[KeypointSet]]:
    """Parse a keypoint JSONL file into per-sequence keypoint sets."""
    log: dict[int, list[KeypointSet]] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read keypoint log: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        where = f"{path}:{lineno}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{where}: not valid JSON: {exc}") from exc
        sequence, kp = _keypoint_set_from_obj(obj, where)
        log.setdefault(sequence, []).append(kp)
    return log


def write_keypoint_log(path: str | Path, log: Mapping[int, Sequence[KeypointSet]]) -> None:
    lines = []
    for sequence in sorted(log):
        for kp in log[sequence]:
            points = [
                [float(x), float(y), float(c), int(lid)]
                for (x, y, c), lid in zip(kp.points, kp.landmark_ids)
            ]
            lines.append(json.dumps({
                "sequence": int(sequence),
                "part": kp.part,
                "handedness": kp.handedness,
                "points": points,
            }))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def keypoint_provider(log: Mapping[int, Sequence[KeypointSet]]) -> Callable:
    """Adapter from a parsed log to the per-sequence lookup run_loop uses."""
    def provide(sequence: int):
        sets = log.get(sequence)
        return list(sets) if sets else None
    return provide
