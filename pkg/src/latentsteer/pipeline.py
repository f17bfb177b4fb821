"""Live pipeline: frames and keypoints in, synthesized frames out.

One Pipeline owns all mutable session state (config snapshot, calibration,
smoothing state, gesture memory, counters). `tick` is the single writer;
control changes serialize against it through one lock, so a delta applies
between ticks, never mid-tick. `run_loop` adds the capture/tick staging
with a depth-1 latest-frame-wins slot.
"""
from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from .backends.base import AFFINE_ACCESS, CONSTANT_ACCESS, FeatureExtractor, Generator
from .core import (
    BANDS,
    STATIC,
    Frame,
    KeypointSet,
    LatentVector,
    MixingRanges,
    Mode,
    PipelineConfig,
    StyleStack,
    ema_smooth,
    preprocess_frame,
)
from .encode import CalibrationStats, encode_frame, new_band_stats
from .errors import BackendError, CapabilityError, ConfigError
from .gesture import GestureReading, GestureTracker, make_affine
from .styles import build_style_stack, corrupt_constant, make_corruption_noise, reseed_static, truncate

_MODE_NEEDS = {
    Mode.CONST_CORRUPT: CONSTANT_ACCESS,
    Mode.AFFINE: AFFINE_ACCESS,
}


@dataclass(frozen=True)
class TickResult:
    """One synthesized frame plus how it was made.

    `source` is the captured frame that drove the tick, kept by reference
    so preview streams can re-encode it without another copy.
    """

    output: Frame
    latency_ns: int
    provenance: dict
    source: Frame | None = None

    def __post_init__(self) -> None:
        if self.latency_ns < 0:
            raise ConfigError("latency cannot be negative")


class Counters:
    """Monotone session counters, safe to bump from capture and tick stages."""

    __slots__ = ("_lock", "frames_in", "frames_out", "frames_dropped")

    def __init__(self):
        self._lock = threading.Lock()
        self.frames_in = 0
        self.frames_out = 0
        self.frames_dropped = 0

    def frame_in(self) -> None:
        with self._lock:
            self.frames_in += 1

    def frame_out(self) -> None:
        with self._lock:
            self.frames_out += 1

    def frame_dropped(self) -> None:
        with self._lock:
            self.frames_dropped += 1

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "frames_in": self.frames_in,
                "frames_out": self.frames_out,
                "frames_dropped": self.frames_dropped,
            }


class FrameSlot:
    """Depth-1 handoff between capture and tick: newest frame wins.

    offered == dropped + taken + buffered, with buffered either 0 or 1;
    that arithmetic is what bounds memory regardless of the source rate.
    """

    def __init__(self, counters: Counters | None = None):
        self._cond = threading.Condition()
        self._item: Frame | None = None
        self._closed = False
        self._counters = counters
        self.offered = 0
        self.dropped = 0
        self.taken = 0

    def offer(self, frame: Frame) -> None:
        with self._cond:
            if self._closed:
                return
            if self._item is not None:
                self.dropped += 1
                if self._counters:
                    self._counters.frame_dropped()
            self._item = frame
            self.offered += 1
            if self._counters:
                self._counters.frame_in()
            self._cond.notify()

    def take(self, timeout: float | None = None) -> Frame | None:
        """Newest frame, or None on timeout or after close drains."""
        with self._cond:
            if self._item is None and not self._closed:
                self._cond.wait(timeout)
            if self._item is not None:
                frame, self._item = self._item, None
                self.taken += 1
                return frame
            return None

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def closed(self) -> bool:
        with self._cond:
            return self._closed

    @property
    def buffered(self) -> int:
        with self._cond:
            return self.offered - self.dropped - self.taken


def _nearest_rank(sorted_values: list[int], q: float) -> int:
    if not sorted_values:
        return 0
    rank = max(1, math.ceil(q / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]


@dataclass(frozen=True)
class SessionSummary:
    frames_in: int
    frames_out: int
    frames_dropped: int
    duration_s: float
    fps: float
    latency_p50_ns: int
    latency_p95_ns: int

    def to_json_dict(self, output_hashes: Iterable[str] = ()) -> dict:
        return {
            "frames": self.frames_out,
            "fps": self.fps,
            "dropped": self.frames_dropped,
            "latency_p50_ns": self.latency_p50_ns,
            "latency_p95_ns": self.latency_p95_ns,
            "output_hashes": list(output_hashes),
        }


class Pipeline:
    """Session orchestrator binding one extractor and one generator."""

    def __init__(
        self,
        extractor: FeatureExtractor,
        generator: Generator,
        config: PipelineConfig | None = None,
        band_stats: Mapping[str, CalibrationStats] | None = None,
    ):
        config = config or PipelineConfig()
        if generator.z_dim != config.z_dim:
            raise ConfigError(
                f"config z_dim {config.z_dim} != generator z_dim {generator.z_dim}"
            )
        self.extractor = extractor
        self.generator = generator
        self.counters = Counters()
        self._control_lock = threading.RLock()
        self._config = config
        self._config_version = 0
        self._ranges = self._resolve_ranges(config)
        self._require_mode_capability(config.mode)
        self._validate_layers(config.layers, config.z_dim)
        self._gesture = GestureTracker(config)
        self._last_reading = GestureReading()
        if band_stats is not None:
            self._band_stats = {band: band_stats[band] for band in BANDS}
            # a loaded stats file replaces warm-up entirely
            self._stats_frozen = all(s.ready for s in self._band_stats.values())
        else:
            self._band_stats = new_band_stats(config.z_dim)
            self._stats_frozen = False
        self._band_ema: dict[str, np.ndarray] = {}
        self._static_z = reseed_static(config.static_seed, config.z_dim)
        self._static_w = generator.map(self._static_z)
        self._w_avg = generator.w_avg().values
        self._const_clean: np.ndarray | None = None
        self._noise: np.ndarray | None = None

    def _resolve_ranges(self, config: PipelineConfig) -> MixingRanges:
        ranges = config.mixing_ranges or MixingRanges.default(self.generator.num_ws)
        if ranges.num_ws != self.generator.num_ws:
            raise ConfigError(
                f"mixing ranges cover {ranges.num_ws} rows, "
                f"generator has {self.generator.num_ws}"
            )
        return ranges

    def _require_mode_capability(self, mode: Mode) -> None:
        needed = _MODE_NEEDS.get(mode)
        if needed and needed not in self.generator.capabilities:
            raise CapabilityError(f"mode {mode.value} needs {needed}, "
                                  f"which this generator does not provide")

    def _validate_layers(self, layers: Mapping[str, float], z_dim: int) -> None:
        # a layer the extractor lacks, or one whose width cannot fill a
        # z_dim latent, must be refused here; at tick time it would kill
        # a live session instead of failing one control request
        table = {spec.name: spec.channels for spec in self.extractor.list_layers()}
        unknown = sorted(set(layers) - set(table))
        if unknown:
            raise ConfigError(
                f"extractor {self.extractor.extractor_id} has no layer(s): "
                f"{', '.join(unknown)}"
            )
        for name in sorted(layers):
            if table[name] != z_dim:
                raise ConfigError(
                    f"layer {name} has {table[name]} channels; z_dim is {z_dim}"
                )

    @property
    def config(self) -> PipelineConfig:
        return self._config

    @property
    def config_version(self) -> int:
        return self._config_version

    def layer_table(self):
        return self.extractor.list_layers()

    # -- control plane -----------------------------------------------------

    def apply_control(self, delta: Mapping) -> dict:
        """Validate and apply a config delta; returns the new state snapshot.

        Rejected deltas leave every piece of state untouched. Mode switches
        reset gesture and band smoothing but preserve the static latent and
        the calibration statistics.
        """
        with self._control_lock:
            old = self._config
            prepared = dict(delta)
            if isinstance(prepared.get("mixing_ranges"), Mapping):
                prepared["mixing_ranges"] = MixingRanges.from_json_dict(
                    prepared["mixing_ranges"], num_ws=self.generator.num_ws
                )
            if "z_dim" in prepared and prepared["z_dim"] != old.z_dim:
                raise ConfigError("z_dim is fixed for the session")
            try:
                new = old.updated(**prepared)
            except TypeError as exc:
                raise ConfigError(f"unknown config keys in delta: {exc}") from exc
            ranges = self._resolve_ranges(new)
            if new.mode != old.mode:
                self._require_mode_capability(new.mode)
            if new.layers != old.layers:
                self._validate_layers(new.layers, new.z_dim)

            # validation done; now mutate
            if new.mode != old.mode:
                self._leave_mode(old.mode)
                self._gesture = GestureTracker(new)
                self._band_ema = {}
            else:
                self._gesture.reconfigure(new)
            if new.layers != old.layers:
                self._band_stats = new_band_stats(new.z_dim)
                self._stats_frozen = False
                self._band_ema = {}
            if new.static_seed != old.static_seed:
                self._static_z = reseed_static(new.static_seed, new.z_dim)
                self._static_w = self.generator.map(self._static_z)
            if new.session_seed != old.session_seed:
                self._noise = None
            self._ranges = ranges
            self._config = new
            self._config_version += 1
            return self.state_snapshot()

    def _leave_mode(self, mode: Mode) -> None:
        if mode is Mode.CONST_CORRUPT and self._const_clean is not None:
            self.generator.set_constant(self._const_clean)
            self._const_clean = None
            self._noise = None
        elif mode is Mode.AFFINE:
            self.generator.reset_input_transform()

    def state_snapshot(self) -> dict:
        cfg = self._config
        snap = cfg.to_json_dict()
        snap["mixing_ranges"] = self._ranges.to_json_dict()
        snap["config_version"] = self._config_version
        snap["num_ws"] = self.generator.num_ws
        snap["extractor_id"] = self.extractor.extractor_id
        snap["counters"] = self.counters.snapshot()
        snap["calibration"] = {
            "frozen": self._stats_frozen,
            "counts": {band: self._band_stats[band].count for band in BANDS},
        }
        r = self._last_reading
        snap["gesture"] = {
            "angle_deg": r.angle_deg,
            "scale": r.scale,
            "corruption": r.corruption,
            "handedness": r.handedness,
        }
        return snap

    # -- tick --------------------------------------------------------------

    def tick(
        self,
        frame: Frame,
        keypoints: list[KeypointSet] | None = None,
        *,
        counted: bool = False,
    ) -> TickResult:
        """Process one frame under the current config snapshot.

        `counted=True` means the capture stage already counted the frame
        into frames_in (run_loop does); direct callers leave it False.
        """
        start = time.monotonic_ns()
        with self._control_lock:
            if not counted:
                self.counters.frame_in()
            cfg = self._config
            reading = self._gesture.update(keypoints)
            self._last_reading = reading
            try:
                if cfg.mode is Mode.STYLE_MIX:
                    output, extra = self._tick_style_mix(frame, cfg)
                elif cfg.mode is Mode.CONST_CORRUPT:
                    output, extra = self._tick_const_corrupt(cfg, reading)
                else:
                    output, extra = self._tick_affine(cfg, reading)
            except BackendError as exc:
                raise BackendError(f"frame {frame.sequence}: {exc}") from exc
            end = time.monotonic_ns()
            self.counters.frame_out()
            anchor = frame.timestamp_ns if frame.timestamp_ns > 0 else start
            provenance = {
                "sequence": frame.sequence,
                "mode": cfg.mode.value,
                "config_version": self._config_version,
                "psi": cfg.psi,
                "band_psi": dict(cfg.band_psi),
                "gesture": {
                    "angle_deg": reading.angle_deg,
                    "scale": reading.scale,
                    "corruption": reading.corruption,
                    "handedness": reading.handedness,
                },
            }
            provenance.update(extra)
            return TickResult(
                output=output,
                latency_ns=max(0, end - anchor),
                provenance=provenance,
                source=frame,
            )

    def _tick_style_mix(self, frame: Frame, cfg: PipelineConfig):
        pre = preprocess_frame(frame, cfg.target_frame, cfg.aspect_ratio)
        features = self.extractor.extract(pre, set(cfg.layers))
        use_stats = cfg.standardize and self._stats_frozen
        bands = encode_frame(features, cfg, self._band_stats if use_stats else None)
        warmup_remaining = 0
        if cfg.standardize and not self._stats_frozen:
            for band, latent in bands.as_dict().items():
                self._band_stats[band].update(latent.values)
            threshold = max(cfg.warmup_frames, 2)
            have = min(s.count for s in self._band_stats.values())
            if have >= threshold:
                self._stats_frozen = True
                self._band_ema = {}  # raw- and standardized-scale EMAs don't mix
            else:
                warmup_remaining = threshold - have
        band_styles = {}
        for band, latent in bands.as_dict().items():
            prev = self._band_ema.get(band)
            vec = latent.values if prev is None else ema_smooth(
                prev, latent.values, cfg.latent_smoothing
            )
            self._band_ema[band] = vec
            band_styles[band] = self.generator.map(LatentVector(vec))
        stack = build_style_stack(
            band_styles,
            self._static_w,
            self._w_avg,
            self._ranges,
            psi=cfg.psi,
            band_psi=cfg.band_psi,
            truncate_static=cfg.truncate_static_rows,
        )
        output = self.generator.synthesize(stack)
        return output, {
            "standardized": use_stats,
            "warmup_remaining": warmup_remaining,
        }

    def _static_stack(self, cfg: PipelineConfig) -> StyleStack:
        w = self._static_w.values
        row = truncate(w, self._w_avg, cfg.psi) if cfg.truncate_static_rows else w.copy()
        num_ws = self.generator.num_ws
        return StyleStack(np.tile(row, (num_ws, 1)), provenance=(STATIC,) * num_ws)

    def _tick_const_corrupt(self, cfg: PipelineConfig, reading: GestureReading):
        if self._const_clean is None:
            self._const_clean = self.generator.get_constant()
        if self._noise is None:  # also rebuilt after a session_seed change
            self._noise = make_corruption_noise(self._const_clean, cfg.session_seed)
        magnitude = reading.corruption
        self.generator.set_constant(
            corrupt_constant(self._const_clean, self._noise, magnitude)
        )
        output = self.generator.synthesize(self._static_stack(cfg))
        return output, {"corruption_magnitude": magnitude}

    def _tick_affine(self, cfg: PipelineConfig, reading: GestureReading):
        transform = make_affine(reading.angle_deg, reading.scale)
        self.generator.set_input_transform(transform)
        output = self.generator.synthesize(self._static_stack(cfg))
        return output, {"angle_deg": reading.angle_deg, "scale": reading.scale}


def run_loop(
    pipeline: Pipeline,
    source: Iterable[Frame],
    sink: Callable[[TickResult], None],
    *,
    keypoint_provider: Callable[[int], list[KeypointSet] | None] | None = None,
    drop: bool = True,
    max_frames: int | None = None,
    duration_s: float | None = None,
) -> SessionSummary:
    """Drive the pipeline from a source until it ends or a limit hits.

    With drop=True a capture thread feeds the depth-1 slot and stale frames
    are dropped, never queued; with drop=False the source is replayed
    losslessly in the calling thread (frames_out == frames_in).
    """
    latencies: list[int] = []
    started = time.monotonic()
    out_count = 0

    def limits_hit() -> bool:
        if max_frames is not None and out_count >= max_frames:
            return True
        if duration_s is not None and time.monotonic() - started >= duration_s:
            return True
        return False

    def run_tick(frame: Frame, counted: bool) -> None:
        nonlocal out_count
        keypoints = keypoint_provider(frame.sequence) if keypoint_provider else None
        result = pipeline.tick(frame, keypoints, counted=counted)
        sink(result)
        latencies.append(result.latency_ns)
        out_count += 1

    if drop:
        slot = FrameSlot(pipeline.counters)
        stop_feeding = threading.Event()

        def feed() -> None:
            try:
                for frame in source:
                    if stop_feeding.is_set():
                        break
                    slot.offer(frame)
            finally:
                slot.close()

        feeder = threading.Thread(target=feed, name="capture", daemon=True)
        feeder.start()
        try:
            while not limits_hit():
                frame = slot.take(timeout=0.2)
                if frame is None:
                    if slot.closed:
                        break
                    continue
                run_tick(frame, counted=True)
        except KeyboardInterrupt:
            pass  # interruption ends a live session; the summary still prints
        finally:
            stop_feeding.set()
            slot.close()
        feeder.join(timeout=2.0)
    else:
        try:
            for frame in source:
                if limits_hit():
                    break
                run_tick(frame, counted=False)
        except KeyboardInterrupt:
            pass

    duration = max(time.monotonic() - started, 1e-9)
    ordered = sorted(latencies)
    counts = pipeline.counters.snapshot()
    return SessionSummary(
        frames_in=counts["frames_in"],
        frames_out=counts["frames_out"],
        frames_dropped=counts["frames_dropped"],
        duration_s=duration,
        fps=out_count / duration,
        latency_p50_ns=_nearest_rank(ordered, 50),
        latency_p95_ns=_nearest_rank(ordered, 95),
    )
