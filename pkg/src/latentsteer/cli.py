"""Command line entry points: live runs, offline rendering, calibration.

Exit codes: 0 success, 2 usage or config problem, 3 requested mode not
supported by the generator backend, 4 backend failure mid-session.
"""

from __future__ import annotations

import functools
import json
from pathlib import Path
from typing import Iterable, Iterator

import click

from .backends.registry import get_extractor, get_generator
from .core import BANDS, Frame, Mode, PipelineConfig, preprocess_frame
from .encode import STATS_VERSION, CalibrationStats, channel_average, combine_stats
from .errors import BackendError, CapabilityError, ConfigError, SteerError
from .frameio import (
    DirectorySink,
    DirectorySource,
    HashingSink,
    SyntheticSource,
    camera_source,
    keypoint_provider,
    read_keypoint_log,
    tee_sink,
)
from .pipeline import Pipeline, run_loop
from .service import serve
from .websock import WebSocketBridge

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CAPABILITY = 3
EXIT_BACKEND = 4

# Streams with no frame budget still need a count for the synthetic source.
_UNBOUNDED = 1_000_000_000


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    raise SystemExit(code)


def guarded(func):
    """Map the library's error taxonomy onto process exit codes."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except CapabilityError as exc:
            _fail(EXIT_CAPABILITY, f"mode unsupported by backend: {exc}")
        except BackendError as exc:
            _fail(EXIT_BACKEND, str(exc))
        except SteerError as exc:
            _fail(EXIT_USAGE, str(exc))

    return wrapper


def backend_options(func):
    opts = [
        click.option(
            "--extractor",
            "extractor_uri",
            default="mock://extractor",
            show_default=True,
            help="Feature extractor backend URI.",
        ),
        click.option(
            "--generator",
            "generator_uri",
            default="mock://generator",
            show_default=True,
            help="Image generator backend URI.",
        ),
    ]
    for opt in reversed(opts):
        func = opt(func)
    return func


def config_options(func):
    """Flags mirroring the pipeline config; set ones override the file."""
    opts = [
        click.option(
            "--config",
            "config_path",
            default=None,
            help="JSON pipeline config; explicit flags override its values.",
        ),
        click.option("--mode", type=click.Choice([m.value for m in Mode]), default=None),
        click.option(
            "--layers",
            "layers_json",
            default=None,
            help='Layer weights as JSON, e.g. \'{"conv5_3": 1.0}\'.',
        ),
        click.option("--psi", type=float, default=None, help="Truncation strength."),
        click.option("--session-seed", type=int, default=None),
        click.option("--static-seed", type=int, default=None),
        click.option("--warmup-frames", type=int, default=None),
        click.option(
            "--standardize/--no-standardize",
            "standardize",
            default=None,
            help="Whiten band vectors against warm-up statistics.",
        ),
        click.option(
            "--stats",
            "stats_path",
            default=None,
            help="Calibration stats file from `calibrate`; skips warm-up.",
        ),
    ]
    for opt in reversed(opts):
        func = opt(func)
    return func


def build_config(
    config_path: str | None,
    *,
    mode: str | None = None,
    layers_json: str | None = None,
    psi: float | None = None,
    session_seed: int | None = None,
    static_seed: int | None = None,
    warmup_frames: int | None = None,
    standardize: bool | None = None,
) -> PipelineConfig:
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config not found: {path}")
        try:
            obj = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        config = PipelineConfig.from_json_dict(obj)
    else:
        config = PipelineConfig()

    overrides: dict[str, object] = {}
    if mode is not None:
        overrides["mode"] = Mode(mode)
    if layers_json is not None:
        try:
            parsed = json.loads(layers_json)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--layers is not valid JSON: {exc}") from exc
        if not isinstance(parsed, dict):
            raise ConfigError("--layers must be a JSON object of name: weight")
        overrides["layers"] = parsed
    if psi is not None:
        overrides["psi"] = psi
    if session_seed is not None:
        overrides["session_seed"] = session_seed
    if static_seed is not None:
        overrides["static_seed"] = static_seed
    if warmup_frames is not None:
        overrides["warmup_frames"] = warmup_frames
    if standardize is not None:
        overrides["standardize"] = standardize
    if overrides:
        config = config.updated(**overrides)
    return config


def load_stats_records(path: Path) -> list[tuple[CalibrationStats, str, str]]:
    """A stats file is one record, a list, or {"records": [...]}."""
    if not path.is_file():
        raise ConfigError(f"stats file not found: {path}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"stats file {path} is not valid JSON: {exc}") from exc
    if isinstance(obj, dict) and "records" in obj:
        raw = obj["records"]
    elif isinstance(obj, dict):
        raw = [obj]
    elif isinstance(obj, list):
        raw = obj
    else:
        raise ConfigError(f"stats file {path} has an unrecognized layout")
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"stats file {path} holds no records")
    if not all(isinstance(record, dict) for record in raw):
        raise ConfigError(f"stats file {path} records must be JSON objects")
    return [CalibrationStats.from_json_dict(record) for record in raw]


def band_stats_from_file(path: str, config: PipelineConfig, extractor) -> dict[str, CalibrationStats]:
    """Seed every band from per-layer full-map statistics.

    The per-layer records are merged with the configured layer weights, and
    the merged result seeds all three bands, so a loaded file stands in for
    warm-up wholesale rather than per band.
    """
    records = load_stats_records(Path(path))
    by_layer: dict[str, CalibrationStats] = {}
    for stats, extractor_id, layer in records:
        if extractor_id != extractor.extractor_id:
            raise ConfigError(
                f"stats file was calibrated for {extractor_id}, "
                f"not {extractor.extractor_id}"
            )
        by_layer[layer] = stats
    missing = sorted(set(config.layers) - set(by_layer))
    if missing:
        raise ConfigError(f"stats file lacks layers: {', '.join(missing)}")
    names = sorted(config.layers)
    combined = combine_stats(
        [by_layer[name] for name in names], [config.layers[name] for name in names]
    )
    if not combined.ready:
        raise ConfigError("need at least 2 samples in the stats file")
    return {band: combined.copy() for band in BANDS}


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        size = (int(w), int(h))
    except ValueError as exc:
        raise ConfigError(f"size must look like 320x240, got {text!r}") from exc
    if size[0] <= 0 or size[1] <= 0:
        raise ConfigError(f"size must be positive, got {text!r}")
    return size


def make_source(
    spec: str,
    *,
    fps: float,
    size: tuple[int, int],
    seed: int,
    camera_index: int,
) -> Iterable[Frame] | Iterator[Frame]:
    if spec == "synthetic":
        # The frame budget caps outputs, not captures; with dropping enabled
        # a source of exactly N frames would undershoot it.
        return SyntheticSource(_UNBOUNDED, size=size, seed=seed, fps=fps if fps > 0 else None)
    if spec == "camera":
        return camera_source(camera_index)
    return DirectorySource(spec)


@click.group()
@click.version_option(package_name="latentsteer", prog_name="latentsteer")
def main() -> None:
    """Drive a pretrained image generator from camera motion."""


@main.command("run")
@backend_options
@config_options
@click.option(
    "--source",
    "source_spec",
    default="synthetic",
    show_default=True,
    help="'synthetic', 'camera', or a directory of numbered PNG frames.",
)
@click.option("--frames", type=int, default=0, show_default=True, help="Stop after N output frames (0 = until interrupted).")
@click.option("--duration", type=float, default=None, help="Stop after this many seconds.")
@click.option("--fps", type=float, default=30.0, show_default=True, help="Synthetic source pacing; 0 disables pacing.")
@click.option("--source-size", default="320x240", show_default=True, help="Synthetic source frame size, WxH.")
@click.option("--source-seed", type=int, default=0, show_default=True)
@click.option("--camera-index", type=int, default=0, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--control-port", type=int, default=7461, show_default=True)
@click.option("--stream-port", type=int, default=7462, show_default=True)
@click.option("--ws-port", type=int, default=None, help="Also tunnel both sockets over WebSocket on this port.")
@click.option("--preview-divisor", type=int, default=0, show_default=True, help="Stream every Nth source frame as a preview (0 = off).")
@click.option("--queue-limit", type=int, default=32, show_default=True, help="Per-client stream queue depth.")
@click.option("--jpeg-quality", type=int, default=85, show_default=True)
@click.option("--quiet", is_flag=True, help="Suppress the address banner.")
@guarded
def cmd_run(
    extractor_uri: str,
    generator_uri: str,
    config_path: str | None,
    mode: str | None,
    layers_json: str | None,
    psi: float | None,
    session_seed: int | None,
    static_seed: int | None,
    warmup_frames: int | None,
    standardize: bool | None,
    stats_path: str | None,
    source_spec: str,
    frames: int,
    duration: float | None,
    fps: float,
    source_size: str,
    source_seed: int,
    camera_index: int,
    host: str,
    control_port: int,
    stream_port: int,
    ws_port: int | None,
    preview_divisor: int,
    queue_limit: int,
    jpeg_quality: int,
    quiet: bool,
) -> None:
    """Run a live session and serve control and stream sockets.

    Frames that arrive while a tick is in flight are dropped, so the
    session keeps pace with the source. Prints a session summary as JSON
    on exit, including after Ctrl-C.
    """
    config = build_config(
        config_path,
        mode=mode,
        layers_json=layers_json,
        psi=psi,
        session_seed=session_seed,
        static_seed=static_seed,
        warmup_frames=warmup_frames,
        standardize=standardize,
    )
    extractor = get_extractor(extractor_uri)
    generator = get_generator(generator_uri)
    band_stats = (
        band_stats_from_file(stats_path, config, extractor) if stats_path else None
    )
    pipeline = Pipeline(extractor, generator, config, band_stats=band_stats)
    source = make_source(
        source_spec,
        fps=fps,
        size=_parse_size(source_size),
        seed=source_seed,
        camera_index=camera_index,
    )

    service = serve(
        pipeline,
        host=host,
        control_port=control_port,
        stream_port=stream_port,
        preview_divisor=preview_divisor,
        jpeg_quality=jpeg_quality,
        queue_limit=queue_limit,
    )
    bridge = None
    try:
        if ws_port is not None:
            bridge = WebSocketBridge(service, host=host, port=ws_port)
            bridge.start()
        if not quiet:
            click.echo(f"control: {service.control_address}", err=True)
            click.echo(f"stream:  {service.stream_address}", err=True)
            if bridge is not None:
                click.echo(f"ws:      {bridge.address}", err=True)
        summary = run_loop(
            pipeline,
            source,
            service.make_sink(),
            drop=True,
            max_frames=frames if frames > 0 else None,
            duration_s=duration,
        )
    finally:
        if bridge is not None:
            bridge.stop()
        service.stop()
    click.echo(json.dumps(summary.to_json_dict()))


@main.command("render")
@backend_options
@config_options
@click.option("--frames-dir", required=True, help="Directory of numbered input PNG frames.")
@click.option("--keypoints", "keypoints_path", default=None, help="JSONL keypoint log aligned by frame sequence.")
@click.option("--out", "out_dir", required=True, help="Output directory for PNG frames and summary.json.")
@guarded
def cmd_render(
    extractor_uri: str,
    generator_uri: str,
    config_path: str | None,
    mode: str | None,
    layers_json: str | None,
    psi: float | None,
    session_seed: int | None,
    static_seed: int | None,
    warmup_frames: int | None,
    standardize: bool | None,
    stats_path: str | None,
    frames_dir: str,
    keypoints_path: str | None,
    out_dir: str,
) -> None:
    """Render a recorded session offline, losslessly.

    Every input frame produces exactly one output frame, in order. The
    summary carries a sha256 per output frame so a rerun can be checked
    for bit-identical results.
    """
    config = build_config(
        config_path,
        mode=mode,
        layers_json=layers_json,
        psi=psi,
        session_seed=session_seed,
        static_seed=static_seed,
        warmup_frames=warmup_frames,
        standardize=standardize,
    )
    extractor = get_extractor(extractor_uri)
    generator = get_generator(generator_uri)
    band_stats = (
        band_stats_from_file(stats_path, config, extractor) if stats_path else None
    )
    pipeline = Pipeline(extractor, generator, config, band_stats=band_stats)
    source = DirectorySource(frames_dir)
    provider = None
    if keypoints_path is not None:
        provider = keypoint_provider(read_keypoint_log(keypoints_path))

    out = Path(out_dir)
    frame_sink = DirectorySink(out)
    hasher = HashingSink()
    summary = run_loop(
        pipeline,
        source,
        tee_sink(frame_sink, hasher),
        keypoint_provider=provider,
        drop=False,
    )
    payload = summary.to_json_dict(output_hashes=hasher.hashes)
    (out / "summary.json").write_text(json.dumps(payload, indent=2) + "\n")
    click.echo(json.dumps(payload))


@main.command("calibrate")
@backend_options
@config_options
@click.option("--frames-dir", required=True, help="Directory of numbered PNG frames to calibrate on.")
@click.option("--out", "out_path", required=True, help="Where to write the stats JSON.")
@guarded
def cmd_calibrate(
    extractor_uri: str,
    generator_uri: str,
    config_path: str | None,
    mode: str | None,
    layers_json: str | None,
    psi: float | None,
    session_seed: int | None,
    static_seed: int | None,
    warmup_frames: int | None,
    standardize: bool | None,
    stats_path: str | None,
    frames_dir: str,
    out_path: str,
) -> None:
    """Accumulate per-layer feature statistics from recorded frames.

    For each configured layer the full feature map is channel-averaged per
    frame and folded into running mean and variance. The output file is
    deterministic: the same frames produce identical bytes.
    """
    config = build_config(
        config_path,
        mode=mode,
        layers_json=layers_json,
        psi=psi,
        session_seed=session_seed,
        static_seed=static_seed,
        warmup_frames=warmup_frames,
        standardize=standardize,
    )
    extractor = get_extractor(extractor_uri)
    names = sorted(config.layers)
    known = {spec.name for spec in extractor.list_layers()}
    unknown = sorted(set(names) - known)
    if unknown:
        raise ConfigError(
            f"extractor {extractor.extractor_id} has no layer(s): {', '.join(unknown)}"
        )

    stats = {name: CalibrationStats(extractor.layer(name).channels) for name in names}
    count = 0
    for frame in DirectorySource(frames_dir):
        pre = preprocess_frame(frame, config.target_frame, config.aspect_ratio)
        features = extractor.extract(pre, set(names))
        for name in names:
            stats[name].update(channel_average(features[name]))
        count += 1
    if count < 2:
        raise ConfigError(f"need at least 2 samples, got {count}")

    records = [stats[name].to_json_dict(extractor.extractor_id, name) for name in names]
    doc = records[0] if len(records) == 1 else {"version": STATS_VERSION, "records": records}
    out = Path(out_path)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    # sort_keys pins the byte layout so reruns are comparable with cmp.
    out.write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")
    click.echo(f"calibrated {len(names)} layer(s) over {count} frames -> {out}", err=True)


@main.command("list-layers")
@click.option(
    "--extractor",
    "extractor_uri",
    default="mock://extractor",
    show_default=True,
    help="Feature extractor backend URI.",
)
@click.option("--z-dim", type=int, default=None, help="Only list layers with this channel count.")
@guarded
def cmd_list_layers(extractor_uri: str, z_dim: int | None) -> None:
    """Print the extractor's layer table, one 'name channels rowsxcols' line each."""
    extractor = get_extractor(extractor_uri)
    for spec in extractor.list_layers():
        if z_dim is not None and spec.channels != z_dim:
            continue
        click.echo(f"{spec.name}\t{spec.channels}\t{spec.rows}x{spec.cols}")


if __name__ == "__main__":
    main()
