"""Shared domain types, frame preprocessing, and pipeline configuration.

Everything in here is an immutable value object (frames, feature maps,
latent/style vectors, keypoint sets, transforms, config). Instances can be
shared freely between concurrent stages; the operations are pure functions.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping

import numpy as np
from PIL import Image

from .errors import ConfigError, ContractError, DegenerateInputError

COARSE = "coarse"
MIDDLE = "middle"
FINE = "fine"
STATIC = "static"
BANDS = (COARSE, MIDDLE, FINE)

DEFAULT_Z_DIM = 512
DEFAULT_TARGET = (426, 320)
DEFAULT_ASPECT = (4, 3)


class Mode(str, Enum):
    """Pipeline operating mode."""

    STYLE_MIX = "style_mix"
    CONST_CORRUPT = "const_corrupt"
    AFFINE = "affine"


def _readonly(values: Any, dtype: Any) -> np.ndarray:
    """Copy into a C-contiguous read-only array (our immutability backbone)."""
    arr = np.array(values, dtype=dtype, copy=True, order="C")
    arr.setflags(write=False)
    return arr


def _require_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{what} must be finite")


@dataclass(frozen=True, eq=False)
class Frame:
    """One RGB raster: (height, width, 3) uint8, plus capture metadata.

    `timestamp_ns` comes from a monotonic clock at capture time and
    `sequence` increases strictly within a session (enforced by sources,
    not by the type).
    """

    width: int
    height: int
    pixels: np.ndarray
    timestamp_ns: int
    sequence: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ContractError("frame dimensions must be positive")
        px = _readonly(self.pixels, np.uint8)
        if px.shape != (self.height, self.width, 3):
            raise ContractError(
                f"pixel buffer shape {px.shape} does not match "
                f"{self.height}x{self.width}x3"
            )
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_array(cls, pixels: np.ndarray, timestamp_ns: int = 0, sequence: int = 0) -> "Frame":
        pixels = np.asarray(pixels)
        h, w = pixels.shape[:2]
        return cls(width=w, height=h, pixels=pixels, timestamp_ns=timestamp_ns, sequence=sequence)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """One extractor layer's activations, indexed [channel][row][col]."""

    layer_name: str
    data: np.ndarray

    def __post_init__(self) -> None:
        d = _readonly(self.data, np.float64)
        if d.ndim != 3 or min(d.shape) < 1:
            raise ContractError(f"feature map must be (channels, rows, cols), got {d.shape}")
        object.__setattr__(self, "data", d)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def rows(self) -> int:
        return self.data.shape[1]

    @property
    def cols(self) -> int:
        return self.data.shape[2]

    @property
    def cells(self) -> int:
        """Spatial size of the layer (rows * cols)."""
        return self.rows * self.cols


@dataclass(frozen=True, eq=False)
class LatentVector:
    """A point in the generator's input space Z."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = _readonly(self.values, np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ContractError("latent must be a non-empty 1-D vector")
        _require_finite(v, "latent values")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.size

    @classmethod
    def zeros(cls, dim: int = DEFAULT_Z_DIM) -> "LatentVector":
        return cls(np.zeros(dim))


@dataclass(frozen=True, eq=False)
class StyleVector:
    """A point in the disentangled style space W, tagged with its band."""

    values: np.ndarray
    band: str = STATIC

    def __post_init__(self) -> None:
        v = _readonly(self.values, np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ContractError("style vector must be a non-empty 1-D vector")
        _require_finite(v, "style values")
        if self.band not in (*BANDS, STATIC):
            raise ContractError(f"unknown band label {self.band!r}")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.size

    def with_band(self, band: str) -> "StyleVector":
        return StyleVector(self.values, band=band)


@dataclass(frozen=True, eq=False)
class StyleStack:
    """The per-layer style matrix fed to synthesis: one W row per layer.

    `provenance[r]` records which band supplied row r.
    """

    rows: np.ndarray
    provenance: tuple[str, ...]

    def __post_init__(self) -> None:
        r = _readonly(self.rows, np.float64)
        if r.ndim != 2 or r.shape[0] < 1 or r.shape[1] < 1:
            raise ContractError(f"style stack must be (num_ws, dim), got {r.shape}")
        _require_finite(r, "style stack rows")
        prov = tuple(self.provenance)
        if len(prov) != r.shape[0]:
            raise ContractError("provenance must label every row")
        for label in prov:
            if label not in (*BANDS, STATIC):
                raise ContractError(f"unknown band label {label!r} in provenance")
        object.__setattr__(self, "rows", r)
        object.__setattr__(self, "provenance", prov)

    @property
    def num_ws(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def row(self, index: int) -> np.ndarray:
        return self.rows[index]


_HANDEDNESS = (None, "left", "right")


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """Normalized 2-D landmarks with confidences.

    Coordinates follow image convention: x in [0,1] left to right, y in
    [0,1] top to bottom; both (and confidence) are clamped on construction.
    `landmark_ids` use the pose/hand provider's numbering scheme.
    """

    points: np.ndarray
    part: str = "hand"
    landmark_ids: tuple[int, ...] = ()
    handedness: str | None = None

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.float64, copy=True, order="C")
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ContractError(f"points must be (n, 3) [x, y, confidence], got {pts.shape}")
        _require_finite(pts, "keypoints")
        np.clip(pts, 0.0, 1.0, out=pts)
        pts.setflags(write=False)
        ids = tuple(self.landmark_ids) or tuple(range(pts.shape[0]))
        if len(ids) != pts.shape[0]:
            raise ContractError("landmark_ids must match the number of points")
        if self.handedness not in _HANDEDNESS:
            raise ContractError(f"handedness must be left/right/None, got {self.handedness!r}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "landmark_ids", ids)

    def __len__(self) -> int:
        return self.points.shape[0]

    def confident_mask(self, floor: float) -> np.ndarray:
        return self.points[:, 2] >= floor

    def mean_confidence(self) -> float:
        return float(self.points[:, 2].mean()) if len(self) else 0.0

    def find(self, landmark_id: int) -> np.ndarray | None:
        """Return the (x, y, confidence) row for a landmark id, if present."""
        try:
            idx = self.landmark_ids.index(landmark_id)
        except ValueError:
            return None
        return self.points[idx]


@dataclass(frozen=True, eq=False)
class TransformMatrix:
    """Homogeneous 2-D rotation-scale transform for the generator input.

    Third row is exactly (0, 0, 1); the upper-left 2x2 block must be a
    uniformly scaled rotation (orthogonal columns of equal norm).
    """

    m: np.ndarray

    def __post_init__(self) -> None:
        m = _readonly(self.m, np.float64)
        if m.shape != (3, 3):
            raise ContractError(f"transform must be 3x3, got {m.shape}")
        _require_finite(m, "transform")
        if not np.array_equal(m[2], [0.0, 0.0, 1.0]):
            raise ContractError("third row must be exactly (0, 0, 1)")
        c0, c1 = m[:2, 0], m[:2, 1]
        n0, n1 = float(np.dot(c0, c0)), float(np.dot(c1, c1))
        if n0 <= 0.0 or n1 <= 0.0:
            raise ContractError("rotation-scale block must be non-zero")
        scale2 = 0.5 * (n0 + n1)
        if abs(n0 - n1) > 1e-6 * scale2 or abs(float(np.dot(c0, c1))) > 1e-6 * scale2:
            raise ContractError("upper-left block must be a uniformly scaled rotation")
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "TransformMatrix":
        return cls(np.eye(3))


@dataclass(frozen=True)
class MixingRanges:
    """Row assignment of the style stack: which band fills which rows.

    The coarse/middle/fine ranges are half-open `[lo, hi)` row intervals;
    `static_rows` overrides any band for the rows it names. Every row in
    `[0, num_ws)` must be covered by exactly one band or by static_rows.
    """

    num_ws: int
    coarse: tuple[int, int]
    middle: tuple[int, int]
    fine: tuple[int, int]
    static_rows: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        if self.num_ws < 1:
            raise ConfigError("num_ws must be positive")
        object.__setattr__(self, "coarse", (int(self.coarse[0]), int(self.coarse[1])))
        object.__setattr__(self, "middle", (int(self.middle[0]), int(self.middle[1])))
        object.__setattr__(self, "fine", (int(self.fine[0]), int(self.fine[1])))
        object.__setattr__(self, "static_rows", frozenset(int(r) for r in self.static_rows))
        for band, (lo, hi) in self.band_ranges().items():
            if not (0 <= lo <= hi <= self.num_ws):
                raise ConfigError(f"{band} range [{lo}, {hi}) outside [0, {self.num_ws})")
        for r in self.static_rows:
            if not 0 <= r < self.num_ws:
                raise ConfigError(f"static row {r} outside [0, {self.num_ws})")
        ranges = list(self.band_ranges().items())
        for i, (band_a, a) in enumerate(ranges):
            for band_b, b in ranges[i + 1:]:
                if a[0] < b[1] and b[0] < a[1]:
                    raise ConfigError(f"{band_a} and {band_b} ranges overlap")
        covered = set(self.static_rows)
        for lo, hi in self.band_ranges().values():
            covered.update(range(lo, hi))
        missing = sorted(set(range(self.num_ws)) - covered)
        if missing:
            raise ConfigError(f"rows {missing} are covered by no band and not static")

    def band_ranges(self) -> dict[str, tuple[int, int]]:
        return {COARSE: self.coarse, MIDDLE: self.middle, FINE: self.fine}

    def band_for_row(self, row: int) -> str:
        """Which source fills a row; static rows win over any band."""
        if row in self.static_rows:
            return STATIC
        for band, (lo, hi) in self.band_ranges().items():
            if lo <= row < hi:
                return band
        raise ConfigError(f"row {row} is covered by no band and not static")

    @classmethod
    def default(cls, num_ws: int) -> "MixingRanges":
        """Quarter/quarter/half split: the conventional coarse/middle/fine rows."""
        q = max(1, num_ws // 4)
        if num_ws < 3:
            return cls(num_ws, (0, num_ws), (num_ws, num_ws), (num_ws, num_ws))
        return cls(num_ws, (0, q), (q, 2 * q), (2 * q, num_ws))

    def to_json_dict(self) -> dict:
        return {
            "num_ws": self.num_ws,
            "coarse": list(self.coarse),
            "middle": list(self.middle),
            "fine": list(self.fine),
            "static_rows": sorted(self.static_rows),
        }

    @classmethod
    def from_json_dict(cls, obj: Mapping, num_ws: int | None = None) -> "MixingRanges":
        try:
            return cls(
                num_ws=int(obj.get("num_ws", num_ws)),
                coarse=tuple(obj["coarse"]),
                middle=tuple(obj["middle"]),
                fine=tuple(obj["fine"]),
                static_rows=frozenset(obj.get("static_rows", ())),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad mixing_ranges object: {exc}") from exc


@dataclass(frozen=True)
class PipelineConfig:
    """Everything an operator can steer, as one immutable snapshot.

    `layers` maps extractor layer names to their combination weights.
    `mixing_ranges=None` means "use the default split for the attached
    generator's row count".
    """

    mode: Mode = Mode.STYLE_MIX
    layers: Mapping[str, float] = field(default_factory=lambda: {"conv5_3": 1.0})
    target_frame: tuple[int, int] = DEFAULT_TARGET
    aspect_ratio: tuple[int, int] = DEFAULT_ASPECT
    psi: float = 1.0
    band_psi: Mapping[str, float] = field(default_factory=dict)
    truncate_static_rows: bool = True
    mixing_ranges: MixingRanges | None = None
    latent_smoothing: float = 0.3
    gesture_smoothing: float = 0.5
    session_seed: int = 0
    static_seed: int = 0
    standardize: bool = True
    z_dim: int = DEFAULT_Z_DIM
    warmup_frames: int = 120
    confidence_floor: float = 0.5
    hand_hysteresis: float = 0.1
    max_scale: float = 2.0
    corruption_part: str = "body"

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "layers", dict(self.layers))
        object.__setattr__(self, "band_psi", dict(self.band_psi))
        object.__setattr__(self, "target_frame", tuple(int(v) for v in self.target_frame))
        object.__setattr__(self, "aspect_ratio", tuple(int(v) for v in self.aspect_ratio))
        if not self.layers:
            raise ConfigError("at least one extractor layer must be configured")
        alphas = list(self.layers.values())
        if any(a < 0 or not np.isfinite(a) for a in alphas):
            raise ConfigError("layer weights must be finite and >= 0")
        if not any(a > 0 for a in alphas):
            raise ConfigError("at least one layer weight must be > 0")
        tw, th = self.target_frame
        aw, ah = self.aspect_ratio
        if tw <= 0 or th <= 0 or aw <= 0 or ah <= 0:
            raise ConfigError("target frame and aspect ratio must be positive")
        if not -1.0 <= self.psi <= 2.0:
            raise ConfigError(f"psi {self.psi} outside [-1, 2]")
        for band, value in self.band_psi.items():
            if band not in BANDS:
                raise ConfigError(f"band_psi key {band!r} is not a band")
            if not -1.0 <= value <= 2.0:
                raise ConfigError(f"band_psi[{band!r}] {value} outside [-1, 2]")
        for name, lam in (("latent_smoothing", self.latent_smoothing),
                          ("gesture_smoothing", self.gesture_smoothing)):
            if not 0.0 < lam <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {lam}")
        if self.z_dim < 1:
            raise ConfigError("z_dim must be positive")
        if self.warmup_frames < 0:
            raise ConfigError("warmup_frames must be >= 0")
        if not 0.0 <= self.confidence_floor <= 1.0:
            raise ConfigError("confidence_floor must be in [0, 1]")
        if self.hand_hysteresis < 0.0:
            raise ConfigError("hand_hysteresis must be >= 0")
        if self.max_scale <= 1.0:
            raise ConfigError("max_scale must be > 1")

    def to_json_dict(self) -> dict:
        d = {
            "mode": self.mode.value,
            "layers": dict(self.layers),
            "target_frame": list(self.target_frame),
            "aspect_ratio": list(self.aspect_ratio),
            "psi": self.psi,
            "band_psi": dict(self.band_psi),
            "truncate_static_rows": self.truncate_static_rows,
            "mixing_ranges": self.mixing_ranges.to_json_dict() if self.mixing_ranges else None,
            "latent_smoothing": self.latent_smoothing,
            "gesture_smoothing": self.gesture_smoothing,
            "session_seed": self.session_seed,
            "static_seed": self.static_seed,
            "standardize": self.standardize,
            "z_dim": self.z_dim,
            "warmup_frames": self.warmup_frames,
            "confidence_floor": self.confidence_floor,
            "hand_hysteresis": self.hand_hysteresis,
            "max_scale": self.max_scale,
            "corruption_part": self.corruption_part,
        }
        return d

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "PipelineConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs: dict[str, Any] = dict(obj)
        if "mode" in kwargs:
            try:
                kwargs["mode"] = Mode(kwargs["mode"])
            except ValueError as exc:
                raise ConfigError(f"unknown mode {kwargs['mode']!r}") from exc
        mr = kwargs.get("mixing_ranges")
        if mr is not None:
            kwargs["mixing_ranges"] = MixingRanges.from_json_dict(mr)
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def updated(self, **changes: Any) -> "PipelineConfig":
        """Return a new validated snapshot with `changes` applied."""
        return replace(self, **changes)


def preprocess_frame(
    frame: Frame,
    target: tuple[int, int] = DEFAULT_TARGET,
    aspect: tuple[int, int] = DEFAULT_ASPECT,
) -> Frame:
    """Center-crop to the configured aspect ratio, then bilinear-resize.

    A frame already at the target dimensions is returned unchanged, which
    also makes the operation idempotent. Timestamp and sequence carry over.
    """
    tw, th = int(target[0]), int(target[1])
    aw, ah = int(aspect[0]), int(aspect[1])
    if tw <= 0 or th <= 0 or aw <= 0 or ah <= 0:
        raise ContractError("target and aspect must be positive")
    if frame.width < 16 or frame.height < 16:
        raise DegenerateInputError(
            f"frame {frame.width}x{frame.height} below the 16x16 minimum"
        )
    if (frame.width, frame.height) == (tw, th):
        return frame
    w, h = frame.width, frame.height
    if w * ah >= h * aw:
        crop_h = h
        crop_w = max(1, (h * aw) // ah)
    else:
        crop_w = w
        crop_h = max(1, (w * ah) // aw)
    x0 = (w - crop_w) // 2
    y0 = (h - crop_h) // 2
    cropped = np.ascontiguousarray(frame.pixels[y0:y0 + crop_h, x0:x0 + crop_w])
    resized = Image.fromarray(cropped).resize((tw, th), Image.Resampling.BILINEAR)
    return Frame.from_array(
        np.asarray(resized, dtype=np.uint8),
        timestamp_ns=frame.timestamp_ns,
        sequence=frame.sequence,
    )


def center_crop_window(
    width: int, height: int, aspect: tuple[int, int] = DEFAULT_ASPECT
) -> tuple[int, int, int, int]:
    """(x0, y0, w, h) of the largest centered window with the given ratio."""
    aw, ah = int(aspect[0]), int(aspect[1])
    if width * ah >= height * aw:
        ch, cw = height, max(1, (height * aw) // ah)
    else:
        cw, ch = width, max(1, (width * ah) // aw)
    return (width - cw) // 2, (height - ch) // 2, cw, ch


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic generator; seeds are masked to 64 bits so negative or
    oversize values from config files still seed reproducibly."""
    return np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)


def ema_smooth(previous: np.ndarray, current: np.ndarray, lam: float) -> np.ndarray:
    """Exponential smoothing step: (1 - lam) * previous + lam * current."""
    prev = np.asarray(previous, dtype=np.float64)
    cur = np.asarray(current, dtype=np.float64)
    if prev.shape != cur.shape:
        raise ContractError(f"shape mismatch {prev.shape} vs {cur.shape}")
    if not 0.0 < lam <= 1.0:
        raise ContractError(f"lambda must be in (0, 1], got {lam}")
    if lam == 1.0:
        return cur.copy()
    return (1.0 - lam) * prev + lam * cur
