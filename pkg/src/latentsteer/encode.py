"""Feature-map encoding: turn extractor activations into latent vectors.

The path is: spatial region -> per-channel average -> weighted combination
across layers -> optional standardization toward N(0, I) using running
calibration statistics. Region layout splits each map into a coarse band
(top half), a middle band (bottom-left quadrant) and a fine band
(bottom-right quadrant).
"""
from __future__ import annotations

from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .core import BANDS, COARSE, FINE, MIDDLE, FeatureMap, LatentVector, PipelineConfig
from .errors import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    LayerMismatchError,
    NotCalibratedError,
)

STANDARDIZE_EPS = 1e-6
STATS_VERSION = 1


class FeatureRegion(NamedTuple):
    """Half-open spatial window [row_start, row_stop) x [col_start, col_stop)."""

    row_start: int
    row_stop: int
    col_start: int
    col_stop: int

    @property
    def cells(self) -> int:
        return (self.row_stop - self.row_start) * (self.col_stop - self.col_start)

    def extract(self, data: np.ndarray) -> np.ndarray:
        """Slice a (channels, rows, cols) array down to this window."""
        return data[:, self.row_start:self.row_stop, self.col_start:self.col_stop]


class BandLatents(NamedTuple):
    coarse: LatentVector
    middle: LatentVector
    fine: LatentVector

    def as_dict(self) -> dict[str, LatentVector]:
        return {COARSE: self.coarse, MIDDLE: self.middle, FINE: self.fine}


def partition_regions(rows: int, cols: int) -> dict[str, FeatureRegion]:
    """Split a rows x cols grid into coarse/middle/fine windows.

    Coarse takes the top half (all columns), middle the bottom-left,
    fine the bottom-right; splits use floor division so every cell lands
    in exactly one window. Grids smaller than 2x2 cannot host all three.
    """
    if rows < 2 or cols < 2:
        raise DegenerateInputError(f"grid {rows}x{cols} below the 2x2 minimum")
    row_mid = rows // 2
    col_mid = cols // 2
    return {
        COARSE: FeatureRegion(0, row_mid, 0, cols),
        MIDDLE: FeatureRegion(row_mid, rows, 0, col_mid),
        FINE: FeatureRegion(row_mid, rows, col_mid, cols),
    }


def channel_average(features: FeatureMap | np.ndarray) -> np.ndarray:
    """Average each channel over its spatial extent: (C, H, W) -> (C,)."""
    data = features.data if isinstance(features, FeatureMap) else np.asarray(features, dtype=np.float64)
    if data.ndim != 3:
        raise ContractError(f"expected (channels, rows, cols), got shape {data.shape}")
    if data.shape[1] == 0 or data.shape[2] == 0:
        raise DegenerateInputError("feature map has an empty spatial extent")
    return data.mean(axis=(1, 2))


def weighted_combine(vectors: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Plain weighted sum of equal-length vectors. No renormalization."""
    if len(vectors) == 0:
        raise ContractError("nothing to combine")
    if len(vectors) != len(weights):
        raise ContractError(f"{len(vectors)} vectors vs {len(weights)} weights")
    ws = [float(w) for w in weights]
    if not all(np.isfinite(w) for w in ws):
        raise ContractError("weights must be finite")
    first = np.asarray(vectors[0], dtype=np.float64)
    if first.ndim != 1:
        raise ContractError("vectors must be 1-D")
    out = np.zeros_like(first)
    for vec, w in zip(vectors, ws):
        v = np.asarray(vec, dtype=np.float64)
        if v.shape != first.shape:
            raise ContractError(f"vector shape {v.shape} != {first.shape}")
        out += w * v
    return out


class CalibrationStats:
    """Running per-dimension mean and variance (Welford's algorithm).

    This is the one deliberately mutable object in the encoding path; the
    pipeline owns a private instance per band and stops updating it once
    warm-up completes. Variance is the population variance (M2 / count).
    """

    __slots__ = ("dim", "count", "mean", "_m2")

    def __init__(self, dim: int):
        if dim < 1:
            raise ContractError("dim must be positive")
        self.dim = int(dim)
        self.count = 0
        self.mean = np.zeros(self.dim)
        self._m2 = np.zeros(self.dim)

    def update(self, vector: np.ndarray) -> None:
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ContractError(f"expected shape ({self.dim},), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ContractError("calibration sample must be finite")
        self.count += 1
        delta = v - self.mean
        self.mean += delta / self.count
        self._m2 += delta * (v - self.mean)

    @property
    def variance(self) -> np.ndarray:
        if self.count == 0:
            return np.zeros(self.dim)
        return self._m2 / self.count

    @property
    def ready(self) -> bool:
        return self.count >= 2

    def standardize(self, vector: np.ndarray, eps: float = STANDARDIZE_EPS) -> np.ndarray:
        """Map a vector toward N(0, I) under the accumulated statistics."""
        if not self.ready:
            raise NotCalibratedError(
                f"need at least 2 calibration samples, have {self.count}"
            )
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ContractError(f"expected shape ({self.dim},), got {v.shape}")
        denom = np.maximum(np.sqrt(self.variance), eps)
        return (v - self.mean) / denom

    def copy(self) -> "CalibrationStats":
        clone = CalibrationStats(self.dim)
        clone.count = self.count
        clone.mean = self.mean.copy()
        clone._m2 = self._m2.copy()
        return clone

    def to_json_dict(self, extractor_id: str, layer: str) -> dict:
        return {
            "version": STATS_VERSION,
            "extractor_id": extractor_id,
            "layer": layer,
            "dim": self.dim,
            "count": self.count,
            "mean": self.mean.tolist(),
            "variance": self.variance.tolist(),
        }

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> tuple["CalibrationStats", str, str]:
        """Load stats plus the (extractor_id, layer) pair they belong to."""
        try:
            if obj["version"] != STATS_VERSION:
                raise ConfigError(f"unsupported stats version {obj['version']!r}")
            dim = int(obj["dim"])
            count = int(obj["count"])
            mean = np.asarray(obj["mean"], dtype=np.float64)
            variance = np.asarray(obj["variance"], dtype=np.float64)
            extractor_id = str(obj["extractor_id"])
            layer = str(obj["layer"])
        except KeyError as exc:
            raise ConfigError(f"stats file missing key {exc}") from exc
        if mean.shape != (dim,) or variance.shape != (dim,):
            raise ConfigError("stats mean/variance length does not match dim")
        if count < 0 or np.any(variance < 0):
            raise ConfigError("stats counts and variances must be non-negative")
        stats = cls(dim)
        stats.count = count
        stats.mean = mean.copy()
        stats._m2 = variance * count
        return stats, extractor_id, layer


def update_calibration(stats: CalibrationStats, vector: np.ndarray) -> CalibrationStats:
    """One Welford step; mutates and returns `stats` for chaining."""
    stats.update(vector)
    return stats


def standardize(vector: np.ndarray, stats: CalibrationStats, eps: float = STANDARDIZE_EPS) -> np.ndarray:
    return stats.standardize(vector, eps)


def combine_stats(
    per_layer: Sequence[CalibrationStats], weights: Sequence[float]
) -> CalibrationStats:
    """Seed statistics for a weighted layer combination.

    Treating layers as independent, the combined stream has
    mean = sum(a_l * mean_l) and variance = sum(a_l^2 * var_l). The seeded
    count is the smallest contributor count, since the combination is only
    as calibrated as its least-sampled layer.
    """
    if len(per_layer) == 0:
        raise ContractError("nothing to combine")
    if len(per_layer) != len(weights):
        raise ContractError(f"{len(per_layer)} stats vs {len(weights)} weights")
    dim = per_layer[0].dim
    if any(s.dim != dim for s in per_layer):
        raise ContractError("stats dims differ")
    mean = weighted_combine([s.mean for s in per_layer], weights)
    var = weighted_combine([s.variance for s in per_layer], [w * w for w in weights])
    out = CalibrationStats(dim)
    out.count = min(s.count for s in per_layer)
    out.mean = mean
    out._m2 = var * out.count
    return out


def new_band_stats(dim: int) -> dict[str, CalibrationStats]:
    return {band: CalibrationStats(dim) for band in BANDS}


def encode_frame(
    features: Mapping[str, FeatureMap],
    config: PipelineConfig,
    band_stats: Mapping[str, CalibrationStats] | None = None,
) -> BandLatents:
    """Encode one frame's feature maps into coarse/middle/fine latents.

    Every configured layer must be present with `config.z_dim` channels.
    Layers are combined in sorted-name order so the result does not depend
    on mapping iteration order. When `band_stats` is given and the config
    asks for standardization, each band is standardized with its own stats.
    """
    names = sorted(config.layers)
    vectors: dict[str, list[np.ndarray]] = {band: [] for band in BANDS}
    alphas: list[float] = []
    for name in names:
        fm = features.get(name)
        if fm is None:
            raise LayerMismatchError(f"extractor did not produce layer {name!r}")
        if fm.channels != config.z_dim:
            raise LayerMismatchError(
                f"layer {name!r} has {fm.channels} channels, expected {config.z_dim}"
            )
        regions = partition_regions(fm.rows, fm.cols)
        for band in BANDS:
            vectors[band].append(channel_average(regions[band].extract(fm.data)))
        alphas.append(float(config.layers[name]))

    combined: dict[str, np.ndarray] = {}
    for band in BANDS:
        vec = weighted_combine(vectors[band], alphas)
        if config.standardize and band_stats is not None:
            vec = band_stats[band].standardize(vec)
        combined[band] = vec
    return BandLatents(
        coarse=LatentVector(combined[COARSE]),
        middle=LatentVector(combined[MIDDLE]),
        fine=LatentVector(combined[FINE]),
    )
