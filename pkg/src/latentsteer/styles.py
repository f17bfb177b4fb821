"""Style-space operations: truncation, stack assembly, constant corruption.

Band latents arrive here already mapped into W space; this module decides
what each synthesis row receives (which band, how truncated) and provides
the norm-preserving corruption applied to the generator's learned constant.
"""
from __future__ import annotations

from typing import Mapping

import numpy as np

from .core import (
    BANDS,
    STATIC,
    LatentVector,
    MixingRanges,
    StyleStack,
    StyleVector,
    seeded_rng,
)
from .errors import ContractError

__all__ = [
    "MixingRanges",
    "truncate",
    "build_style_stack",
    "reseed_static",
    "make_corruption_noise",
    "corrupt_constant",
]


def truncate(w: np.ndarray, w_avg: np.ndarray, psi: float) -> np.ndarray:
    """Pull a style vector toward the generator's average: w_avg + psi*(w - w_avg).

    psi=1 hands back w unchanged and psi=0 hands back w_avg unchanged,
    both bit-for-bit; the general case is evaluated in this exact form so
    it stays an affine blend of the two endpoints.
    """
    w = np.asarray(w, dtype=np.float64)
    w_avg = np.asarray(w_avg, dtype=np.float64)
    if w.shape != w_avg.shape:
        raise ContractError(f"shape mismatch {w.shape} vs {w_avg.shape}")
    if not np.isfinite(psi):
        raise ContractError("psi must be finite")
    if psi == 1.0:
        return w.copy()
    if psi == 0.0:
        return w_avg.copy()
    return w_avg + psi * (w - w_avg)


def build_style_stack(
    band_styles: Mapping[str, StyleVector | np.ndarray],
    static_style: StyleVector | np.ndarray,
    w_avg: np.ndarray,
    ranges: MixingRanges,
    *,
    psi: float = 1.0,
    band_psi: Mapping[str, float] | None = None,
    truncate_static: bool = True,
) -> StyleStack:
    """Assemble the per-row style matrix for one synthesis call.

    Each row takes the vector of the band `ranges` assigns it, truncated
    with that band's psi (`band_psi` overrides the global value). Static
    rows take `static_style`, truncated with the global psi only when
    `truncate_static` is set.
    """
    band_psi = dict(band_psi or {})
    w_avg = np.asarray(w_avg, dtype=np.float64)

    def vec(source: StyleVector | np.ndarray) -> np.ndarray:
        return source.values if isinstance(source, StyleVector) else np.asarray(source, dtype=np.float64)

    missing = [b for b in BANDS if b not in band_styles]
    if missing:
        raise ContractError(f"band styles missing {missing}")
    static_vec = vec(static_style)
    if static_vec.shape != w_avg.shape:
        raise ContractError("static style and w_avg dims differ")

    truncated: dict[str, np.ndarray] = {}
    for band in BANDS:
        v = vec(band_styles[band])
        truncated[band] = truncate(v, w_avg, band_psi.get(band, psi))
    truncated[STATIC] = truncate(static_vec, w_avg, psi) if truncate_static else static_vec.copy()

    provenance = tuple(ranges.band_for_row(r) for r in range(ranges.num_ws))
    rows = np.stack([truncated[band] for band in provenance])
    return StyleStack(rows, provenance=provenance)


def reseed_static(seed: int, dim: int) -> LatentVector:
    """Draw the static Z latent for a seed; same seed, same latent, always."""
    if dim < 1:
        raise ContractError("dim must be positive")
    return LatentVector(seeded_rng(seed).standard_normal(dim))


def make_corruption_noise(base: np.ndarray, seed: int) -> np.ndarray:
    """Sample a noise tensor orthogonal to `base` with equal Frobenius norm.

    This is the fixed endpoint the corruption arc rotates toward; building
    it once per session keeps the corruption path stable while its
    magnitude moves.
    """
    base = np.asarray(base, dtype=np.float64)
    base_norm_sq = float(np.vdot(base, base))
    if base_norm_sq <= 0.0:
        raise ContractError("cannot corrupt an all-zero constant")
    rng = seeded_rng(seed)
    base_norm = np.sqrt(base_norm_sq)
    for _ in range(8):
        raw = rng.standard_normal(base.shape)
        orth = raw - (float(np.vdot(raw, base)) / base_norm_sq) * base
        orth_norm = float(np.sqrt(np.vdot(orth, orth)))
        if orth_norm > 1e-12 * base_norm:
            return orth * (base_norm / orth_norm)
    raise ContractError("could not draw a noise tensor independent of the base")


def corrupt_constant(base: np.ndarray, noise: np.ndarray, magnitude: float) -> np.ndarray:
    """Rotate the learned constant toward its noise endpoint.

    cos(m*pi/2) * base + sin(m*pi/2) * noise, which preserves the Frobenius
    norm when `noise` is orthogonal to `base` with matching norm (what
    `make_corruption_noise` produces). magnitude=0 returns the base and
    magnitude=1 the noise, both bit-for-bit.
    """
    base = np.asarray(base, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if base.shape != noise.shape:
        raise ContractError(f"shape mismatch {base.shape} vs {noise.shape}")
    if not np.isfinite(magnitude) or not 0.0 <= magnitude <= 1.0:
        raise ContractError(f"magnitude must be in [0, 1], got {magnitude}")
    if magnitude == 0.0:
        return base.copy()
    if magnitude == 1.0:
        return noise.copy()
    angle = magnitude * (np.pi / 2.0)
    return np.cos(angle) * base + np.sin(angle) * noise
