"""Deterministic mock backends for GPU-free tests and offline rendering.

The mock extractor grids the frame into each layer's spatial shape, takes
per-cell mean luminance, and expands to channels with seeded per-channel
gains, so it is local (a pixel only influences its own cell) and exactly
reproducible. The mock generator maps latents through a fixed squashing
network and renders an analytic test card whose background gradient follows
the coarse stack rows, stripe pattern the middle rows, and color palette
the fine rows.

All numerics avoid matrix-multiply kernels: reductions are elementwise or
`np.add.reduceat`, which keeps outputs bit-stable for a given environment.
"""
from __future__ import annotations

import functools
import zlib
from typing import Iterable

import numpy as np

from ..core import (
    Frame,
    FeatureMap,
    LatentVector,
    StyleStack,
    StyleVector,
    TransformMatrix,
)
from ..errors import BackendError, ContractError, DegenerateInputError, LayerMismatchError
from .base import AFFINE_ACCESS, CONSTANT_ACCESS, FeatureExtractor, Generator, LayerSpec

# layer shapes of the canonical 16-layer CNN for a 256x256 RGB input
MOCK_LAYER_TABLE: tuple[LayerSpec, ...] = (
    LayerSpec("conv1_1", 64, 256, 256),
    LayerSpec("conv1_2", 64, 256, 256),
    LayerSpec("conv2_1", 128, 128, 128),
    LayerSpec("conv2_2", 128, 128, 128),
    LayerSpec("conv3_1", 256, 64, 64),
    LayerSpec("conv3_2", 256, 64, 64),
    LayerSpec("conv3_3", 256, 64, 64),
    LayerSpec("conv4_1", 512, 32, 32),
    LayerSpec("conv4_2", 512, 32, 32),
    LayerSpec("conv4_3", 512, 32, 32),
    LayerSpec("conv5_1", 512, 16, 16),
    LayerSpec("conv5_2", 512, 16, 16),
    LayerSpec("conv5_3", 512, 16, 16),
    LayerSpec("adavgpool", 512, 7, 7),
)

_MASK64 = 0xFFFFFFFFFFFFFFFF


def _derived_rng(seed: int, label: str) -> np.random.Generator:
    """Independent stream per (seed, label), stable across runs."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed) & _MASK64, zlib.crc32(label.encode())])
    )


def _luminance(pixels: np.ndarray) -> np.ndarray:
    px = pixels.astype(np.float64)
    return (0.299 * px[:, :, 0] + 0.587 * px[:, :, 1] + 0.114 * px[:, :, 2]) / 255.0


def _cell_means(luma: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Mean luminance per cell of a rows x cols grid over the image."""
    h, w = luma.shape
    if h < rows or w < cols:
        raise DegenerateInputError(
            f"frame {w}x{h} too small for a {cols}x{rows} cell grid"
        )
    r_idx = np.array([(i * h) // rows for i in range(rows)])
    c_idx = np.array([(j * w) // cols for j in range(cols)])
    sums = np.add.reduceat(np.add.reduceat(luma, r_idx, axis=0), c_idx, axis=1)
    r_counts = np.diff(np.append(r_idx, h))
    c_counts = np.diff(np.append(c_idx, w))
    return sums / np.multiply.outer(r_counts, c_counts)


def mock_extract(frame: Frame, layer: LayerSpec, seed: int) -> FeatureMap:
    """Grid the frame to the layer's shape and expand with seeded gains."""
    grid = _cell_means(_luminance(frame.pixels), layer.rows, layer.cols)
    gains = _derived_rng(seed, f"extract:{layer.name}").standard_normal(layer.channels)
    return FeatureMap(layer.name, np.multiply.outer(gains, grid))


@functools.lru_cache(maxsize=8)
def _mapping_matrix(seed: int, w_dim: int, z_dim: int) -> np.ndarray:
    a = _derived_rng(seed, "mapping").standard_normal((w_dim, z_dim))
    a /= np.sqrt(z_dim)
    a.setflags(write=False)
    return a


def mock_map(z: LatentVector, seed: int, w_dim: int | None = None) -> StyleVector:
    """w = tanh(A z) for a seeded fixed matrix A."""
    w_dim = z.dim if w_dim is None else w_dim
    a = _mapping_matrix(int(seed) & _MASK64, w_dim, z.dim)
    # elementwise multiply + axis sum instead of a matvec kernel
    return StyleVector(np.tanh((a * z.values[np.newaxis, :]).sum(axis=1)))


class MockExtractor(FeatureExtractor):
    """Seeded deterministic extractor over the fixed mock layer table."""

    def __init__(self, seed: int = 0):
        self._seed = int(seed)
        self._by_name = {spec.name: spec for spec in MOCK_LAYER_TABLE}
        self._gain_cache: dict[str, np.ndarray] = {}

    @property
    def extractor_id(self) -> str:
        return f"mock://extractor?seed={self._seed}"

    def list_layers(self) -> tuple[LayerSpec, ...]:
        return MOCK_LAYER_TABLE

    def extract(self, frame: Frame, layers: Iterable[str]) -> dict[str, FeatureMap]:
        names = list(layers)
        unknown = [n for n in names if n not in self._by_name]
        if unknown:
            raise LayerMismatchError(f"unknown layers {unknown}")
        luma = _luminance(frame.pixels)
        out: dict[str, FeatureMap] = {}
        for name in names:
            spec = self._by_name[name]
            grid = _cell_means(luma, spec.rows, spec.cols)
            gains = self._gains(spec)
            out[name] = FeatureMap(name, np.multiply.outer(gains, grid))
        return out

    def _gains(self, spec: LayerSpec) -> np.ndarray:
        g = self._gain_cache.get(spec.name)
        if g is None:
            g = _derived_rng(self._seed, f"extract:{spec.name}").standard_normal(spec.channels)
            g.setflags(write=False)
            self._gain_cache[spec.name] = g
        return g


class MockGenerator(Generator):
    """Seeded analytic test-card generator with full capability surface."""

    def __init__(
        self,
        seed: int = 0,
        z_dim: int = 512,
        num_ws: int = 16,
        resolution: int = 256,
    ):
        if min(z_dim, num_ws) < 1 or resolution < 8:
            raise ContractError("bad mock generator dimensions")
        self._seed = int(seed)
        self._z_dim = int(z_dim)
        self._num_ws = int(num_ws)
        self._resolution = int(resolution)
        # small seed-dependent twists so two mocks render distinct cards
        self._offsets = _derived_rng(self._seed, "card").uniform(-1.0, 1.0, 6)
        self._patterns: dict[tuple[str, tuple[int, int]], np.ndarray] = {}
        self._const0 = _derived_rng(self._seed, "constant").standard_normal(
            (self._z_dim, 4, 4)
        )
        self._const = self._const0.copy()
        self._transform = TransformMatrix.identity()
        self._w_avg: StyleVector | None = None

    @property
    def z_dim(self) -> int:
        return self._z_dim

    @property
    def w_dim(self) -> int:
        return self._z_dim

    @property
    def num_ws(self) -> int:
        return self._num_ws

    @property
    def resolution(self) -> int:
        return self._resolution

    @property
    def capabilities(self) -> frozenset[str]:
        return frozenset({CONSTANT_ACCESS, AFFINE_ACCESS})

    def map(self, z: LatentVector) -> StyleVector:
        if z.dim != self._z_dim:
            raise ContractError(f"latent dim {z.dim}, expected {self._z_dim}")
        return mock_map(z, self._seed, self.w_dim)

    def w_avg(self) -> StyleVector:
        """Empirical mean style over a fixed set of seeded draws."""
        if self._w_avg is None:
            rng = _derived_rng(self._seed, "w_avg")
            acc = np.zeros(self.w_dim)
            draws = 128
            for _ in range(draws):
                acc += self.map(LatentVector(rng.standard_normal(self._z_dim))).values
            self._w_avg = StyleVector(acc / draws)
        return self._w_avg

    def get_constant(self) -> np.ndarray:
        return self._const.copy()

    def set_constant(self, values: np.ndarray) -> None:
        v = np.asarray(values, dtype=np.float64)
        if v.shape != self._const0.shape:
            raise ContractError(
                f"constant shape {v.shape}, expected {self._const0.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ContractError("constant must be finite")
        self._const = v.copy()

    def reset_constant(self) -> None:
        self._const = self._const0.copy()

    def set_input_transform(self, transform: TransformMatrix) -> None:
        self._transform = transform

    def reset_input_transform(self) -> None:
        self._transform = TransformMatrix.identity()

    def _row_groups(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = rows.shape[0]
        q = max(1, n // 4)
        coarse = rows[0:min(q, n)]
        middle = rows[q:2 * q] if q < n else rows[-1:]
        fine = rows[2 * q:] if 2 * q < n else rows[-1:]
        if middle.shape[0] == 0:
            middle = rows[-1:]
        if fine.shape[0] == 0:
            fine = rows[-1:]
        return coarse, middle, fine

    def _pattern(self, label: str, shape: tuple[int, int]) -> np.ndarray:
        key = (label, shape)
        p = self._patterns.get(key)
        if p is None:
            p = _derived_rng(self._seed, f"card:{label}:{shape[0]}x{shape[1]}") \
                .standard_normal(shape)
            p.setflags(write=False)
            self._patterns[key] = p
        return p

    def _group_scalars(
        self, block: np.ndarray, label: str, off_a: float, off_b: float
    ) -> tuple[float, float]:
        # seeded unit-variance projections: a change anywhere in the block
        # moves the scalar by a comparable amount regardless of block size
        scale = 1.0 / np.sqrt(block.size)
        p1 = self._pattern(f"{label}:a", block.shape)
        p2 = self._pattern(f"{label}:b", block.shape)
        s1 = float(np.tanh((block * p1).sum() * scale + off_a))
        s2 = float(np.tanh((block * p2).sum() * scale + off_b))
        return s1, s2

    def synthesize(self, stack: StyleStack) -> Frame:
        if (stack.num_ws, stack.dim) != (self._num_ws, self.w_dim):
            raise BackendError(
                f"stack shape {(stack.num_ws, stack.dim)}, "
                f"expected {(self._num_ws, self.w_dim)}"
            )
        coarse, middle, fine = self._row_groups(stack.rows)
        o = self._offsets
        bg_s1, bg_s2 = self._group_scalars(coarse, "coarse", o[0], o[1])
        st_s1, st_s2 = self._group_scalars(middle, "middle", o[2], o[3])
        pal_a, pal_b = self._group_scalars(fine, "fine", o[4], o[5])

        res = self._resolution
        # centered unit coordinates, pushed through the inverse input
        # transform so scale > 1 zooms in and rotation turns the card
        xs = (np.arange(res) + 0.5) / res - 0.5
        ys = (np.arange(res) + 0.5) / res - 0.5
        block = self._transform.m[:2, :2]
        det = block[0, 0] * block[1, 1] - block[0, 1] * block[1, 0]
        inv = np.array([[block[1, 1], -block[0, 1]],
                        [-block[1, 0], block[0, 0]]]) / det
        xt = inv[0, 0] * xs[np.newaxis, :] + inv[0, 1] * ys[:, np.newaxis]
        yt = inv[1, 0] * xs[np.newaxis, :] + inv[1, 1] * ys[:, np.newaxis]

        phi = np.pi * bg_s1
        background = np.sin(
            2.0 * np.pi * 2.0 * (xt * np.cos(phi) + yt * np.sin(phi)) + np.pi * bg_s2
        )
        theta = np.pi * st_s1
        stripes = np.sin(
            2.0 * np.pi * 8.0 * (xt * np.cos(theta) + yt * np.sin(theta)) + np.pi * st_s2
        )

        # constant corruption: deviation from the learned constant fades the
        # structured card into a seeded speckle field of the same energy
        deviation = float(np.abs(self._const - self._const0).mean())
        level = float(np.tanh(3.0 * deviation))
        speckle = np.sin(2.0 * np.pi * 23.0 * xt) * np.sin(2.0 * np.pi * 29.0 * yt)

        luma = 0.5 + (0.3 * background + 0.2 * stripes) * (1.0 - level) \
            + 0.45 * level * speckle

        # zero-sum chroma keeps mean grayscale exactly equal to luma
        chroma = (pal_a, pal_b, -(pal_a + pal_b))
        amplitude = 0.5 * luma * (1.0 - luma)
        channels = [luma + c * amplitude for c in chroma]
        card = np.stack(channels, axis=-1)
        pixels = np.rint(np.clip(card, 0.0, 1.0) * 255.0).astype(np.uint8)
        return Frame.from_array(pixels)


def mock_synthesize(stack: StyleStack, seed: int, resolution: int = 256) -> Frame:
    """One-shot render with a fresh seeded generator (test convenience)."""
    gen = MockGenerator(seed=seed, z_dim=stack.dim, num_ws=stack.num_ws,
                        resolution=resolution)
    return gen.synthesize(stack)
