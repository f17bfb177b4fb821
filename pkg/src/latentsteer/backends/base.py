"""Backend interfaces for the feature extractor and the image generator.

Real model adapters plug in behind these; the package ships deterministic
mocks. Instances follow a single-consumer contract: one worker calls
extract/map/synthesize at a time (backends may parallelize internally).
"""
from __future__ import annotations

import abc
from typing import Iterable, NamedTuple

import numpy as np

from ..core import (
    FeatureMap,
    Frame,
    LatentVector,
    StyleStack,
    StyleVector,
    TransformMatrix,
)
from ..errors import BackendError, CapabilityError, ContractError

CONSTANT_ACCESS = "constant_access"
AFFINE_ACCESS = "affine_access"


class LayerSpec(NamedTuple):
    """Shape row for one extractor layer."""

    name: str
    channels: int
    rows: int
    cols: int

    def validate(self) -> "LayerSpec":
        if not self.name:
            raise ContractError("layer name must be non-empty")
        if min(self.channels, self.rows, self.cols) < 1:
            raise ContractError(f"layer {self.name!r} has non-positive dimensions")
        return self


class FeatureExtractor(abc.ABC):
    """Produces named feature maps from a preprocessed frame."""

    @property
    @abc.abstractmethod
    def extractor_id(self) -> str:
        """Stable identity string (URI) for calibration provenance."""

    @abc.abstractmethod
    def list_layers(self) -> tuple[LayerSpec, ...]:
        """Every layer this extractor can serve, with its shape."""

    @abc.abstractmethod
    def extract(self, frame: Frame, layers: Iterable[str]) -> dict[str, FeatureMap]:
        """Compute exactly the requested layers. Deterministic per frame."""

    def layer(self, name: str) -> LayerSpec:
        for spec in self.list_layers():
            if spec.name == name:
                return spec
        raise ContractError(f"extractor has no layer {name!r}")


class Generator(abc.ABC):
    """Pretrained image generator: mapping network plus synthesis."""

    @property
    @abc.abstractmethod
    def z_dim(self) -> int: ...

    @property
    @abc.abstractmethod
    def w_dim(self) -> int: ...

    @property
    @abc.abstractmethod
    def num_ws(self) -> int: ...

    @property
    def capabilities(self) -> frozenset[str]:
        return frozenset()

    @abc.abstractmethod
    def w_avg(self) -> StyleVector:
        """The average style used as the truncation anchor."""

    @abc.abstractmethod
    def map(self, z: LatentVector) -> StyleVector:
        """Run the mapping network. Deterministic."""

    @abc.abstractmethod
    def synthesize(self, stack: StyleStack) -> Frame:
        """Render one frame from a full style stack. Deterministic."""

    def _need(self, capability: str) -> None:
        if capability not in self.capabilities:
            raise CapabilityError(
                f"{type(self).__name__} does not support {capability}"
            )

    # constant-tensor access; only meaningful with CONSTANT_ACCESS
    def get_constant(self) -> np.ndarray:
        self._need(CONSTANT_ACCESS)
        raise NotImplementedError

    def set_constant(self, values: np.ndarray) -> None:
        self._need(CONSTANT_ACCESS)
        raise NotImplementedError

    def reset_constant(self) -> None:
        self._need(CONSTANT_ACCESS)
        raise NotImplementedError

    # input-transform access; only meaningful with AFFINE_ACCESS
    def set_input_transform(self, transform: TransformMatrix) -> None:
        self._need(AFFINE_ACCESS)
        raise NotImplementedError

    def reset_input_transform(self) -> None:
        self._need(AFFINE_ACCESS)
        raise NotImplementedError


def verify_extractor(extractor: FeatureExtractor, probe: Frame) -> None:
    """Conformance check: published shapes, exact layer set, determinism."""
    table = extractor.list_layers()
    if not table:
        raise BackendError("extractor publishes no layers")
    names = [spec.name for spec in table]
    if len(set(names)) != len(names):
        raise BackendError("extractor layer names are not unique")
    for spec in table:
        spec.validate()
    probe_names = set(names[:2])
    got = extractor.extract(probe, probe_names)
    if set(got) != probe_names:
        raise BackendError(
            f"extract returned layers {sorted(got)} for request {sorted(probe_names)}"
        )
    by_name = {spec.name: spec for spec in table}
    for name, fm in got.items():
        spec = by_name[name]
        if (fm.channels, fm.rows, fm.cols) != (spec.channels, spec.rows, spec.cols):
            raise BackendError(
                f"layer {name!r} shape {(fm.channels, fm.rows, fm.cols)} "
                f"does not match published {(spec.channels, spec.rows, spec.cols)}"
            )
    again = extractor.extract(probe, probe_names)
    for name in probe_names:
        if not np.array_equal(got[name].data, again[name].data):
            raise BackendError(f"extract is not deterministic for layer {name!r}")


def verify_generator(generator: Generator) -> None:
    """Conformance check: dims, mapping determinism, synthesis output."""
    if min(generator.z_dim, generator.w_dim, generator.num_ws) < 1:
        raise BackendError("generator dimensions must be positive")
    z = LatentVector(np.linspace(-1.0, 1.0, generator.z_dim))
    w1 = generator.map(z)
    w2 = generator.map(z)
    if w1.dim != generator.w_dim:
        raise BackendError(f"map returned dim {w1.dim}, expected {generator.w_dim}")
    if not np.array_equal(w1.values, w2.values):
        raise BackendError("map is not deterministic")
    avg = generator.w_avg()
    if avg.dim != generator.w_dim:
        raise BackendError("w_avg dim does not match w_dim")
    stack = StyleStack(
        np.tile(w1.values, (generator.num_ws, 1)),
        provenance=("static",) * generator.num_ws,
    )
    f1 = generator.synthesize(stack)
    f2 = generator.synthesize(stack)
    if (f1.width, f1.height) != (f2.width, f2.height):
        raise BackendError("synthesize output size is unstable")
    if not np.array_equal(f1.pixels, f2.pixels):
        raise BackendError("synthesize is not deterministic")
    for capability in (CONSTANT_ACCESS, AFFINE_ACCESS):
        if capability in generator.capabilities:
            continue
        try:
            if capability == CONSTANT_ACCESS:
                generator.get_constant()
            else:
                generator.set_input_transform(TransformMatrix.identity())
        except CapabilityError:
            continue
        raise BackendError(
            f"generator lacks {capability} but did not refuse the call"
        )
