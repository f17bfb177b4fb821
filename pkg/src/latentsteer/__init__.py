"""Camera- and gesture-driven steering of a pretrained image generator."""

from .core import (
    BANDS,
    COARSE,
    FINE,
    MIDDLE,
    STATIC,
    Frame,
    FeatureMap,
    KeypointSet,
    LatentVector,
    MixingRanges,
    Mode,
    PipelineConfig,
    StyleStack,
    StyleVector,
    TransformMatrix,
    ema_smooth,
    preprocess_frame,
)
from .errors import (
    BackendError,
    CapabilityError,
    ConfigError,
    ContractError,
    DegenerateInputError,
    LayerMismatchError,
    NotCalibratedError,
    SteerError,
)

__version__ = "0.1.0"

__all__ = [
    "BANDS",
    "COARSE",
    "MIDDLE",
    "FINE",
    "STATIC",
    "Frame",
    "FeatureMap",
    "KeypointSet",
    "LatentVector",
    "MixingRanges",
    "Mode",
    "PipelineConfig",
    "StyleStack",
    "StyleVector",
    "TransformMatrix",
    "ema_smooth",
    "preprocess_frame",
    "SteerError",
    "ContractError",
    "DegenerateInputError",
    "ConfigError",
    "NotCalibratedError",
    "BackendError",
    "LayerMismatchError",
    "CapabilityError",
    "__version__",
]
