"""Backend interfaces, deterministic mocks, and the adapter registry."""

from .base import (
    AFFINE_ACCESS,
    CONSTANT_ACCESS,
    FeatureExtractor,
    Generator,
    LayerSpec,
    verify_extractor,
    verify_generator,
)
from .mock import (
    MOCK_LAYER_TABLE,
    MockExtractor,
    MockGenerator,
    mock_extract,
    mock_map,
    mock_synthesize,
)
from .registry import (
    get_extractor,
    get_generator,
    load_backend_config,
    register_adapter,
    registered_schemes,
)

__all__ = [
    "AFFINE_ACCESS",
    "CONSTANT_ACCESS",
    "FeatureExtractor",
    "Generator",
    "LayerSpec",
    "verify_extractor",
    "verify_generator",
    "MOCK_LAYER_TABLE",
    "MockExtractor",
    "MockGenerator",
    "mock_extract",
    "mock_map",
    "mock_synthesize",
    "get_extractor",
    "get_generator",
    "load_backend_config",
    "register_adapter",
    "registered_schemes",
]
