"""Backend adapter registry keyed by URI scheme.

Backends are named by URIs like mock://extractor?seed=7; the scheme picks
the adapter, the rest is adapter-specific. A backend config file is JSON:

    {"extractor": "mock://extractor?seed=1",
     "generator": "mock://generator?seed=1&num_ws=16",
     "options": { ... adapter-specific extras ... }}

Query parameters always win over `options` entries of the same name.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Mapping
from urllib.parse import parse_qsl, urlsplit

from ..errors import ConfigError
from .base import FeatureExtractor, Generator
from .mock import MockExtractor, MockGenerator

Factory = Callable[[str, Mapping[str, object]], object]

_REGISTRY: dict[str, dict[str, Factory]] = {}


def register_adapter(scheme: str, kind: str, factory: Factory) -> None:
    """Install a factory for (scheme, kind); kind is extractor|generator."""
    if kind not in ("extractor", "generator"):
        raise ConfigError(f"kind must be extractor or generator, got {kind!r}")
    _REGISTRY.setdefault(scheme, {})[kind] = factory


def registered_schemes() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def _parse(uri: str, kind: str) -> tuple[str, dict[str, str]]:
    parts = urlsplit(uri)
    if not parts.scheme:
        raise ConfigError(f"backend URI {uri!r} has no scheme")
    if parts.netloc != kind:
        raise ConfigError(
            f"backend URI {uri!r} names {parts.netloc!r}, expected {kind!r}"
        )
    return parts.scheme, dict(parse_qsl(parts.query))


def _resolve(uri: str, kind: str, options: Mapping[str, object] | None):
    parts = urlsplit(uri)
    adapter = _REGISTRY.get(parts.scheme)
    if adapter is None or kind not in adapter:
        raise ConfigError(
            f"no {kind} adapter registered for scheme {parts.scheme!r} "
            f"(have: {', '.join(registered_schemes()) or 'none'})"
        )
    return adapter[kind](uri, dict(options or {}))


def get_extractor(uri: str, options: Mapping[str, object] | None = None) -> FeatureExtractor:
    backend = _resolve(uri, "extractor", options)
    if not isinstance(backend, FeatureExtractor):
        raise ConfigError(f"adapter for {uri!r} did not return a feature extractor")
    return backend


def get_generator(uri: str, options: Mapping[str, object] | None = None) -> Generator:
    backend = _resolve(uri, "generator", options)
    if not isinstance(backend, Generator):
        raise ConfigError(f"adapter for {uri!r} did not return a generator")
    return backend


def load_backend_config(source: str | Path | Mapping) -> tuple[FeatureExtractor, Generator]:
    """Build both backends from a config mapping or a JSON file path."""
    if isinstance(source, (str, Path)):
        try:
            obj = json.loads(Path(source).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read backend config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"backend config is not valid JSON: {exc}") from exc
    else:
        obj = dict(source)
    for key in ("extractor", "generator"):
        if key not in obj or not isinstance(obj[key], str):
            raise ConfigError(f"backend config needs a {key!r} URI")
    options = obj.get("options", {})
    if not isinstance(options, Mapping):
        raise ConfigError("backend config 'options' must be an object")
    return get_extractor(obj["extractor"], options), get_generator(obj["generator"], options)


def _int_param(params: Mapping[str, object], key: str, default: int) -> int:
    raw = params.get(key, default)
    try:
        return int(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"backend parameter {key}={raw!r} is not an integer") from exc


_MOCK_EXTRACTOR_KEYS = {"seed"}
_MOCK_GENERATOR_KEYS = {"seed", "z_dim", "num_ws", "resolution"}


def _mock_params(uri: str, kind: str, options: Mapping[str, object], allowed: set[str]) -> dict:
    _, query = _parse(uri, kind)
    unknown = set(query) - allowed
    if unknown:
        raise ConfigError(f"mock {kind} URI has unknown parameters {sorted(unknown)}")
    # adapter-specific options may carry keys for other adapters; take ours
    merged = {k: v for k, v in options.items() if k in allowed}
    merged.update(query)
    return merged


def _make_mock_extractor(uri: str, options: Mapping[str, object]) -> MockExtractor:
    params = _mock_params(uri, "extractor", options, _MOCK_EXTRACTOR_KEYS)
    return MockExtractor(seed=_int_param(params, "seed", 0))


def _make_mock_generator(uri: str, options: Mapping[str, object]) -> MockGenerator:
    params = _mock_params(uri, "generator", options, _MOCK_GENERATOR_KEYS)
    return MockGenerator(
        seed=_int_param(params, "seed", 0),
        z_dim=_int_param(params, "z_dim", 512),
        num_ws=_int_param(params, "num_ws", 16),
        resolution=_int_param(params, "resolution", 256),
    )


register_adapter("mock", "extractor", _make_mock_extractor)
register_adapter("mock", "generator", _make_mock_generator)
