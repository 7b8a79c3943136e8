"""Provider interfaces for all external pretrained models, plus deterministic
mocks so every pipeline stage and test runs offline."""

from emoforge.providers.base import (
    ClusterSummary,
    ProviderError,
    ProviderSuite,
)
from emoforge.providers.images import ImageRef, SourceTag, load_png, save_png
from emoforge.providers.mock import (
    MockSuite,
    mock_classify_emotion,
    mock_embed_image,
)
from emoforge.providers.registry import build_suite, register_plugin

__all__ = [
    "ClusterSummary",
    "ImageRef",
    "MockSuite",
    "ProviderError",
    "ProviderSuite",
    "SourceTag",
    "build_suite",
    "load_png",
    "mock_classify_emotion",
    "mock_embed_image",
    "register_plugin",
    "save_png",
]
