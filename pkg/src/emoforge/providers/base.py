"""Provider role protocols and the suite container.

Every external pretrained model sits behind one of these roles. The pipeline
only ever sees the role interfaces, so swapping mocks for real adapters
changes no call sites.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from emoforge.providers.images import ImageRef


class ProviderError(RuntimeError):
    """A provider failed; carries enough context to retry or skip."""

    def __init__(self, message: str, *, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


@dataclass(frozen=True)
class ClusterSummary:
    summary: str
    factor_type: str
    is_abstract: bool = False


@runtime_checkable
class ImageEncoder(Protocol):
    def encode(self, img: ImageRef) -> tuple[np.ndarray, np.ndarray]:
        """Return (tokens T_i x d, pooled unit vector d)."""
        ...


@runtime_checkable
class TextEncoder(Protocol):
    def encode(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        """Return (tokens T x d, pooled unit vector d)."""
        ...


@runtime_checkable
class EmotionClassifier(Protocol):
    def classify(self, img: ImageRef) -> np.ndarray:
        """Return an 8-way probability vector (softmax output)."""
        ...


@runtime_checkable
class AestheticScorer(Protocol):
    def score(self, img: ImageRef) -> float: ...


@runtime_checkable
class Editor(Protocol):
    def edit(
        self,
        img: ImageRef,
        instruction: str,
        *,
        image_guidance_scale: float = 1.5,
        conditioning_scale: float = 7.5,
    ) -> ImageRef: ...


@runtime_checkable
class VlmSummarizer(Protocol):
    def summarize(self, images: Sequence[ImageRef]) -> ClusterSummary: ...


@runtime_checkable
class LatentCodec(Protocol):
    latent_shape: tuple[int, int, int]

    def encode(self, img: ImageRef) -> np.ndarray: ...

    def decode(self, latent: np.ndarray) -> ImageRef: ...


@dataclass
class ProviderSuite:
    """One provider per role. ``perceptual`` (LPIPS-style) is optional and
    absent from the mock suite; reports omit the column when it is None."""

    image_encoder: ImageEncoder
    text_encoder: TextEncoder
    emotion_classifier: EmotionClassifier
    aesthetic_scorer: AestheticScorer
    editor: Editor
    vlm_summarizer: VlmSummarizer
    latent_codec: LatentCodec
    perceptual: object | None = None
    name: str = "unnamed"

    ROLES = (
        "image_encoder",
        "text_encoder",
        "emotion_classifier",
        "aesthetic_scorer",
        "editor",
        "vlm_summarizer",
        "latent_codec",
    )
