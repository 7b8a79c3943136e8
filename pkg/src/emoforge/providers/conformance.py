"""Contract battery every provider suite must pass.

Run against the mocks in CI and against any real suite when its plugin is
registered, so swapping implementations can never change call-site behavior.
"""

from __future__ import annotations

import numpy as np

from emoforge.providers.base import ClusterSummary, ProviderSuite
from emoforge.providers.images import ImageRef, SourceTag
from emoforge.providers.vocab import FACTOR_TYPES


def _probe_image(seed: int = 7) -> ImageRef:
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
    return ImageRef(id=f"probe-{seed}", content=arr, source_tag=SourceTag.SYNTHETIC)


def run_battery(suite: ProviderSuite) -> list[str]:
    """Return a list of violated contracts (empty when conformant)."""
    failures: list[str] = []
    img = _probe_image()
    img2 = _probe_image(seed=8)

    tokens, pooled = suite.image_encoder.encode(img)
    tokens_b, pooled_b = suite.image_encoder.encode(img)
    if tokens.ndim != 2 or tokens.shape[0] < 1:
        failures.append("image_encoder: tokens must be a T_i x d matrix, T_i >= 1")
    if abs(np.linalg.norm(pooled) - 1.0) > 1e-6:
        failures.append("image_encoder: pooled vector must have unit L2 norm")
    if not (np.array_equal(tokens, tokens_b) and np.array_equal(pooled, pooled_b)):
        failures.append("image_encoder: repeated calls must be identical")

    t_tokens, t_pooled = suite.text_encoder.encode("a quiet graveyard")
    if t_tokens.ndim != 2 or t_tokens.shape[1] != tokens.shape[1]:
        failures.append("text_encoder: token width must match image token width")
    if abs(np.linalg.norm(t_pooled) - 1.0) > 1e-6:
        failures.append("text_encoder: pooled vector must have unit L2 norm")

    probs = suite.emotion_classifier.classify(img)
    if probs.shape != (8,):
        failures.append("emotion_classifier: must return 8 probabilities")
    if (probs < 0).any():
        failures.append("emotion_classifier: probabilities must be nonnegative")
    if abs(probs.sum() - 1.0) > 1e-6:
        failures.append("emotion_classifier: probabilities must sum to 1")
    if not np.array_equal(probs, suite.emotion_classifier.classify(img)):
        failures.append("emotion_classifier: repeated calls must be identical")

    score = suite.aesthetic_scorer.score(img)
    if not np.isfinite(score):
        failures.append("aesthetic_scorer: score must be finite")

    edited = suite.editor.edit(img, "Add colorful butterfly",
                               image_guidance_scale=1.5, conditioning_scale=7.5)
    if edited.content.shape != img.content.shape:
        failures.append("editor: output shape must match input shape")
    if edited.content.dtype != np.uint8:
        failures.append("editor: output must be 8-bit")
    edited_b = suite.editor.edit(img, "Add colorful butterfly",
                                 image_guidance_scale=1.5, conditioning_scale=7.5)
    if not np.array_equal(edited.content, edited_b.content):
        failures.append("editor: repeated calls must be identical")

    summary = suite.vlm_summarizer.summarize([img, img2])
    if not isinstance(summary, ClusterSummary) or not summary.summary:
        failures.append("vlm_summarizer: must return a non-empty summary")
    elif summary.factor_type not in FACTOR_TYPES:
        failures.append(
            f"vlm_summarizer: factor_type {summary.factor_type!r} not one of "
            f"{FACTOR_TYPES}"
        )

    latent = suite.latent_codec.encode(img)
    if tuple(latent.shape) != tuple(suite.latent_codec.latent_shape):
        failures.append("latent_codec: encode shape must equal latent_shape")
    round_trip = suite.latent_codec.decode(latent)
    if round_trip.content.ndim != 3:
        failures.append("latent_codec: decode must return an image")

    return failures
