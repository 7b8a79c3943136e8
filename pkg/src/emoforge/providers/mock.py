"""Deterministic mock providers.

Design of the mock universe:

- Embeddings are seeded random projections of downscaled pixels, so they are
  locality-preserving: a mild edit keeps image-image cosine high, a heavy
  edit lowers it. A pure hash embedding would make every edit orthogonal to
  its source and starve the dataset gate.
- The mock editor perturbs pixels with a low-frequency field whose strength
  falls with the image guidance scale, then stamps the instruction into an
  LSB watermark.
- The mock image encoder mixes the watermarked instruction's text anchor
  into the pooled vector, which is what gives instruction-image cosine a
  real signal. The mock classifier recognizes vocabulary phrases in the
  watermark and shifts probability toward that phrase's emotion.

Everything is a pure function of (input bytes, seed); no global state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from emoforge.labels import EMOTIONS, Emotion, N_EMOTIONS
from emoforge.providers import watermark
from emoforge.providers.base import ClusterSummary, ProviderError, ProviderSuite
from emoforge.providers.images import ImageRef, SourceTag, validate_image
from emoforge.providers.vocab import VOCAB, find_summary_in_text
from emoforge.seeding import derive_seed, hash_bytes, rng_for

FEATURE_GRID = 16  # downscale side for the pixel feature vector
N_IMAGE_TOKENS = 8
ANCHOR_MIX = 0.4  # pooled-vector weight of the watermark's text anchor


def _unit_float(seed: int, *labels: str) -> float:
    """Deterministic scalar in [0, 1)."""
    return rng_for(seed, *labels).random()


def _downscale_gray(arr: np.ndarray, grid: int = FEATURE_GRID) -> np.ndarray:
    """Block-mean grayscale downscale to grid x grid, float64."""
    gray = arr.astype(np.float64) @ np.array([0.299, 0.587, 0.114])
    h, w = gray.shape
    ys = np.linspace(0, h, grid + 1).astype(int)
    xs = np.linspace(0, w, grid + 1).astype(int)
    out = np.empty((grid, grid))
    for i in range(grid):
        for j in range(grid):
            block = gray[ys[i]:max(ys[i + 1], ys[i] + 1),
                         xs[j]:max(xs[j + 1], xs[j] + 1)]
            out[i, j] = block.mean()
    return out


def pixel_features(img: ImageRef) -> np.ndarray:
    """Centered, unit-norm feature vector of the downscaled image."""
    feats = _downscale_gray(img.content).reshape(-1)
    feats = feats - feats.mean()
    norm = np.linalg.norm(feats)
    if norm < 1e-12:
        # Constant image: fall back to a fixed direction so the output stays
        # well-defined and deterministic.
        feats = np.ones_like(feats)
        norm = np.linalg.norm(feats)
    return feats / norm


def text_anchor(seed: int, text: str, d: int) -> np.ndarray:
    """Shared unit vector for a text string; the bridge between the text
    encoder and watermark-aware image encoder."""
    v = rng_for(seed, "text-anchor", text).standard_normal(d)
    return v / np.linalg.norm(v)


@dataclass
class MockImageEncoder:
    d: int
    seed: int

    def __post_init__(self):
        n_feat = FEATURE_GRID * FEATURE_GRID
        rng = rng_for(self.seed, "image-proj")
        self._token_proj = rng.standard_normal((N_IMAGE_TOKENS * self.d, n_feat))
        self._pool_proj = rng.standard_normal((self.d, n_feat))

    def encode(self, img: ImageRef) -> tuple[np.ndarray, np.ndarray]:
        validate_image(img.content)
        feats = pixel_features(img)
        tokens = (self._token_proj @ feats).reshape(N_IMAGE_TOKENS, self.d)
        pooled = self._pool_proj @ feats
        pooled = pooled / np.linalg.norm(pooled)
        instruction = watermark.extract_instruction(img.content)
        if instruction is not None:
            pooled = pooled + ANCHOR_MIX * text_anchor(self.seed, instruction, self.d)
            pooled = pooled / np.linalg.norm(pooled)
        return tokens, pooled


@dataclass
class MockTextEncoder:
    d: int
    seed: int

    def encode(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        words = text.split() or [""]
        tokens = np.stack(
            [
                rng_for(self.seed, "text-token", f"{i}:{w}").standard_normal(self.d)
                for i, w in enumerate(words)
            ]
        )
        return tokens, text_anchor(self.seed, text, self.d)


@dataclass
class MockEmotionClassifier:
    """Hash-jittered softmax with three recognition paths, checked in order:
    fixture pins by image id, instruction watermarks matched against the
    vocabulary, and emotion-tag watermarks on synthetic corpus images."""

    seed: int
    pins: Mapping[str, Mapping[Emotion, float]] = field(default_factory=dict)

    def classify(self, img: ImageRef) -> np.ndarray:
        validate_image(img.content)
        if img.id in self.pins:
            return self._pinned(self.pins[img.id])
        content_key = img.content_hash()

        instruction = watermark.extract_instruction(img.content)
        if instruction is not None:
            match = find_summary_in_text(instruction)
            if match is not None:
                _, emotion = match
                # Wide range so the dataset gate (score > 0.3) has attrition.
                peak = 0.22 + 0.56 * _unit_float(self.seed, "emo-edit", content_key)
                return self._peaked(emotion, peak, content_key)

        tag = watermark.extract_emotion_tag(img.content)
        if tag is not None:
            try:
                emotion = Emotion.from_name(tag)
            except ValueError:
                emotion = None
            if emotion is not None:
                peak = 0.55 + 0.35 * _unit_float(self.seed, "emo-tag", content_key)
                return self._peaked(emotion, peak, content_key)

        logits = rng_for(self.seed, "emo-logits", content_key).standard_normal(
            N_EMOTIONS
        )
        return _softmax(0.5 * logits)

    def _peaked(self, emotion: Emotion, peak: float, content_key: str) -> np.ndarray:
        rest = rng_for(self.seed, "emo-rest", content_key).random(N_EMOTIONS)
        rest[emotion.index] = 0.0
        rest = rest / rest.sum() * (1.0 - peak)
        rest[emotion.index] = peak
        return rest

    def _pinned(self, table: Mapping[Emotion, float]) -> np.ndarray:
        probs = np.zeros(N_EMOTIONS)
        for emotion, p in table.items():
            probs[Emotion.from_name(str(getattr(emotion, "value", emotion))).index] = p
        remainder = 1.0 - probs.sum()
        if remainder < -1e-9:
            raise ValueError("pinned probabilities exceed 1")
        unset = probs == 0
        if unset.any() and remainder > 0:
            probs[unset] = remainder / unset.sum()
        return probs / probs.sum()


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max())
    return z / z.sum()


@dataclass
class MockAestheticScorer:
    seed: int

    def score(self, img: ImageRef) -> float:
        validate_image(img.content)
        return 10.0 * _unit_float(self.seed, "aesthetic", img.content_hash())


@dataclass
class MockEditor:
    """Perturb-and-watermark editor.

    Structural change is a low-frequency noise field scaled by
    ``ref_image_scale / image_guidance_scale``; a per-instruction pattern
    scaled by the conditioning scale stands in for semantic content. The
    instruction is stamped into the LSB watermark last.
    """

    seed: int
    base_noise: float = 20.0
    pattern_gain: float = 10.0
    ref_image_scale: float = 1.5
    ref_conditioning_scale: float = 7.5
    coarse_grid: int = 8

    def edit(
        self,
        img: ImageRef,
        instruction: str,
        *,
        image_guidance_scale: float = 1.5,
        conditioning_scale: float = 7.5,
    ) -> ImageRef:
        validate_image(img.content)
        if not instruction:
            raise ProviderError("empty edit instruction")
        if image_guidance_scale <= 0 or conditioning_scale <= 0:
            raise ValueError("guidance scales must be positive")
        h, w, _ = img.content.shape
        rng = rng_for(
            self.seed,
            "edit",
            img.content_hash(),
            instruction,
            f"{image_guidance_scale:.8g}",
            f"{conditioning_scale:.8g}",
        )
        sigma = self.base_noise * self.ref_image_scale / image_guidance_scale
        noise = self._low_freq(rng.standard_normal((self.coarse_grid,
                                                    self.coarse_grid, 3)), h, w)
        pattern_rng = rng_for(self.seed, "edit-pattern", instruction)
        pattern = self._low_freq(
            pattern_rng.standard_normal((self.coarse_grid, self.coarse_grid, 3)), h, w
        )
        gain = self.pattern_gain * conditioning_scale / self.ref_conditioning_scale
        out = img.content.astype(np.float64) + sigma * noise + gain * pattern
        out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
        out = watermark.embed_instruction(out, instruction)
        new_id = "edit-" + hash_bytes(out.tobytes())[:16]
        return ImageRef(id=new_id, content=out, source_tag=img.source_tag)

    @staticmethod
    def _low_freq(coarse: np.ndarray, h: int, w: int) -> np.ndarray:
        reps_h = -(-h // coarse.shape[0])
        reps_w = -(-w // coarse.shape[1])
        tiled = np.kron(coarse, np.ones((reps_h, reps_w, 1)))
        return tiled[:h, :w, :]


@dataclass
class MockVlmSummarizer:
    """Reads emotion-tag watermarks off cluster members, then deterministically
    picks a vocabulary phrase for the dominant emotion. ``fixtures`` pins a
    summary for an exact member-id set."""

    seed: int
    fixtures: Mapping[frozenset, ClusterSummary] = field(default_factory=dict)

    def summarize(self, images: Sequence[ImageRef]) -> ClusterSummary:
        if not images:
            raise ProviderError("cannot summarize an empty cluster", retryable=False)
        key = frozenset(img.id for img in images)
        if key in self.fixtures:
            return self.fixtures[key]

        counts: dict[Emotion, int] = {}
        for img in images:
            tag = watermark.extract_emotion_tag(img.content)
            if tag is None:
                continue
            try:
                emotion = Emotion.from_name(tag)
            except ValueError:
                continue
            counts[emotion] = counts.get(emotion, 0) + 1
        if counts:
            top = max(counts.items(), key=lambda kv: (kv[1], kv[0].value))[0]
            entries = VOCAB[top]
        else:
            entries = tuple(e for vs in VOCAB.values() for e in vs)

        content_key = hash_bytes(
            b"".join(sorted(img.content_hash().encode() for img in images))
        )
        pick = int(content_key[:8], 16) % len(entries)
        summary, ftype, is_abstract = entries[pick]
        return ClusterSummary(summary=summary, factor_type=ftype,
                              is_abstract=is_abstract)


@dataclass
class MockLatentCodec:
    """8x8x4 latents: block-mean downscale, [-1, 1] scaling, and a fixed
    random 3->4 channel mix. Decode inverts approximately."""

    seed: int
    latent_shape: tuple[int, int, int] = (4, 8, 8)

    def __post_init__(self):
        rng = rng_for(self.seed, "latent-mix")
        c_out = self.latent_shape[0]
        self._mix = rng.standard_normal((c_out, 3)) / math.sqrt(3.0)
        self._unmix = np.linalg.pinv(self._mix)

    def encode(self, img: ImageRef) -> np.ndarray:
        validate_image(img.content)
        _, side, _ = self.latent_shape
        h, w, _ = img.content.shape
        ys = np.linspace(0, h, side + 1).astype(int)
        xs = np.linspace(0, w, side + 1).astype(int)
        small = np.empty((side, side, 3))
        for i in range(side):
            for j in range(side):
                block = img.content[ys[i]:max(ys[i + 1], ys[i] + 1),
                                    xs[j]:max(xs[j + 1], xs[j] + 1), :]
                small[i, j, :] = block.reshape(-1, 3).mean(axis=0)
        scaled = small / 127.5 - 1.0  # [-1, 1]
        latent = np.einsum("ck,ijk->cij", self._mix, scaled)
        return latent * 2.5  # roughly unit variance for natural-ish content

    def decode(self, latent: np.ndarray) -> ImageRef:
        latent = np.asarray(latent, dtype=np.float64) / 2.5
        rgb = np.einsum("kc,cij->ijk", self._unmix, latent)
        rgb = (rgb + 1.0) * 127.5
        side = self.latent_shape[1]
        up = np.kron(rgb, np.ones((8, 8, 1)))
        arr = np.clip(np.rint(up), 0, 255).astype(np.uint8)
        return ImageRef(
            id="decoded-" + hash_bytes(arr.tobytes())[:16],
            content=arr,
            source_tag=SourceTag.SYNTHETIC,
        )


def mock_embed_image(img: ImageRef, d: int, seed: int):
    """Standalone embedding helper; returns (tokens, pooled)."""
    return MockImageEncoder(d=d, seed=seed).encode(img)


def mock_classify_emotion(img: ImageRef, seed: int = 0, pins=None) -> np.ndarray:
    return MockEmotionClassifier(seed=seed, pins=pins or {}).classify(img)


def MockSuite(
    d: int = 32,
    seed: int = 0,
    *,
    classifier_pins=None,
    vlm_fixtures=None,
) -> ProviderSuite:
    """Assemble the full mock suite with one shared seed."""
    return ProviderSuite(
        image_encoder=MockImageEncoder(d=d, seed=seed),
        text_encoder=MockTextEncoder(d=d, seed=seed),
        emotion_classifier=MockEmotionClassifier(
            seed=seed, pins=classifier_pins or {}
        ),
        aesthetic_scorer=MockAestheticScorer(seed=seed),
        editor=MockEditor(seed=seed),
        vlm_summarizer=MockVlmSummarizer(seed=seed, fixtures=vlm_fixtures or {}),
        latent_codec=MockLatentCodec(seed=seed),
        perceptual=None,
        name="mock",
    )
