"""Synthetic image corpora for offline runs and tests.

Corpus images are smooth low-frequency fields (block-noise upsampled with
bilinear-ish smoothing), so downscaled-pixel embeddings behave like they do
on natural photos: mild edits stay close, heavy edits drift. Attribution
corpus images carry an emotion-tag watermark and cluster into per-emotion
factor families by construction.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from emoforge.labels import EMOTIONS, Emotion
from emoforge.providers import watermark
from emoforge.providers.images import ImageRef, SourceTag, save_png
from emoforge.seeding import rng_for

IMAGE_SIDE = 64


def _smooth_field(rng: np.random.Generator, side: int = IMAGE_SIDE,
                  coarse: int = 4, contrast: float = 70.0) -> np.ndarray:
    """Low-frequency RGB field with strong large-scale structure."""
    base = rng.standard_normal((coarse, coarse, 3))
    # Linear upsampling keeps the field smooth instead of blocky.
    up = np.kron(base, np.ones((side // coarse, side // coarse, 1)))
    kernel = np.ones(9) / 9.0
    up = np.apply_along_axis(
        lambda r: np.convolve(r, kernel, mode="same"), 0, up
    )
    up = np.apply_along_axis(
        lambda r: np.convolve(r, kernel, mode="same"), 1, up
    )
    up = up / max(up.std(), 1e-9) * contrast
    mean_shift = rng.uniform(100, 156, size=3)
    arr = up + mean_shift
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def make_image(seed: int, *labels: str, tag: SourceTag = SourceTag.SYNTHETIC,
               image_id: str | None = None) -> ImageRef:
    rng = rng_for(seed, "fixture-image", *labels)
    arr = _smooth_field(rng)
    return ImageRef(id=image_id or "-".join(labels), content=arr, source_tag=tag)


def make_corpus(
    out_dir: Path | str,
    seed: int,
    *,
    per_emotion: int = 5,
    families: int = 2,
    variant_noise: float = 22.0,
) -> dict[Emotion, list[Path]]:
    """Attribution corpus: ``per_emotion`` tagged images per emotion, grouped
    into ``families`` pixel-level factor families. Layout: <dir>/<emotion>/*.png.
    """
    out_dir = Path(out_dir)
    written: dict[Emotion, list[Path]] = {}
    for emotion in EMOTIONS:
        paths = []
        bases = [
            _smooth_field(rng_for(seed, "corpus-base", emotion.value, str(f)))
            for f in range(families)
        ]
        for i in range(per_emotion):
            fam = i % families
            rng = rng_for(seed, "corpus-var", emotion.value, str(i))
            arr = bases[fam].astype(np.float64) + variant_noise * rng.standard_normal(
                bases[fam].shape
            )
            arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
            arr = watermark.embed_emotion_tag(arr, emotion.value)
            img = ImageRef(
                id=f"{emotion.value}-{i:03d}",
                content=arr,
                source_tag=SourceTag.SYNTHETIC,
            )
            paths.append(save_png(img, out_dir / emotion.value / f"{img.id}.png"))
        written[emotion] = paths
    return written


def make_sources(
    out_dir: Path | str, seed: int, *, count: int = 12,
    tag: SourceTag = SourceTag.COLLECTION_A,
) -> list[Path]:
    """Editing source pool (no watermarks, no tags)."""
    out_dir = Path(out_dir)
    paths = []
    for i in range(count):
        img = make_image(seed, "source", str(i), tag=tag, image_id=f"src-{i:03d}")
        paths.append(save_png(img, out_dir / f"{img.id}.png"))
    return paths
