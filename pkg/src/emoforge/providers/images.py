"""Raster images and their PNG/content-hash plumbing."""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from emoforge.seeding import hash_bytes

MIN_SIDE = 8


class SourceTag(str, enum.Enum):
    COLLECTION_A = "collection-A"
    COLLECTION_B = "collection-B"
    ARTISTIC = "artistic"
    SYNTHETIC = "synthetic"


class ImageValidationError(ValueError):
    pass


@dataclass
class ImageRef:
    """An 8-bit RGB raster with a manifest-unique id."""

    id: str
    content: np.ndarray  # H x W x 3 uint8
    source_tag: SourceTag = SourceTag.SYNTHETIC

    def __post_init__(self):
        self.content = np.asarray(self.content)
        validate_image(self.content)
        if self.content.dtype != np.uint8:
            self.content = self.content.astype(np.uint8)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.content.shape  # type: ignore[return-value]

    def png_bytes(self) -> bytes:
        return encode_png(self.content)

    def content_hash(self) -> str:
        return hash_bytes(self.content.tobytes())


def validate_image(arr: np.ndarray) -> None:
    if arr.size == 0:
        raise ImageValidationError("empty image")
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageValidationError(f"expected H x W x 3 image, got shape {arr.shape}")
    if arr.shape[0] < MIN_SIDE or arr.shape[1] < MIN_SIDE:
        raise ImageValidationError(
            f"image sides must be >= {MIN_SIDE}, got {arr.shape[:2]}"
        )


def encode_png(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_png(img: ImageRef, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(img.png_bytes())
    return path


def load_png(path: Path | str, image_id: str | None = None,
             source_tag: SourceTag = SourceTag.SYNTHETIC) -> ImageRef:
    path = Path(path)
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return ImageRef(id=image_id or path.stem, content=arr, source_tag=source_tag)
