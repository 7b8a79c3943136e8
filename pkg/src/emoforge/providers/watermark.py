"""LSB text watermarks: the mock universe's stand-in for image semantics.

The mock editor stamps the edit instruction into the blue-channel LSBs of
the image it produces; the mock classifier and image encoder read it back.
Synthetic corpus images carry an emotion tag the same way. PNG storage is
lossless, so the channel survives the pipeline. Real providers ignore all
of this.
"""

from __future__ import annotations

import numpy as np

INSTRUCTION_MAGIC = b"EFI1"
EMOTION_TAG_MAGIC = b"EFT1"
_HEADER_LEN = 6  # 4 magic bytes + uint16 payload length


def _capacity(arr: np.ndarray) -> int:
    return (arr.shape[0] * arr.shape[1]) // 8


def embed_text(arr: np.ndarray, magic: bytes, text: str) -> np.ndarray:
    """Return a copy of ``arr`` with ``text`` written into blue-channel LSBs."""
    payload = text.encode("utf-8")
    if len(payload) > 0xFFFF:
        raise ValueError("watermark payload too long")
    data = magic + len(payload).to_bytes(2, "big") + payload
    if len(data) > _capacity(arr):
        raise ValueError(
            f"image too small for watermark: need {len(data)} bytes, "
            f"capacity {_capacity(arr)}"
        )
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    out = arr.copy()
    blue = out[:, :, 2].reshape(-1)
    blue[: bits.size] = (blue[: bits.size] & 0xFE) | bits
    out[:, :, 2] = blue.reshape(arr.shape[0], arr.shape[1])
    return out


def extract_text(arr: np.ndarray, magic: bytes) -> str | None:
    """Read a watermark back; None when the magic prefix is absent."""
    blue = arr[:, :, 2].reshape(-1)
    header_bits = _HEADER_LEN * 8
    if blue.size < header_bits:
        return None
    header = np.packbits(blue[:header_bits] & 1).tobytes()
    if header[:4] != magic:
        return None
    length = int.from_bytes(header[4:6], "big")
    total_bits = (_HEADER_LEN + length) * 8
    if blue.size < total_bits:
        return None
    payload = np.packbits(blue[header_bits:total_bits] & 1).tobytes()
    try:
        return payload.decode("utf-8")
    except UnicodeDecodeError:
        return None


def embed_instruction(arr: np.ndarray, instruction: str) -> np.ndarray:
    return embed_text(arr, INSTRUCTION_MAGIC, instruction)


def extract_instruction(arr: np.ndarray) -> str | None:
    return extract_text(arr, INSTRUCTION_MAGIC)


def embed_emotion_tag(arr: np.ndarray, emotion_name: str) -> np.ndarray:
    return embed_text(arr, EMOTION_TAG_MAGIC, emotion_name)


def extract_emotion_tag(arr: np.ndarray) -> str | None:
    return extract_text(arr, EMOTION_TAG_MAGIC)
