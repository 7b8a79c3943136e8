"""The eight-category emotion taxonomy (Mikels) used across the pipeline."""

from __future__ import annotations

import enum


class Polarity(str, enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


class Emotion(str, enum.Enum):
    """Eight emotion categories; the first four are positive, the rest negative."""

    AMUSEMENT = "amusement"
    AWE = "awe"
    CONTENTMENT = "contentment"
    EXCITEMENT = "excitement"
    ANGER = "anger"
    DISGUST = "disgust"
    FEAR = "fear"
    SADNESS = "sadness"

    @property
    def polarity(self) -> Polarity:
        if self in _POSITIVE:
            return Polarity.POSITIVE
        return Polarity.NEGATIVE

    @property
    def index(self) -> int:
        """Stable classifier index (order of declaration)."""
        return _ORDER[self]

    @classmethod
    def from_name(cls, name: str) -> "Emotion":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown emotion {name!r}; expected one of "
                f"{[e.value for e in cls]}"
            ) from None


_POSITIVE = frozenset(
    {Emotion.AMUSEMENT, Emotion.AWE, Emotion.CONTENTMENT, Emotion.EXCITEMENT}
)

_ORDER = {e: i for i, e in enumerate(Emotion)}

EMOTIONS: tuple[Emotion, ...] = tuple(Emotion)
N_EMOTIONS = len(EMOTIONS)
