"""Shared semantic vocabulary for the mock universe.

The mock VLM summarizes clusters with these phrases, and the mock emotion
classifier recognizes them when they appear in an image's instruction
watermark. This closes the loop: an edit that "adds" a phrase from an
emotion's vocabulary measurably shifts the mock classifier toward that
emotion, the way real content edits shift a real classifier.
"""

from __future__ import annotations

from emoforge.labels import Emotion

FACTOR_TYPES = ("object", "scene", "action", "facial expression")

# (summary, factor_type, is_abstract). Abstract entries exist to exercise the
# consolidation drop path.
VOCAB: dict[Emotion, tuple[tuple[str, str, bool], ...]] = {
    Emotion.AMUSEMENT: (
        ("colorful balloons", "object", False),
        ("a playful puppy", "object", False),
        ("a carnival carousel", "scene", False),
        ("children chasing bubbles", "action", False),
        ("a wide grin", "facial expression", False),
        ("pure joyfulness", "object", True),
    ),
    Emotion.AWE: (
        ("a towering waterfall", "scene", False),
        ("a starry night sky", "scene", False),
        ("snow-capped mountains", "scene", False),
        ("a breaching whale", "action", False),
        ("an awestruck gaze", "facial expression", False),
        ("the sublime", "scene", True),
    ),
    Emotion.CONTENTMENT: (
        ("books with flowers", "object", False),
        ("colorful butterfly", "object", False),
        ("a sunlit meadow", "scene", False),
        ("lounge chairs by a lake", "object", False),
        ("sipping tea slowly", "action", False),
        ("a gentle smile", "facial expression", False),
    ),
    Emotion.EXCITEMENT: (
        ("bursting fireworks", "object", False),
        ("a roller coaster drop", "scene", False),
        ("confetti in the air", "object", False),
        ("fans cheering loudly", "action", False),
        ("wide sparkling eyes", "facial expression", False),
    ),
    Emotion.ANGER: (
        ("a clenched fist", "object", False),
        ("a raging wildfire", "scene", False),
        ("storm clouds boiling", "scene", False),
        ("people shouting", "action", False),
        ("a furious scowl", "facial expression", False),
        ("seething hostility", "action", True),
    ),
    Emotion.DISGUST: (
        ("rotting garbage piles", "object", False),
        ("moldy leftovers", "object", False),
        ("a swarm of flies", "object", False),
        ("a grimacing face", "facial expression", False),
        ("slime dripping down", "action", False),
    ),
    Emotion.FEAR: (
        ("a shadowy ghost", "object", False),
        ("an abandoned asylum", "scene", False),
        ("a dark forest path", "scene", False),
        ("fleeing in panic", "action", False),
        ("terrified wide eyes", "facial expression", False),
        ("creeping dread", "scene", True),
    ),
    Emotion.SADNESS: (
        ("wilted flowers", "object", False),
        ("a quiet graveyard", "scene", False),
        ("rain on a window", "scene", False),
        ("a lone figure walking away", "action", False),
        ("tearful downcast eyes", "facial expression", False),
    ),
}

# summary -> (emotion, factor_type); summaries are unique across emotions.
SUMMARY_INDEX: dict[str, tuple[Emotion, str]] = {
    summary: (emotion, ftype)
    for emotion, entries in VOCAB.items()
    for summary, ftype, _ in entries
}


def find_summary_in_text(text: str) -> tuple[str, Emotion] | None:
    """Longest vocabulary phrase contained in ``text`` (case-insensitive)."""
    lowered = text.lower()
    best: tuple[str, Emotion] | None = None
    for summary, (emotion, _) in SUMMARY_INDEX.items():
        if summary in lowered and (best is None or len(summary) > len(best[0])):
            best = (summary, emotion)
    return best
