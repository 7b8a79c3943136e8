"""Paired-dataset construction: candidate generation, the four-metric gate,
aesthetic selection, the manifest, and the append-only review log.

Layout on disk (all under one dataset directory):
    pairs.mjson   line-delimited records, first line is a header
    images/       content-hash-named PNGs
    reviews.log   append-only decisions (id, decision, reviewer, timestamp)

The manifest file itself is append-only; current review state is the base
records folded with the review log, so a crash or restart never loses a
decision.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from emoforge.attribution import FactorTree
from emoforge.labels import EMOTIONS, Emotion
from emoforge.providers.base import ProviderError, ProviderSuite
from emoforge.providers.images import ImageRef, load_png, save_png
from emoforge.seeding import rng_for

log = logging.getLogger(__name__)

MANIFEST_NAME = "pairs.mjson"
IMAGES_DIR = "images"
REVIEWS_NAME = "reviews.log"

CLIP_I_RANGE = (0.75, 0.9)
CLIP_T_MIN = 0.25
EMOTION_MIN = 0.3  # strict: a score of exactly 0.3 fails

REVIEW_STATUSES = ("pending", "accepted", "rejected")

DEFAULT_TEMPLATES = {
    "object": "Add {summary}",
    "scene": "Turn it into {summary}",
    "action": "Show {summary}",
    "facial expression": "Add {summary}",
}


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class CandidateScores:
    clip_i: float
    clip_t: float
    emotion_score: float
    aesthetic: float

    def __post_init__(self):
        for name in ("clip_i", "clip_t", "emotion_score", "aesthetic"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise DatasetError(f"{name} must be finite, got {v!r}")
        if not -1.0 <= self.clip_i <= 1.0:
            raise DatasetError(f"clip_i must lie in [-1, 1], got {self.clip_i}")
        if not -1.0 <= self.clip_t <= 1.0:
            raise DatasetError(f"clip_t must lie in [-1, 1], got {self.clip_t}")
        if not 0.0 <= self.emotion_score <= 1.0:
            raise DatasetError(
                f"emotion_score must lie in [0, 1], got {self.emotion_score}"
            )


@dataclass
class PairRecord:
    source_id: str
    emotion: Emotion
    target_id: str
    instruction: str
    scores: CandidateScores
    review_status: str = "pending"
    factor_summary: str = ""

    def __post_init__(self):
        if not self.instruction:
            raise DatasetError("instruction must be non-empty")
        if self.review_status not in REVIEW_STATUSES:
            raise DatasetError(f"bad review_status {self.review_status!r}")


# --- gate -----------------------------------------------------------------


@dataclass(frozen=True)
class GateResult:
    passed: bool
    reasons: tuple[str, ...] = ()


def gate_candidate(scores: CandidateScores) -> GateResult:
    """Evaluate the four-metric gate; failures enumerate every violated
    predicate."""
    reasons = []
    lo, hi = CLIP_I_RANGE
    if scores.clip_i < lo:
        reasons.append(f"clip_i {scores.clip_i:.4f} below {lo}")
    elif scores.clip_i > hi:
        reasons.append(f"clip_i {scores.clip_i:.4f} above {hi}")
    if scores.clip_t < CLIP_T_MIN:
        reasons.append(f"clip_t {scores.clip_t:.4f} below {CLIP_T_MIN}")
    if not scores.emotion_score > EMOTION_MIN:
        reasons.append(
            f"emotion_score {scores.emotion_score:.4f} not above {EMOTION_MIN}"
        )
    return GateResult(passed=not reasons, reasons=tuple(reasons))


# --- candidate generation and selection ------------------------------------


@dataclass
class Candidate:
    index: int
    image: ImageRef
    instruction: str
    factor_summary: str
    scores: CandidateScores | None = None


def instruction_for_factor(factor, templates: dict[str, str] | None = None) -> str:
    templates = templates or DEFAULT_TEMPLATES
    template = templates.get(factor.factor_type, DEFAULT_TEMPLATES["object"])
    return template.format(summary=factor.summary)


def generate_candidates(
    src: ImageRef,
    emotion: Emotion,
    tree: FactorTree,
    editor,
    n: int,
    *,
    seed: int = 0,
    templates: dict[str, str] | None = None,
    image_guidance_scale: float = 1.5,
    conditioning_scale: float = 7.5,
) -> list[Candidate]:
    """Edit ``src`` once per sampled factor; editor failures skip the
    candidate rather than aborting the sweep."""
    if tree.is_empty:
        raise DatasetError(f"factor tree for {emotion.value} is empty")
    if n < 0:
        raise DatasetError("n must be >= 0")
    rng = rng_for(seed, "candidates", src.id, emotion.value)
    order = rng.permutation(len(tree.factors))
    picks = [tree.factors[order[i % len(order)]] for i in range(n)]
    out: list[Candidate] = []
    for idx, factor in enumerate(picks):
        instruction = instruction_for_factor(factor, templates)
        try:
            edited = editor.edit(
                src,
                instruction,
                image_guidance_scale=image_guidance_scale,
                conditioning_scale=conditioning_scale,
            )
        except ProviderError as exc:
            log.warning(
                "editor failed on %s/%s candidate %d (%s); skipping",
                src.id, emotion.value, idx, exc,
            )
            continue
        out.append(
            Candidate(
                index=idx,
                image=edited,
                instruction=instruction,
                factor_summary=factor.summary,
            )
        )
    return out


def score_candidate(
    src: ImageRef, candidate: Candidate, emotion: Emotion, suite: ProviderSuite
) -> CandidateScores:
    _, pooled_src = suite.image_encoder.encode(src)
    _, pooled_cand = suite.image_encoder.encode(candidate.image)
    _, pooled_text = suite.text_encoder.encode(candidate.instruction)
    probs = suite.emotion_classifier.classify(candidate.image)
    return CandidateScores(
        clip_i=float(np.clip(pooled_src @ pooled_cand, -1.0, 1.0)),
        clip_t=float(np.clip(pooled_text @ pooled_cand, -1.0, 1.0)),
        emotion_score=float(probs[emotion.index]),
        aesthetic=float(suite.aesthetic_scorer.score(candidate.image)),
    )


def select_best(passing: Sequence[Candidate]) -> Candidate | None:
    """Argmax aesthetic; ties broken by higher clip_t, then lower original
    candidate index, so the winner is invariant to input order."""
    best: Candidate | None = None
    for cand in passing:
        if cand.scores is None:
            raise DatasetError("candidates must be scored before selection")
        if best is None:
            best = cand
            continue
        a, b = cand.scores, best.scores
        key_new = (a.aesthetic, a.clip_t, -cand.index)
        key_old = (b.aesthetic, b.clip_t, -best.index)
        if key_new > key_old:
            best = cand
    return best


# --- manifest -------------------------------------------------------------


_HEADER_KIND = "emoforge-pairs"
_SCHEMA_VERSION = 1


def _record_to_json(rec: PairRecord) -> dict:
    return {
        "kind": "pair",
        "source_id": rec.source_id,
        "emotion": rec.emotion.value,
        "target_id": rec.target_id,
        "instruction": rec.instruction,
        "scores": {
            "clip_i": rec.scores.clip_i,
            "clip_t": rec.scores.clip_t,
            "emotion_score": rec.scores.emotion_score,
            "aesthetic": rec.scores.aesthetic,
        },
        "review_status": rec.review_status,
        "factor_summary": rec.factor_summary,
    }


def _record_from_json(data: dict) -> PairRecord:
    s = data["scores"]
    return PairRecord(
        source_id=data["source_id"],
        emotion=Emotion.from_name(data["emotion"]),
        target_id=data["target_id"],
        instruction=data["instruction"],
        scores=CandidateScores(
            clip_i=s["clip_i"],
            clip_t=s["clip_t"],
            emotion_score=s["emotion_score"],
            aesthetic=s["aesthetic"],
        ),
        review_status=data["review_status"],
        factor_summary=data.get("factor_summary", ""),
    )


@dataclass
class Manifest:
    """Append-only pair records plus dataset-level metadata."""

    root: Path
    records: list[PairRecord] = field(default_factory=list)
    unreviewed: bool = False  # set by --auto-accept synthetic runs
    seed: int | None = None

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_NAME

    @property
    def images_dir(self) -> Path:
        return self.root / IMAGES_DIR

    @property
    def reviews_path(self) -> Path:
        return self.root / REVIEWS_NAME

    def record_by_target(self, target_id: str) -> PairRecord | None:
        for rec in self.records:
            if rec.target_id == target_id:
                return rec
        return None

    # -- persistence --

    def write(self) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        lines = [
            json.dumps(
                {
                    "kind": _HEADER_KIND,
                    "schema": _SCHEMA_VERSION,
                    "unreviewed": self.unreviewed,
                    "seed": self.seed,
                }
            )
        ]
        lines.extend(json.dumps(_record_to_json(r)) for r in self.records)
        self.manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return self.manifest_path

    def append_record(self, rec: PairRecord) -> None:
        """Single-writer commit point: extend the in-memory list and the file."""
        self.records.append(rec)
        if not self.manifest_path.exists():
            self.write()
            return
        with self.manifest_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(_record_to_json(rec)) + "\n")

    def store_image(self, img: ImageRef) -> str:
        """Write a generated image under its content hash; returns the id."""
        target_id = img.content_hash()
        save_png(img, self.images_dir / f"{target_id}.png")
        return target_id

    def store_source(self, img: ImageRef) -> str:
        """Source images keep their collection ids so records stay readable."""
        save_png(img, self.images_dir / f"{img.id}.png")
        return img.id

    def load_image(self, image_id: str) -> ImageRef:
        return load_png(self.images_dir / f"{image_id}.png", image_id=image_id)

    # -- derived state --

    def accepted(self) -> list[PairRecord]:
        return [r for r in self.records if r.review_status == "accepted"]

    def pending(self) -> list[PairRecord]:
        return [r for r in self.records if r.review_status == "pending"]

    def validate(self, check_images: bool = True) -> None:
        """Invariants checked on load: accepted records pass the gate and
        referenced targets exist on disk."""
        seen: set[str] = set()
        for rec in self.records:
            if rec.target_id in seen:
                raise DatasetError(f"duplicate target_id {rec.target_id}")
            seen.add(rec.target_id)
            if rec.review_status == "accepted":
                gate = gate_candidate(rec.scores)
                if not gate.passed:
                    raise DatasetError(
                        f"accepted record {rec.target_id} violates the gate: "
                        f"{'; '.join(gate.reasons)}"
                    )
            if check_images:
                path = self.images_dir / f"{rec.target_id}.png"
                if not path.exists():
                    raise DatasetError(f"target image missing: {path}")


def load_manifest(root: Path | str, *, check_images: bool = True,
                  apply_reviews: bool = True) -> Manifest:
    root = Path(root)
    path = root / MANIFEST_NAME
    if not path.exists():
        raise DatasetError(f"no manifest at {path}")
    records: list[PairRecord] = []
    unreviewed = False
    seed = None
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            if data.get("kind") == _HEADER_KIND:
                unreviewed = bool(data.get("unreviewed", False))
                seed = data.get("seed")
                continue
            records.append(_record_from_json(data))
    manifest = Manifest(root=root, records=records, unreviewed=unreviewed,
                        seed=seed)
    if apply_reviews and manifest.reviews_path.exists():
        from emoforge.review import replay_reviews

        replay_reviews(manifest)
    manifest.validate(check_images=check_images)
    return manifest


# --- statistics -----------------------------------------------------------


def dataset_stats(manifest: Manifest) -> dict:
    """Headline dataset numbers; directions-per-source is reported to one
    decimal place."""
    accepted = manifest.accepted()
    sources = {r.source_id for r in accepted}
    per_emotion = {e.value: 0 for e in EMOTIONS}
    for r in accepted:
        per_emotion[r.emotion.value] += 1
    pair_count = len(accepted)
    source_count = len(sources)
    mean_directions = (
        round(pair_count / source_count, 1) if source_count else 0.0
    )
    return {
        "source_count": source_count,
        "pair_count": pair_count,
        "mean_directions_per_source": mean_directions,
        "per_emotion": per_emotion,
    }


# --- pipeline -------------------------------------------------------------


def build_pairs(
    sources: Sequence[ImageRef],
    trees: dict[Emotion, FactorTree],
    suite: ProviderSuite,
    out_dir: Path | str,
    *,
    n_candidates: int = 4,
    seed: int = 0,
    emotions: Iterable[Emotion] | None = None,
    auto_accept: bool = False,
    templates: dict[str, str] | None = None,
    image_guidance_scale: float = 1.5,
    conditioning_scale: float = 7.5,
) -> Manifest:
    """Generate, gate, select and persist pairs for every (source, emotion).

    With ``auto_accept`` every surviving pair is immediately accepted through
    the review log (reviewer tag "auto-accept", fixed timestamp) and the
    manifest is watermarked as unreviewed. Without it, records stay pending
    for the review service.
    """
    from emoforge.review import ReviewDecision, append_review

    out_dir = Path(out_dir)
    manifest = Manifest(root=out_dir, unreviewed=auto_accept, seed=seed)
    manifest.write()
    emotions = list(emotions) if emotions is not None else list(trees)
    for src in sources:
        manifest.store_source(src)
        for emotion in emotions:
            tree = trees.get(emotion)
            if tree is None or tree.is_empty:
                continue
            candidates = generate_candidates(
                src, emotion, tree, suite.editor, n_candidates,
                seed=seed, templates=templates,
                image_guidance_scale=image_guidance_scale,
                conditioning_scale=conditioning_scale,
            )
            passing = []
            for cand in candidates:
                cand.scores = score_candidate(src, cand, emotion, suite)
                if gate_candidate(cand.scores).passed:
                    passing.append(cand)
            best = select_best(passing)
            if best is None:
                continue
            target_id = manifest.store_image(best.image)
            record = PairRecord(
                source_id=src.id,
                emotion=emotion,
                target_id=target_id,
                instruction=best.instruction,
                scores=best.scores,
                review_status="pending",
                factor_summary=best.factor_summary,
            )
            manifest.append_record(record)
            if auto_accept:
                append_review(
                    manifest,
                    ReviewDecision(
                        target_id=target_id,
                        decision="accepted",
                        reviewer="auto-accept",
                        timestamp=0.0,
                    ),
                )
    return manifest
