"""Affective editing: emotion word in, edited image out.

The trained adapter turns (emotion, image) into a conditioning embedding;
at desk scale that embedding selects the best-matching factor from the
emotion's tree and the editor applies its instruction. The image guidance
scale controls structure preservation, the conditioning scale controls edit
strength, mirroring the backbone editor's knobs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from emoforge.adapter import AdapterParams, adapter_forward
from emoforge.attribution import FactorTree
from emoforge.dataset import instruction_for_factor
from emoforge.labels import Emotion
from emoforge.providers.base import ProviderSuite
from emoforge.providers.images import ImageRef


class EditError(ValueError):
    pass


@dataclass
class EditResult:
    image: ImageRef
    instruction: str
    factor_summary: str
    image_guidance_scale: float
    conditioning_scale: float


def select_instruction(
    c_e: torch.Tensor, tree: FactorTree, suite: ProviderSuite,
    templates: dict[str, str] | None = None,
) -> tuple[str, str]:
    """Pick the factor whose summary embedding best matches the pooled
    conditioning embedding; returns (instruction, factor summary)."""
    if tree.is_empty:
        raise EditError(f"factor tree for {tree.emotion.value} is empty")
    pooled = c_e.detach().numpy().mean(axis=0)
    norm = np.linalg.norm(pooled)
    if norm > 1e-12:
        pooled = pooled / norm
    best_idx, best_score = 0, -np.inf
    for i, factor in enumerate(tree.factors):
        _, summary_vec = suite.text_encoder.encode(factor.summary)
        score = float(pooled @ summary_vec)
        if score > best_score:
            best_idx, best_score = i, score
    factor = tree.factors[best_idx]
    return instruction_for_factor(factor, templates), factor.summary


def edit_image(
    img: ImageRef,
    emotion: Emotion | str,
    adapter: AdapterParams,
    tree: FactorTree,
    suite: ProviderSuite,
    *,
    image_guidance_scale: float = 1.5,
    conditioning_scale: float = 7.5,
    templates: dict[str, str] | None = None,
) -> EditResult:
    if not isinstance(emotion, Emotion):
        emotion = Emotion.from_name(str(emotion))
    e_i, _ = suite.image_encoder.encode(img)
    conditioning = adapter_forward(adapter, emotion, e_i, suite.text_encoder)
    instruction, summary = select_instruction(conditioning.c_e, tree, suite,
                                              templates)
    edited = suite.editor.edit(
        img,
        instruction,
        image_guidance_scale=image_guidance_scale,
        conditioning_scale=conditioning_scale,
    )
    return EditResult(
        image=edited,
        instruction=instruction,
        factor_summary=summary,
        image_guidance_scale=image_guidance_scale,
        conditioning_scale=conditioning_scale,
    )


def guidance_sweep(
    img: ImageRef,
    emotion: Emotion | str,
    adapter: AdapterParams,
    tree: FactorTree,
    suite: ProviderSuite,
    scales: list[float],
    *,
    conditioning_scale: float = 7.5,
) -> list[EditResult]:
    """One edit per image guidance scale; lower scales trade structure
    preservation for emotion intensity."""
    return [
        edit_image(
            img, emotion, adapter, tree, suite,
            image_guidance_scale=s, conditioning_scale=conditioning_scale,
        )
        for s in scales
    ]
