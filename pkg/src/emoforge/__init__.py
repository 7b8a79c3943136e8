"""emoforge: emotion-conditioned image editing toolkit.

Pipeline stages: emotion attribution (factor trees), paired-dataset
construction with metric gating and human review, adapter training with a
combined diffusion + instruction objective, and an affective-editing
evaluation suite. All pretrained models are behind provider interfaces with
deterministic mocks, so the full pipeline runs offline on a CPU.
"""

__version__ = "0.1.0"

from emoforge.labels import Emotion, Polarity

__all__ = ["Emotion", "Polarity", "__version__"]
