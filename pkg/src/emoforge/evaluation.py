"""Affective-editing metric battery and the comparison report.

Pixel level: PSNR (capped) and single-scale SSIM with the standard Gaussian
window. Semantic level: pooled-embedding cosine (CLIP-I) and an optional
provider-supplied perceptual distance. Emotion level: classification
accuracy toward the intended emotion (Emo-A) and the mean probability
increment from source to edited image (Emo-S).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from emoforge.labels import Emotion
from emoforge.providers.images import ImageRef

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class MetricError(ValueError):
    pass


def _to_float_gray(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr @ np.array([0.299, 0.587, 0.114])
    return arr


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 255.0) -> float:
    """10 log10(max^2 / MSE), capped at 100 dB so identical images stay
    finite in reports."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(max_val * max_val / mse), PSNR_CAP_DB)


def _gaussian_window(size: int = SSIM_WINDOW,
                     sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    window = np.outer(g, g)
    return window / window.sum()


def _window_filter(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Valid-mode weighted local means via sliding windows."""
    from numpy.lib.stride_tricks import sliding_window_view

    patches = sliding_window_view(img, window.shape)
    return np.tensordot(patches, window, axes=([2, 3], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray, *, window_size: int = SSIM_WINDOW,
         sigma: float = SSIM_SIGMA, max_val: float = 255.0) -> float:
    """Mean local SSIM over valid window positions (no padding), Gaussian
    weighted; symmetric in its arguments."""
    x = _to_float_gray(a)
    y = _to_float_gray(b)
    if x.shape != y.shape:
        raise MetricError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < window_size:
        raise MetricError(
            f"image {x.shape} smaller than SSIM window {window_size}"
        )
    window = _gaussian_window(window_size, sigma)
    mu_x = _window_filter(x, window)
    mu_y = _window_filter(y, window)
    xx = _window_filter(x * x, window) - mu_x * mu_x
    yy = _window_filter(y * y, window) - mu_y * mu_y
    xy = _window_filter(x * y, window) - mu_x * mu_y
    c1 = (SSIM_K1 * max_val) ** 2
    c2 = (SSIM_K2 * max_val) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
    return float((num / den).mean())


def clip_i(a: ImageRef, b: ImageRef, image_encoder) -> float:
    """Cosine of pooled embeddings."""
    _, pa = image_encoder.encode(a)
    _, pb = image_encoder.encode(b)
    denom = float(np.linalg.norm(pa) * np.linalg.norm(pb))
    if denom < 1e-12:
        raise MetricError("pooled embedding with zero norm")
    return float(pa @ pb / denom)


@dataclass
class EvalPair:
    pair_id: str
    emotion: Emotion
    source: ImageRef
    edited: ImageRef


def emo_a(pairs: Sequence[EvalPair], classifier) -> float:
    """Percent of edited images whose argmax category is the intended one."""
    if not pairs:
        return 0.0
    hits = 0
    for pair in pairs:
        probs = classifier.classify(pair.edited)
        if int(np.argmax(probs)) == pair.emotion.index:
            hits += 1
    return 100.0 * hits / len(pairs)


def emo_s(pairs: Sequence[EvalPair], classifier) -> float:
    """Mean increment of the intended emotion's probability, edited minus
    source. Identity edits score exactly 0 for any classifier."""
    if not pairs:
        return 0.0
    increments = [
        float(
            classifier.classify(p.edited)[p.emotion.index]
            - classifier.classify(p.source)[p.emotion.index]
        )
        for p in pairs
    ]
    return float(np.mean(increments))


# --- report -------------------------------------------------------------------


@dataclass
class PairMetrics:
    pair_id: str
    emotion: str
    psnr: float
    ssim: float
    clip_i: float
    emotion_prob_source: float
    emotion_prob_edited: float
    lpips: float | None = None

    @property
    def emo_increment(self) -> float:
        return self.emotion_prob_edited - self.emotion_prob_source


@dataclass
class MetricReport:
    per_pair: list[PairMetrics] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_pair": [
                {
                    "pair_id": p.pair_id,
                    "emotion": p.emotion,
                    "psnr": p.psnr,
                    "ssim": p.ssim,
                    "clip_i": p.clip_i,
                    "emotion_prob_source": p.emotion_prob_source,
                    "emotion_prob_edited": p.emotion_prob_edited,
                    **({"lpips": p.lpips} if p.lpips is not None else {}),
                }
                for p in self.per_pair
            ],
            "aggregate": self.aggregate,
        }


def evaluate_pairs(pairs: Sequence[EvalPair], suite,
                   intended_hits=None) -> MetricReport:
    """Full battery over (source, edited) pairs. The LPIPS column appears
    only when the suite carries a perceptual provider."""
    per_pair: list[PairMetrics] = []
    hits = 0
    for pair in pairs:
        probs_src = suite.emotion_classifier.classify(pair.source)
        probs_ed = suite.emotion_classifier.classify(pair.edited)
        idx = pair.emotion.index
        if int(np.argmax(probs_ed)) == idx:
            hits += 1
        lpips_value = None
        if suite.perceptual is not None:
            lpips_value = float(
                suite.perceptual.distance(pair.source, pair.edited)
            )
        per_pair.append(
            PairMetrics(
                pair_id=pair.pair_id,
                emotion=pair.emotion.value,
                psnr=psnr(pair.source.content, pair.edited.content),
                ssim=ssim(pair.source.content, pair.edited.content),
                clip_i=clip_i(pair.source, pair.edited, suite.image_encoder),
                emotion_prob_source=float(probs_src[idx]),
                emotion_prob_edited=float(probs_ed[idx]),
                lpips=lpips_value,
            )
        )
    aggregate: dict = {}
    if per_pair:
        aggregate = {
            "n_pairs": len(per_pair),
            "mean_psnr": float(np.mean([p.psnr for p in per_pair])),
            "mean_ssim": float(np.mean([p.ssim for p in per_pair])),
            "mean_clip_i": float(np.mean([p.clip_i for p in per_pair])),
            "emo_a_percent": 100.0 * hits / len(per_pair),
            "emo_s": float(np.mean([p.emo_increment for p in per_pair])),
        }
        if any(p.lpips is not None for p in per_pair):
            aggregate["mean_lpips"] = float(
                np.mean([p.lpips for p in per_pair if p.lpips is not None])
            )
    return MetricReport(per_pair=per_pair, aggregate=aggregate)


def save_report(report: MetricReport, path: Path | str) -> Path:
    """Line-delimited records: aggregate first, then one line per pair."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = report.to_dict()
    lines = [json.dumps({"kind": "aggregate", **data["aggregate"]})]
    lines.extend(
        json.dumps({"kind": "pair", **entry}) for entry in data["per_pair"]
    )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_report(path: Path | str) -> MetricReport:
    per_pair = []
    aggregate: dict = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            kind = data.pop("kind")
            if kind == "aggregate":
                aggregate = data
            else:
                per_pair.append(PairMetrics(**data))
    return MetricReport(per_pair=per_pair, aggregate=aggregate)


def render_table(report: MetricReport, label: str = "emoforge") -> str:
    """Comparison-table-style grid for terminal output."""
    agg = report.aggregate
    if not agg:
        return "(empty report)\n"
    headers = ["Method", "PSNR ^", "SSIM ^", "LPIPS v", "CLIP-I ^",
               "Emo-A ^", "Emo-S ^"]
    lpips = agg.get("mean_lpips")
    row = [
        label,
        f"{agg['mean_psnr']:.2f}",
        f"{agg['mean_ssim']:.3f}",
        "-" if lpips is None else f"{lpips:.3f}",
        f"{agg['mean_clip_i']:.3f}",
        f"{agg['emo_a_percent']:.2f}%",
        f"{agg['emo_s']:.3f}",
    ]
    widths = [max(len(h), len(v)) for h, v in zip(headers, row)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    sep = "-" * (sum(widths) + 2 * (len(widths) - 1))
    return "\n".join([fmt.format(*headers), sep, fmt.format(*row)]) + "\n"
