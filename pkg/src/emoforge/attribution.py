"""Emotion attribution: cluster an emotion-labeled corpus, filter weak
clusters, summarize survivors into typed semantic factors, and assemble one
factor tree per emotion.

Clustering is plain Lloyd with k-means++ seeding, single-threaded on purpose:
tree construction must be bit-reproducible under a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from emoforge.labels import Emotion
from emoforge.providers.base import ClusterSummary, ProviderError
from emoforge.providers.images import ImageRef
from emoforge.providers.vocab import FACTOR_TYPES
from emoforge.seeding import rng_for


class AttributionError(ValueError):
    pass


@dataclass(frozen=True)
class AttributionConfig:
    k: int = 2
    max_iter: int = 100
    min_size: int = 20
    sim_cap: float = 0.95
    emo_floor: float = 0.5
    tau_merge: float = 0.85


@dataclass
class Cluster:
    id: str
    member_ids: list[str]
    centroid: np.ndarray
    size: int
    mean_pairwise_pixel_similarity: float = 0.0
    mean_emotion_score: float = 0.0

    def __post_init__(self):
        if self.size != len(self.member_ids) or self.size < 1:
            raise AttributionError("cluster size must equal |member_ids| >= 1")


@dataclass
class Factor:
    summary: str
    factor_type: str
    source_cluster: str
    exemplar_ids: list[str] = field(default_factory=list)
    is_abstract: bool = False

    def __post_init__(self):
        if self.factor_type not in FACTOR_TYPES:
            raise AttributionError(
                f"factor_type {self.factor_type!r} not one of {FACTOR_TYPES}"
            )


@dataclass
class FactorTree:
    emotion: Emotion
    factors: list[Factor]
    config: dict = field(default_factory=dict)

    @property
    def n_factors(self) -> int:
        return len(self.factors)

    @property
    def is_empty(self) -> bool:
        return not self.factors


# --- clustering ---------------------------------------------------------


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = x[first]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 1e-18:
            # All remaining points coincide with a chosen centroid.
            centroids[j] = x[int(rng.integers(n))]
            continue
        probs = d2 / total
        pick = int(rng.choice(n, p=probs))
        centroids[j] = x[pick]
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))
    return centroids


def kmeans(
    x: np.ndarray, k: int, seed: int, max_iter: int = 100
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd iterations; returns (labels, centroids, objective history).

    The objective (sum of squared distances to assigned centroids) is
    non-increasing across iterations. Empty clusters are dropped, so the
    partition can end with fewer than k parts.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise AttributionError("embeddings must form a 2-D array")
    n = x.shape[0]
    if k <= 0:
        raise AttributionError(f"k must be positive, got {k}")
    if k > n:
        raise AttributionError(f"k={k} exceeds number of points {n}")

    rng = rng_for(seed, "kmeans")
    centroids = _kmeans_pp_init(x, k, rng)
    labels = np.zeros(n, dtype=int)
    history: list[float] = []
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        objective = float(d2[np.arange(n), new_labels].sum())
        history.append(objective)
        keep = np.unique(new_labels)
        centroids = np.stack([x[new_labels == c].mean(axis=0) for c in keep])
        remap = {int(c): i for i, c in enumerate(keep)}
        new_labels = np.array([remap[int(c)] for c in new_labels])
        if history[-1:] == history[-2:-1] and np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return labels, centroids, history


def cluster_embeddings(
    embeddings: Sequence[np.ndarray] | np.ndarray,
    k: int,
    seed: int,
    *,
    ids: Sequence[str] | None = None,
    max_iter: int = 100,
) -> list[Cluster]:
    """Partition embeddings into at most k non-empty clusters."""
    x = np.asarray(embeddings, dtype=np.float64)
    labels, centroids, _ = kmeans(x, k, seed, max_iter=max_iter)
    if ids is None:
        ids = [f"item-{i:04d}" for i in range(x.shape[0])]
    clusters = []
    for c in range(centroids.shape[0]):
        member_ids = [ids[i] for i in np.flatnonzero(labels == c)]
        clusters.append(
            Cluster(
                id=f"c{c:03d}",
                member_ids=member_ids,
                centroid=centroids[c],
                size=len(member_ids),
            )
        )
    return clusters


# --- cluster statistics and filtering -----------------------------------


def _ncc_gray32(img: ImageRef) -> np.ndarray:
    """32x32 grayscale, zero-mean unit-norm, for pixel-similarity stats."""
    from emoforge.providers.mock import _downscale_gray

    g = _downscale_gray(img.content, grid=32).reshape(-1)
    g = g - g.mean()
    norm = np.linalg.norm(g)
    return g / norm if norm > 1e-12 else np.zeros_like(g)


def mean_pairwise_pixel_similarity(images: Sequence[ImageRef]) -> float:
    """Mean normalized cross-correlation over all member pairs; 1.0 for a
    single-image cluster (it is maximally self-similar)."""
    if len(images) < 2:
        return 1.0
    feats = np.stack([_ncc_gray32(im) for im in images])
    gram = feats @ feats.T
    iu = np.triu_indices(len(images), k=1)
    return float(gram[iu].mean())


def annotate_cluster_stats(
    clusters: Sequence[Cluster],
    images_by_id: dict[str, ImageRef],
    emotion: Emotion,
    classifier,
) -> list[Cluster]:
    for c in clusters:
        members = [images_by_id[i] for i in c.member_ids]
        c.mean_pairwise_pixel_similarity = mean_pairwise_pixel_similarity(members)
        scores = [float(classifier.classify(m)[emotion.index]) for m in members]
        c.mean_emotion_score = float(np.mean(scores))
    return list(clusters)


def filter_clusters(
    clusters: Sequence[Cluster], cfg: AttributionConfig
) -> list[Cluster]:
    """Keep clusters that are big enough, not near-duplicates, and on-emotion."""
    return [
        c
        for c in clusters
        if c.size >= cfg.min_size
        and c.mean_pairwise_pixel_similarity <= cfg.sim_cap
        and c.mean_emotion_score >= cfg.emo_floor
    ]


# --- summarization and consolidation -------------------------------------


def summarize_cluster(
    cluster: Cluster, images_by_id: dict[str, ImageRef], vlm
) -> Factor:
    if cluster.size < 1:
        raise AttributionError("cannot summarize an empty cluster")
    members = [images_by_id[i] for i in cluster.member_ids]
    try:
        result: ClusterSummary = vlm.summarize(members)
    except ProviderError as exc:
        raise ProviderError(
            f"summarizer failed for cluster {cluster.id}: {exc}", retryable=True
        ) from exc
    if not result.summary:
        raise ProviderError(
            f"summarizer returned an empty summary for cluster {cluster.id}"
        )
    return Factor(
        summary=result.summary,
        factor_type=result.factor_type,
        source_cluster=cluster.id,
        exemplar_ids=list(cluster.member_ids[:4]),
        is_abstract=result.is_abstract,
    )


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def consolidate_factors(
    factors: Sequence[Factor],
    text_encoder,
    cfg: AttributionConfig,
    *,
    is_abstract: Callable[[Factor], bool] | None = None,
) -> list[Factor]:
    """Merge semantically similar factors and drop abstract ones.

    Merging is transitive: connected components of the graph whose edges are
    summary-embedding cosines >= tau_merge. The first-seen summary in a
    component is kept; exemplars are unioned in first-seen order.
    """
    if is_abstract is None:
        is_abstract = lambda f: bool(getattr(f, "is_abstract", False))
    kept = [f for f in factors if not is_abstract(f)]
    if not kept:
        return []
    pooled = np.stack([text_encoder.encode(f.summary)[1] for f in kept])
    norms = np.linalg.norm(pooled, axis=1, keepdims=True)
    pooled = pooled / np.clip(norms, 1e-12, None)
    sim = pooled @ pooled.T
    uf = _UnionFind(len(kept))
    for i in range(len(kept)):
        for j in range(i + 1, len(kept)):
            if sim[i, j] >= cfg.tau_merge:
                uf.union(i, j)
    merged: dict[int, Factor] = {}
    for i, f in enumerate(kept):
        root = uf.find(i)
        if root not in merged:
            merged[root] = Factor(
                summary=f.summary,
                factor_type=f.factor_type,
                source_cluster=f.source_cluster,
                exemplar_ids=list(f.exemplar_ids),
            )
        else:
            target = merged[root]
            for ex in f.exemplar_ids:
                if ex not in target.exemplar_ids:
                    target.exemplar_ids.append(ex)
    return [merged[r] for r in sorted(merged)]


# --- tree assembly and serialization --------------------------------------


def build_factor_tree(
    emotion: Emotion,
    images: Sequence[ImageRef],
    suite,
    cfg: AttributionConfig,
    seed: int,
) -> FactorTree:
    """Full attribution pass for one emotion."""
    if not images:
        return FactorTree(emotion=emotion, factors=[], config=_cfg_dict(cfg))
    images_by_id = {im.id: im for im in images}
    embeddings = [suite.image_encoder.encode(im)[1] for im in images]
    k = min(cfg.k, len(images))
    clusters = cluster_embeddings(
        embeddings, k, seed, ids=[im.id for im in images], max_iter=cfg.max_iter
    )
    annotate_cluster_stats(clusters, images_by_id, emotion,
                           suite.emotion_classifier)
    survivors = filter_clusters(clusters, cfg)
    factors = [summarize_cluster(c, images_by_id, suite.vlm_summarizer)
               for c in survivors]
    factors = consolidate_factors(factors, suite.text_encoder, cfg)
    return FactorTree(emotion=emotion, factors=factors, config=_cfg_dict(cfg))


def _cfg_dict(cfg: AttributionConfig) -> dict:
    return {
        "k": cfg.k,
        "max_iter": cfg.max_iter,
        "min_size": cfg.min_size,
        "sim_cap": cfg.sim_cap,
        "emo_floor": cfg.emo_floor,
        "tau_merge": cfg.tau_merge,
    }


def tree_to_dict(tree: FactorTree) -> dict:
    return {
        "emotion": tree.emotion.value,
        "polarity": tree.emotion.polarity.value,
        "n_factors": tree.n_factors,
        "factors": [
            {
                "summary": f.summary,
                "type": f.factor_type,
                "cluster_id": f.source_cluster,
                "exemplars": list(f.exemplar_ids),
            }
            for f in tree.factors
        ],
        "thresholds": tree.config,
    }


def tree_from_dict(data: dict) -> FactorTree:
    return FactorTree(
        emotion=Emotion.from_name(data["emotion"]),
        factors=[
            Factor(
                summary=f["summary"],
                factor_type=f["type"],
                source_cluster=f["cluster_id"],
                exemplar_ids=list(f["exemplars"]),
            )
            for f in data["factors"]
        ],
        config=dict(data.get("thresholds", {})),
    )


def save_tree(tree: FactorTree, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(tree_to_dict(tree), indent=2) + "\n",
                    encoding="utf-8")
    return path


def load_tree(path: Path | str) -> FactorTree:
    return tree_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
