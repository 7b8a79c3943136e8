"""Pipeline configuration: one YAML file drives every CLI stage.

Keys mirror the module boundaries (providers, attribution, adapter, dataset,
train, edit); anything omitted falls back to the defaults below, and the
effective values are recorded in stage artifacts for reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from emoforge.adapter import AdapterConfig
from emoforge.attribution import AttributionConfig
from emoforge.training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    corpus_dir: str = "corpus"
    sources_dir: str = "sources"
    providers: dict = field(default_factory=dict)  # role -> plugin name
    embed_dim: int = 32
    provider_seed: int = 0
    attribution: AttributionConfig = field(default_factory=AttributionConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    train: TrainConfig = field(default_factory=TrainConfig.desk)
    n_candidates: int = 4
    auto_accept: bool = False
    templates: dict | None = None
    image_guidance_scale: float = 1.5
    conditioning_scale: float = 7.5

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "PipelineConfig":
        data = dict(data or {})
        known = {
            "corpus_dir", "sources_dir", "providers", "embed_dim",
            "provider_seed", "attribution", "adapter", "train",
            "n_candidates", "auto_accept", "templates",
            "image_guidance_scale", "conditioning_scale",
        }
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls()
        for key in ("corpus_dir", "sources_dir", "embed_dim", "provider_seed",
                    "n_candidates", "auto_accept", "image_guidance_scale",
                    "conditioning_scale"):
            if key in data:
                setattr(cfg, key, data[key])
        cfg.providers = dict(data.get("providers", {}))
        cfg.templates = data.get("templates")
        if "attribution" in data:
            cfg.attribution = AttributionConfig(**data["attribution"])
        if "adapter" in data:
            cfg.adapter = AdapterConfig(**data["adapter"])
        if "train" in data:
            cfg.train = TrainConfig.desk(**data["train"])
        if base_dir is not None:
            for key in ("corpus_dir", "sources_dir"):
                p = Path(getattr(cfg, key))
                if not p.is_absolute():
                    setattr(cfg, key, str(base_dir / p))
        return cfg

    @classmethod
    def load(cls, path: Path | str) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"config root must be a mapping: {path}")
        return cls.from_dict(data, base_dir=path.parent)

    def with_seed(self, seed: int) -> "PipelineConfig":
        self.provider_seed = seed
        self.train = TrainConfig(
            **{**_train_dict(self.train), "seed": seed}
        )
        return self


def _train_dict(cfg: TrainConfig) -> dict:
    return {
        "lr": cfg.lr,
        "weight_decay": cfg.weight_decay,
        "lambda_ins": cfg.lambda_ins,
        "batch_size": cfg.batch_size,
        "timesteps": cfg.timesteps,
        "beta_start": cfg.beta_start,
        "beta_end": cfg.beta_end,
        "seed": cfg.seed,
        "snapshot_dir": cfg.snapshot_dir,
    }
