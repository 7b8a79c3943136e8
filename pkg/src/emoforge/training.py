"""Adapter training: standard forward-noising schedule, the noise-prediction
objective conditioned on the source latent and the adapter output, the
instruction regression term, and a single-writer AdamW loop with a frozen
toy denoiser standing in for the editing backbone.

The denoiser's parameters are fingerprinted at construction and the loop
verifies the hash every step: only adapter tensors may move.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from emoforge.adapter import (
    DTYPE,
    AdapterConfig,
    AdapterParams,
    BlockParams,
    adapter_apply,
    init_adapter,
)
from emoforge.labels import Emotion
from emoforge.providers.base import ProviderSuite
from emoforge.providers.images import ImageRef
from emoforge.seeding import derive_seed


class TrainingError(RuntimeError):
    pass


class NonFiniteLossError(TrainingError):
    def __init__(self, message: str, snapshot: Path | None = None):
        super().__init__(message)
        self.snapshot = snapshot


# --- noise schedule ---------------------------------------------------------


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule with cached cumulative alpha products."""

    T: int
    betas: np.ndarray
    alpha_bars: np.ndarray

    @classmethod
    def linear(cls, T: int = 1000, beta_start: float = 1e-4,
               beta_end: float = 2e-2) -> "NoiseSchedule":
        if T < 1:
            raise TrainingError("T must be >= 1")
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
        if not (0 < betas[0] <= betas[-1] < 1):
            raise TrainingError("betas must satisfy 0 < beta_1 <= beta_T < 1")
        alpha_bars = np.cumprod(1.0 - betas)
        return cls(T=T, betas=betas, alpha_bars=alpha_bars)

    def alpha_bar(self, t: int) -> float:
        if not 1 <= t <= self.T:
            raise TrainingError(f"timestep {t} outside [1, {self.T}]")
        return float(self.alpha_bars[t - 1])


def forward_process(z0: torch.Tensor, eps: torch.Tensor,
                    alpha_bar: float) -> torch.Tensor:
    """z_t = sqrt(a_bar) z_0 + sqrt(1 - a_bar) eps."""
    if z0.shape != eps.shape:
        raise TrainingError(
            f"noise shape {tuple(eps.shape)} != latent shape {tuple(z0.shape)}"
        )
    return math.sqrt(alpha_bar) * z0 + math.sqrt(1.0 - alpha_bar) * eps


def add_noise(z0: torch.Tensor, t: int, eps: torch.Tensor,
              sched: NoiseSchedule) -> torch.Tensor:
    return forward_process(z0, eps, sched.alpha_bar(t))


# --- toy denoiser -----------------------------------------------------------


class ToyDenoiser:
    """Frozen two-layer conditional residual network over codec latents.

    Conditioning contract: the adapter output's rows are appended to the
    conditioning token sequence (after one token projected from the source
    latent); a bank of fixed per-element queries reads the sequence through
    softmax attention, so every conditioning row influences every latent
    element. The skip term sqrt(1 - a_bar) * z_t keeps the objective's
    reducible part dominated by conditioning quality.
    """

    N_T_FEATURES = 4
    HIDDEN = 128

    def __init__(self, d_model: int, sched: NoiseSchedule, seed: int,
                 latent_shape: tuple[int, int, int] = (4, 8, 8),
                 direct_gain: float = 1.2, core_scale: float = 0.4):
        self.d_model = d_model
        self.sched = sched
        self.latent_shape = latent_shape
        self.direct_gain = direct_gain
        n_latent = int(np.prod(latent_shape))
        self.n_latent = n_latent
        gen = torch.Generator().manual_seed(derive_seed(seed, "toy-denoiser"))

        def mat(rows, cols, scale):
            return torch.randn(rows, cols, generator=gen, dtype=DTYPE) * scale

        d = d_model
        self.w_src_token = mat(n_latent, d, 1.0 / math.sqrt(n_latent))
        self.w_key = mat(d, d, 1.0 / math.sqrt(d))
        self.w_value = mat(d, d, 1.0 / math.sqrt(d))
        self.queries = mat(n_latent, d, 1.0)
        # Per-element readout keeps the conditioning pathway full rank: each
        # latent element mixes the attention result with its own vector.
        self.w_read = mat(n_latent, d, 1.0 / math.sqrt(d))
        in_width = n_latent + n_latent + self.N_T_FEATURES
        self.w1 = mat(self.HIDDEN, in_width, 1.0 / math.sqrt(in_width))
        self.w2 = mat(n_latent, self.HIDDEN, core_scale / math.sqrt(self.HIDDEN))
        for tensor in self._tensors():
            tensor.requires_grad_(False)

    def _tensors(self) -> list[torch.Tensor]:
        return [self.w_src_token, self.w_key, self.w_value, self.queries,
                self.w_read, self.w1, self.w2]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for tensor in self._tensors():
            h.update(tensor.detach().numpy().tobytes())
        return h.hexdigest()

    def _t_features(self, t: int) -> torch.Tensor:
        ab = self.sched.alpha_bar(t)
        return torch.tensor(
            [math.sqrt(ab), math.sqrt(1.0 - ab),
             math.sin(2 * math.pi * t / self.sched.T),
             math.cos(2 * math.pi * t / self.sched.T)],
            dtype=DTYPE,
        )

    def __call__(self, z_t: torch.Tensor, t: int, src_latent: torch.Tensor,
                 c_e: torch.Tensor) -> torch.Tensor:
        if tuple(z_t.shape) != self.latent_shape:
            raise TrainingError(
                f"z_t shape {tuple(z_t.shape)} != latent shape {self.latent_shape}"
            )
        if c_e.shape[1] != self.d_model:
            raise TrainingError(
                f"conditioning width {c_e.shape[1]} != denoiser d_model "
                f"{self.d_model}"
            )
        z = z_t.reshape(-1)
        s = src_latent.reshape(-1)
        src_token = torch.tanh(s @ self.w_src_token)
        tokens = torch.cat([src_token.unsqueeze(0), c_e], dim=0)
        keys = tokens @ self.w_key
        values = tokens @ self.w_value
        att = torch.softmax(
            self.queries @ keys.transpose(0, 1) / math.sqrt(self.d_model), dim=1
        )
        u = ((att @ values) * self.w_read).sum(dim=1)  # (n_latent,)
        feats = torch.cat([s, u, self._t_features(t)])
        core = self.w2 @ torch.nn.functional.silu(self.w1 @ feats)
        ab = self.sched.alpha_bar(t)
        eps_hat = math.sqrt(1.0 - ab) * z + self.direct_gain * u + core
        return eps_hat.reshape(self.latent_shape)


# --- training examples -------------------------------------------------------


@dataclass
class TrainingExample:
    pair_id: str
    emotion: Emotion
    e_t: torch.Tensor  # emotion word tokens
    e_i: torch.Tensor  # source image tokens
    z0: torch.Tensor  # target latent
    src_latent: torch.Tensor
    text_target: torch.Tensor  # pooled instruction embedding (d,)


def prepare_example(
    pair_id: str,
    emotion: Emotion,
    source: ImageRef,
    target: ImageRef,
    instruction: str,
    suite: ProviderSuite,
) -> TrainingExample:
    e_t_np, _ = suite.text_encoder.encode(emotion.value)
    e_i_np, _ = suite.image_encoder.encode(source)
    _, text_pooled = suite.text_encoder.encode(instruction)
    return TrainingExample(
        pair_id=pair_id,
        emotion=emotion,
        e_t=torch.as_tensor(e_t_np, dtype=DTYPE),
        e_i=torch.as_tensor(e_i_np, dtype=DTYPE),
        z0=torch.as_tensor(suite.latent_codec.encode(target), dtype=DTYPE),
        src_latent=torch.as_tensor(suite.latent_codec.encode(source),
                                   dtype=DTYPE),
        text_target=torch.as_tensor(text_pooled, dtype=DTYPE),
    )


def prepare_training_set(manifest, suite: ProviderSuite) -> list[TrainingExample]:
    """Encode every accepted manifest pair once, in record order."""
    examples = []
    for rec in manifest.accepted():
        source = manifest.load_image(rec.source_id)
        target = manifest.load_image(rec.target_id)
        examples.append(
            prepare_example(rec.target_id, rec.emotion, source, target,
                            rec.instruction, suite)
        )
    return examples


# --- losses ------------------------------------------------------------------


def instruction_loss_from_target(c_e: torch.Tensor,
                                 target_pooled: torch.Tensor) -> torch.Tensor:
    """(1/M) || c_e - target ||_2^2 with the pooled text vector broadcast
    across the query rows; M is the element count of c_e."""
    if target_pooled.ndim == 1:
        target = target_pooled.unsqueeze(0).expand_as(c_e)
    else:
        if target_pooled.shape != c_e.shape:
            raise TrainingError(
                f"instruction target shape {tuple(target_pooled.shape)} "
                f"!= c_e shape {tuple(c_e.shape)}"
            )
        target = target_pooled
    return ((c_e - target) ** 2).mean()


def instruction_loss(c_e: torch.Tensor, instruction: str,
                     text_encoder) -> torch.Tensor:
    _, pooled = text_encoder.encode(instruction)
    return instruction_loss_from_target(
        torch.as_tensor(c_e, dtype=DTYPE), torch.as_tensor(pooled, dtype=DTYPE)
    )


def _sample_noise_and_t(shape, sched: NoiseSchedule,
                        generator: torch.Generator) -> tuple[torch.Tensor, int]:
    t = int(torch.randint(1, sched.T + 1, (1,), generator=generator).item())
    eps = torch.randn(shape, generator=generator, dtype=DTYPE)
    return eps, t


def diffusion_loss(
    batch: Sequence[TrainingExample],
    denoiser: Callable,
    adapter: AdapterParams,
    sched: NoiseSchedule,
    *,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Mean squared noise-prediction error over the batch, one (eps, t) draw
    per item. The conditioning embedding is computed once per distinct pair."""
    if not batch:
        raise TrainingError("batch must be non-empty")
    if generator is None:
        generator = torch.Generator().manual_seed(0)
    c_e_cache: dict[str, torch.Tensor] = {}
    total = torch.zeros((), dtype=DTYPE)
    for ex in batch:
        c_e = c_e_cache.get(ex.pair_id)
        if c_e is None:
            c_e = adapter_apply(adapter, ex.e_t, ex.e_i)
            c_e_cache[ex.pair_id] = c_e
        eps, t = _sample_noise_and_t(ex.z0.shape, sched, generator)
        z_t = forward_process(ex.z0, eps, sched.alpha_bar(t))
        eps_hat = denoiser(z_t, t, ex.src_latent, c_e)
        if eps_hat.shape != eps.shape:
            raise TrainingError(
                f"denoiser output shape {tuple(eps_hat.shape)} != noise shape "
                f"{tuple(eps.shape)}"
            )
        total = total + ((eps - eps_hat) ** 2).mean()
    return total / len(batch)


def combined_losses(
    batch: Sequence[TrainingExample],
    denoiser: Callable,
    adapter: AdapterParams,
    sched: NoiseSchedule,
    *,
    generator: torch.Generator,
) -> tuple[torch.Tensor, torch.Tensor]:
    """(diffusion, instruction) terms sharing one adapter pass per pair."""
    c_e_cache: dict[str, torch.Tensor] = {}
    ldm = torch.zeros((), dtype=DTYPE)
    ins = torch.zeros((), dtype=DTYPE)
    for ex in batch:
        c_e = c_e_cache.get(ex.pair_id)
        if c_e is None:
            c_e = adapter_apply(adapter, ex.e_t, ex.e_i)
            c_e_cache[ex.pair_id] = c_e
        eps, t = _sample_noise_and_t(ex.z0.shape, sched, generator)
        z_t = forward_process(ex.z0, eps, sched.alpha_bar(t))
        eps_hat = denoiser(z_t, t, ex.src_latent, c_e)
        ldm = ldm + ((eps - eps_hat) ** 2).mean()
        ins = ins + instruction_loss_from_target(c_e, ex.text_target)
    n = len(batch)
    return ldm / n, ins / n


# --- train state, step, loop -------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 0.01
    lambda_ins: float = 0.5
    batch_size: int = 16
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    seed: int = 0
    snapshot_dir: str | None = None

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """CPU-friendly schedule: 50 steps with betas scaled up so the
        terminal noise level matches the 1000-step default (otherwise the
        forward process at T=50 never leaves the data manifold)."""
        base = {"timesteps": 50, "beta_start": 1e-3, "beta_end": 0.25,
                "lr": 2e-3}
        base.update(overrides)
        return cls(**base)

    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule.linear(self.timesteps, self.beta_start,
                                    self.beta_end)


@dataclass
class TrainState:
    adapter: AdapterParams
    optimizer: torch.optim.AdamW
    config: TrainConfig
    backbone_fingerprint: str
    step: int = 0
    loss_history: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def lambda_ins(self) -> float:
        return self.config.lambda_ins


def init_train_state(
    adapter_config: AdapterConfig,
    train_config: TrainConfig,
    denoiser: ToyDenoiser,
) -> TrainState:
    if train_config.lambda_ins < 0:
        raise TrainingError("lambda_ins must be >= 0")
    adapter = init_adapter(adapter_config,
                           derive_seed(train_config.seed, "adapter-init"))
    adapter.requires_grad_(True)
    optimizer = torch.optim.AdamW(
        adapter.tensors(), lr=train_config.lr,
        weight_decay=train_config.weight_decay,
    )
    return TrainState(
        adapter=adapter,
        optimizer=optimizer,
        config=train_config,
        backbone_fingerprint=denoiser.fingerprint(),
    )


def train_step(
    state: TrainState,
    batch: Sequence[TrainingExample],
    denoiser: ToyDenoiser,
    sched: NoiseSchedule,
) -> TrainState:
    """One optimization step on L_ldm + lambda * L_ins; mutates and returns
    ``state``. Raises NonFiniteLossError (with a diagnostic snapshot when a
    snapshot dir is configured) instead of stepping on a bad loss."""
    if not batch:
        raise TrainingError("batch must be non-empty")
    generator = torch.Generator().manual_seed(
        derive_seed(state.config.seed, "train-noise", str(state.step))
    )
    ldm, ins = combined_losses(batch, denoiser, state.adapter, sched,
                               generator=generator)
    loss = ldm + state.lambda_ins * ins
    ldm_v, ins_v = float(ldm.detach()), float(ins.detach())
    if not torch.isfinite(loss):
        snapshot = _write_diagnostic_snapshot(state, batch, ldm_v, ins_v)
        raise NonFiniteLossError(
            f"non-finite loss at step {state.step}: ldm={ldm_v!r} "
            f"ins={ins_v!r}",
            snapshot=snapshot,
        )
    state.optimizer.zero_grad()
    loss.backward()
    state.optimizer.step()
    state.loss_history.append((state.step, ldm_v, ins_v))
    state.step += 1
    after = denoiser.fingerprint()
    if after != state.backbone_fingerprint:
        raise TrainingError("frozen backbone changed during training")
    return state


def _write_diagnostic_snapshot(state: TrainState, batch, ldm: float,
                               ins: float) -> Path | None:
    if state.config.snapshot_dir is None:
        return None
    path = Path(state.config.snapshot_dir) / f"abort-step{state.step}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(
            {
                "step": state.step,
                "l_ldm": repr(ldm),
                "l_ins": repr(ins),
                "batch_pair_ids": [ex.pair_id for ex in batch],
                "fingerprint": state.backbone_fingerprint,
            },
            indent=2,
        ),
        encoding="utf-8",
    )
    return path


def sample_batch(
    examples: Sequence[TrainingExample], batch_size: int, seed: int, step: int
) -> list[TrainingExample]:
    rng = np.random.default_rng(derive_seed(seed, "batch", str(step)))
    idx = rng.integers(0, len(examples), size=batch_size)
    return [examples[i] for i in idx]


def run_training(
    examples: Sequence[TrainingExample],
    adapter_config: AdapterConfig,
    train_config: TrainConfig,
    steps: int,
    *,
    denoiser: ToyDenoiser | None = None,
    log_path: Path | None = None,
    state: TrainState | None = None,
) -> TrainState:
    """Run ``steps`` optimization steps; single-threaded for bit stability."""
    if not examples:
        raise TrainingError("no training examples (is the manifest empty?)")
    torch.set_num_threads(1)
    sched = train_config.schedule()
    if denoiser is None:
        denoiser = ToyDenoiser(
            adapter_config.d_model, sched,
            derive_seed(train_config.seed, "denoiser"),
        )
    if state is None:
        state = init_train_state(adapter_config, train_config, denoiser)
    log_lines = []
    for _ in range(steps):
        batch = sample_batch(examples, train_config.batch_size,
                             train_config.seed, state.step)
        state = train_step(state, batch, denoiser, sched)
        step, ldm, ins = state.loss_history[-1]
        log_lines.append(
            json.dumps(
                {
                    "step": step,
                    "l_ldm": ldm,
                    "l_ins": ins,
                    "total": ldm + state.lambda_ins * ins,
                }
            )
        )
    if log_path is not None:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        with log_path.open("a", encoding="utf-8") as fh:
            fh.write("\n".join(log_lines) + "\n")
    return state


def combined_history(state: TrainState) -> list[float]:
    lam = state.lambda_ins
    return [ldm + lam * ins for _, ldm, ins in state.loss_history]


# --- checkpointing ------------------------------------------------------------

_CKPT_MAGIC = b"EFCK1\n"


def save_checkpoint(state: TrainState, path: Path | str) -> Path:
    """Deterministic binary: JSON header plus raw little-endian float64 blobs
    for adapter tensors and AdamW moments, in named order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names, tensors = zip(*state.adapter.named_tensors())
    opt_state = state.optimizer.state
    blobs: list[bytes] = []
    index = []
    offset = 0

    def add(name: str, arr: np.ndarray):
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        index.append({"name": name, "offset": offset, "shape": list(arr.shape)})
        blobs.append(raw)
        offset += len(raw)

    adam_steps = []
    for name, tensor in zip(names, tensors):
        add(name, tensor.detach().numpy())
        st = opt_state.get(tensor)
        if st:
            add(name + ".exp_avg", st["exp_avg"].numpy())
            add(name + ".exp_avg_sq", st["exp_avg_sq"].numpy())
            adam_steps.append(int(st["step"]))
        else:
            adam_steps.append(0)

    cfg = state.config
    header = {
        "adapter_config": {
            "n_queries": state.adapter.config.n_queries,
            "d_model": state.adapter.config.d_model,
            "n_blocks": state.adapter.config.n_blocks,
            "n_heads": state.adapter.config.n_heads,
            "use_block_extras": state.adapter.config.use_block_extras,
            "init_query_std": state.adapter.config.init_query_std,
        },
        "train_config": {
            "lr": cfg.lr,
            "weight_decay": cfg.weight_decay,
            "lambda_ins": cfg.lambda_ins,
            "batch_size": cfg.batch_size,
            "timesteps": cfg.timesteps,
            "beta_start": cfg.beta_start,
            "beta_end": cfg.beta_end,
            "seed": cfg.seed,
        },
        "step": state.step,
        "fingerprint": state.backbone_fingerprint,
        "adam_steps": adam_steps,
        "loss_history": state.loss_history,
        "tensors": index,
    }
    with path.open("wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for raw in blobs:
            fh.write(raw)
    return path


def load_checkpoint(path: Path | str) -> TrainState:
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise TrainingError(f"{path} is not an emoforge checkpoint")
        header = json.loads(fh.readline().decode("utf-8"))
        blob = fh.read()

    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=count,
                            offset=start).reshape(shape)
        arrays[entry["name"]] = arr.copy()

    acfg = AdapterConfig(**header["adapter_config"])
    tcfg = TrainConfig(**header["train_config"])
    queries = torch.as_tensor(arrays["queries"], dtype=DTYPE)
    blocks = []
    for i in range(acfg.n_blocks):
        blocks.append(
            BlockParams(
                **{
                    k: torch.as_tensor(arrays[f"block{i}.{k}"], dtype=DTYPE)
                    for k in (
                        "w_q_self", "w_k_self", "w_v_self",
                        "w_q_cross", "w_k_cross", "w_v_cross",
                        "w_ff1", "w_ff2",
                    )
                }
            )
        )
    adapter = AdapterParams(config=acfg, queries=queries, blocks=blocks)
    adapter.requires_grad_(True)
    optimizer = torch.optim.AdamW(adapter.tensors(), lr=tcfg.lr,
                                  weight_decay=tcfg.weight_decay)
    for (name, tensor), adam_step in zip(adapter.named_tensors(),
                                         header["adam_steps"]):
        if adam_step > 0:
            optimizer.state[tensor] = {
                "step": torch.tensor(float(adam_step)),
                "exp_avg": torch.as_tensor(arrays[name + ".exp_avg"],
                                           dtype=DTYPE),
                "exp_avg_sq": torch.as_tensor(arrays[name + ".exp_avg_sq"],
                                              dtype=DTYPE),
            }
    return TrainState(
        adapter=adapter,
        optimizer=optimizer,
        config=tcfg,
        backbone_fingerprint=header["fingerprint"],
        step=int(header["step"]),
        loss_history=[tuple(item) for item in header["loss_history"]],
    )
