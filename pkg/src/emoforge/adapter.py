"""Emotion adapter: learned emotion dictionary fused with emotion and image
tokens through stacked self/cross attention blocks.

The learned query matrix acts as an emotion dictionary. Per block, self
attention runs over the concatenation of the query state and the emotion
tokens, then cross attention reads the image tokens with that result as
queries. The first ``n_queries`` rows of the final state are emitted as the
conditioning embedding ``c_e``.

All math is torch float64 so gradient checks against central finite
differences are meaningful. Forward passes are pure; parameter mutation is
owned by the training loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import torch

from emoforge.labels import Emotion

DTYPE = torch.float64


class ShapeError(ValueError):
    """Operand dimensions are incompatible."""


class ValidationError(ValueError):
    """Operand values violate a precondition (non-finite entries, bad enum...)."""


@dataclass(frozen=True)
class AdapterConfig:
    """Dimensions and switches for the adapter stack.

    ``ff_width`` is fixed at 4x the model width so the parameter count stays a
    pure function of (n_queries, d_model, n_blocks, n_heads).
    """

    n_queries: int = 8
    d_model: int = 32
    n_blocks: int = 4
    n_heads: int = 4
    # Residual + layer norm + feed-forward around the two attentions. The bare
    # path (False) is exactly the two attention equations composed per block.
    use_block_extras: bool = True
    init_query_std: float = 0.02

    def __post_init__(self):
        if self.n_queries < 1 or self.d_model < 1 or self.n_blocks < 1:
            raise ValidationError("n_queries, d_model and n_blocks must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ShapeError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    @property
    def ff_width(self) -> int:
        return 4 * self.d_model

    def param_count(self) -> int:
        """Closed-form parameter count: N_q*d + L*(6*d^2 + 2*d*ff)."""
        d = self.d_model
        return self.n_queries * d + self.n_blocks * (6 * d * d + 2 * d * self.ff_width)


@dataclass
class BlockParams:
    w_q_self: torch.Tensor
    w_k_self: torch.Tensor
    w_v_self: torch.Tensor
    w_q_cross: torch.Tensor
    w_k_cross: torch.Tensor
    w_v_cross: torch.Tensor
    w_ff1: torch.Tensor
    w_ff2: torch.Tensor


@dataclass
class AdapterParams:
    """Learned queries (the emotion dictionary) plus per-block weights."""

    config: AdapterConfig
    queries: torch.Tensor
    blocks: list[BlockParams] = field(default_factory=list)

    def named_tensors(self) -> Iterator[tuple[str, torch.Tensor]]:
        yield "queries", self.queries
        for i, blk in enumerate(self.blocks):
            yield f"block{i}.w_q_self", blk.w_q_self
            yield f"block{i}.w_k_self", blk.w_k_self
            yield f"block{i}.w_v_self", blk.w_v_self
            yield f"block{i}.w_q_cross", blk.w_q_cross
            yield f"block{i}.w_k_cross", blk.w_k_cross
            yield f"block{i}.w_v_cross", blk.w_v_cross
            yield f"block{i}.w_ff1", blk.w_ff1
            yield f"block{i}.w_ff2", blk.w_ff2

    def tensors(self) -> list[torch.Tensor]:
        return [t for _, t in self.named_tensors()]

    def param_count(self) -> int:
        return sum(t.numel() for t in self.tensors())

    def requires_grad_(self, flag: bool = True) -> "AdapterParams":
        for t in self.tensors():
            t.requires_grad_(flag)
        return self

    def clone(self) -> "AdapterParams":
        cloned = AdapterParams(
            config=self.config,
            queries=self.queries.detach().clone(),
            blocks=[
                BlockParams(**{k: v.detach().clone() for k, v in vars(b).items()})
                for b in self.blocks
            ],
        )
        return cloned


def init_adapter(config: AdapterConfig, seed: int) -> AdapterParams:
    """Gaussian queries (std ``init_query_std``), fan-in scaled uniform projections."""
    gen = torch.Generator().manual_seed(seed & 0x7FFFFFFFFFFFFFFF)
    d = config.d_model

    def uniform(rows: int, cols: int) -> torch.Tensor:
        bound = 1.0 / math.sqrt(rows)
        return (torch.rand(rows, cols, generator=gen, dtype=DTYPE) * 2 - 1) * bound

    queries = (
        torch.randn(config.n_queries, d, generator=gen, dtype=DTYPE)
        * config.init_query_std
    )
    blocks = []
    for _ in range(config.n_blocks):
        blocks.append(
            BlockParams(
                w_q_self=uniform(d, d),
                w_k_self=uniform(d, d),
                w_v_self=uniform(d, d),
                w_q_cross=uniform(d, d),
                w_k_cross=uniform(d, d),
                w_v_cross=uniform(d, d),
                w_ff1=uniform(d, config.ff_width),
                w_ff2=uniform(config.ff_width, d),
            )
        )
    return AdapterParams(config=config, queries=queries, blocks=blocks)


def _as_tensor(x, name: str) -> torch.Tensor:
    t = torch.as_tensor(x, dtype=DTYPE)
    if t.ndim != 2:
        raise ShapeError(f"{name} must be a 2-D matrix, got shape {tuple(t.shape)}")
    if not torch.isfinite(t).all():
        raise ValidationError(f"{name} contains non-finite entries")
    return t


def attention_logits(q: torch.Tensor, k: torch.Tensor, d_k: int) -> torch.Tensor:
    """Pre-softmax scores Q K^T / sqrt(d_k); exposed for scale diagnostics."""
    return (q @ k.transpose(0, 1)) / math.sqrt(d_k)


def scaled_attention_detail(Q, K, V, d_k: int):
    """Softmax attention returning (output, weights, logits)."""
    Q = _as_tensor(Q, "Q")
    K = _as_tensor(K, "K")
    V = _as_tensor(V, "V")
    if d_k <= 0:
        raise ValidationError(f"d_k must be positive, got {d_k}")
    if Q.shape[1] != K.shape[1]:
        raise ShapeError(
            f"Q and K key dimensions differ: {Q.shape[1]} vs {K.shape[1]}"
        )
    if K.shape[0] != V.shape[0]:
        raise ShapeError(
            f"K rows ({K.shape[0]}) must equal V rows ({V.shape[0]})"
        )
    logits = attention_logits(Q, K, d_k)
    weights = torch.softmax(logits, dim=1)
    return weights @ V, weights, logits


def scaled_attention(Q, K, V, d_k: int) -> torch.Tensor:
    """softmax(Q K^T / sqrt(d_k)) V with a single head."""
    out, _, _ = scaled_attention_detail(Q, K, V, d_k)
    return out


def _multi_head(x_q, x_k, x_v, w_q, w_k, w_v, n_heads: int) -> torch.Tensor:
    """Project, split the model width into heads, attend per head, concat.

    With n_heads=1 this is literally the single softmax attention form.
    """
    q = x_q @ w_q
    k = x_k @ w_k
    v = x_v @ w_v
    d = q.shape[1]
    d_k = d // n_heads
    outs = []
    for h in range(n_heads):
        sl = slice(h * d_k, (h + 1) * d_k)
        outs.append(scaled_attention(q[:, sl], k[:, sl], v[:, sl], d_k))
    return torch.cat(outs, dim=1)


def _check_block(params: AdapterParams, block: int) -> BlockParams:
    if not 0 <= block < len(params.blocks):
        raise ValidationError(
            f"block index {block} out of range [0, {len(params.blocks)})"
        )
    return params.blocks[block]


def self_attend(
    params: AdapterParams, block: int, q_state: torch.Tensor, e_t: torch.Tensor
) -> torch.Tensor:
    """Self attention over the concatenation [q_state; e_t].

    Returns all (N_q + T_e) rows; the emotion rows keep flowing through the
    stack and are only dropped when the conditioning output is sliced.
    """
    q_state = _as_tensor(q_state, "q_state")
    e_t = _as_tensor(e_t, "e_t")
    if q_state.shape[1] != e_t.shape[1]:
        raise ShapeError(
            f"q_state width {q_state.shape[1]} != e_t width {e_t.shape[1]}"
        )
    blk = _check_block(params, block)
    x = torch.cat([q_state, e_t], dim=0)
    return _multi_head(
        x, x, x, blk.w_q_self, blk.w_k_self, blk.w_v_self, params.config.n_heads
    )


def cross_attend(
    params: AdapterParams, block: int, a_s: torch.Tensor, e_i: torch.Tensor
) -> torch.Tensor:
    """Cross attention: queries from the self-attention result, keys/values
    from the image tokens. Output row count equals the query row count."""
    a_s = _as_tensor(a_s, "a_s")
    e_i = _as_tensor(e_i, "e_i")
    if a_s.shape[1] != e_i.shape[1]:
        raise ShapeError(f"a_s width {a_s.shape[1]} != e_i width {e_i.shape[1]}")
    blk = _check_block(params, block)
    return _multi_head(
        a_s, e_i, e_i, blk.w_q_cross, blk.w_k_cross, blk.w_v_cross,
        params.config.n_heads,
    )


def _layer_norm(x: torch.Tensor) -> torch.Tensor:
    # Parameter-free row normalization; the spec'd parameter set carries no
    # affine terms.
    mean = x.mean(dim=1, keepdim=True)
    var = x.var(dim=1, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + 1e-8)


def _feed_forward(blk: BlockParams, x: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.gelu(x @ blk.w_ff1) @ blk.w_ff2


@dataclass(frozen=True)
class ConditioningOutput:
    """The emotion conditioning embedding c_e, always n_queries x d_model."""

    c_e: torch.Tensor

    def __post_init__(self):
        if self.c_e.ndim != 2:
            raise ShapeError("c_e must be a matrix")


def adapter_apply(
    params: AdapterParams, e_t: torch.Tensor, e_i: torch.Tensor
) -> torch.Tensor:
    """Token-level forward pass: (emotion tokens, image tokens) -> c_e.

    Differentiable wrt the adapter tensors; used directly by the training
    losses. `adapter_forward` wraps this with emotion-word encoding.
    """
    e_t = _as_tensor(e_t, "e_t")
    e_i = _as_tensor(e_i, "e_i")
    cfg = params.config
    if e_t.shape[1] != cfg.d_model:
        raise ShapeError(
            f"e_t width {e_t.shape[1]} != adapter d_model {cfg.d_model}"
        )
    if e_i.shape[1] != cfg.d_model:
        raise ShapeError(
            f"e_i width {e_i.shape[1]} != adapter d_model {cfg.d_model}"
        )
    if e_i.shape[0] < 1:
        raise ValidationError("e_i must contain at least one image token")

    n_q = cfg.n_queries
    state = torch.cat([params.queries, e_t], dim=0)
    for b in range(cfg.n_blocks):
        blk = params.blocks[b]
        if cfg.use_block_extras:
            # Pre-norm residual wiring keeps the output scale unconstrained,
            # which the instruction regression needs.
            normed = _layer_norm(state)
            h = state + self_attend(params, b, normed[:n_q], normed[n_q:])
            h = h + cross_attend(params, b, _layer_norm(h), e_i)
            state = h + _feed_forward(blk, _layer_norm(h))
        else:
            a_s = self_attend(params, b, state[:n_q], state[n_q:])
            state = cross_attend(params, b, a_s, e_i)
    return state[:n_q]


def adapter_forward(
    params: AdapterParams, emotion: Emotion | str, e_i, text_provider
) -> ConditioningOutput:
    """Encode the bare emotion word and run the adapter stack.

    ``text_provider`` must expose ``encode(text) -> (tokens, pooled)``; the
    token sequence is concatenated raw with the learned queries.
    """
    if not isinstance(emotion, Emotion):
        emotion = Emotion.from_name(str(emotion))
    tokens, _ = text_provider.encode(emotion.value)
    e_t = torch.as_tensor(tokens, dtype=DTYPE)
    e_i_t = torch.as_tensor(e_i, dtype=DTYPE)
    return ConditioningOutput(c_e=adapter_apply(params, e_t, e_i_t))
