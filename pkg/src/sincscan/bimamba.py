"""Bidirectional sequence model and fusion head.

Two structurally identical stacks process the sequence and its time
reversal; the backward feature sequence is kept in reversed order (it is
pooled, so re-reversing would change nothing but cost a copy).  Each
direction is attention-pooled to a vector, the two vectors are fused
(sum, concat, or parameter-free cross-attention), and a two-layer head
maps the fused embedding to 2 logits.  The head's output layer is the
angular-margin classifier, so its class columns stay unit-norm and the
training loss can apply the margin to the same weights that score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError
from .mamba import MambaStack, stack_forward
from .metrics import ASoftmaxHead
from .rng import Rng

FUSION_MODES = ("sum", "concat", "attention")


def reverse_sequence(x: Tensor) -> Tensor:
    """Flip (B, L, C) along the length axis."""
    if x.ndim != 3:
        raise DimensionError(f"expected (B, L, C), got {x.shape}")
    return ad.flip(x, axis=1)


def attention_pool(x: Tensor, w_score: Tensor, b_score: Tensor) -> Tensor:
    """Learned convex pooling of (B, L, C) to (B, C).

    A linear C->1 map scores each position; softmax over length yields the
    mixing weights, so zero score parameters give the plain mean over L.
    """
    scores = ad.add(ad.matmul(x, w_score), b_score)       # (B, L, 1)
    weights = ad.softmax(scores, axis=1)
    return ad.tsum(ad.mul(x, weights), axis=1)


def cross_attention_pool(query: Tensor, tokens: Tensor) -> Tensor:
    """Parameter-free single-head attention of a (B, C) query over a
    (B, L, C) token sequence; returns (B, C)."""
    B, C = query.shape
    q = ad.reshape(query, (B, 1, C))
    scores = ad.mul(ad.matmul(q, ad.transpose(tokens, (0, 2, 1))),
                    Tensor(1.0 / np.sqrt(C)))             # (B, 1, L)
    weights = ad.softmax(scores, axis=2)
    return ad.reshape(ad.matmul(weights, tokens), (B, C))


@dataclass
class FusionBlock:
    """Direction pooling, fusion, and the two-layer classification head."""

    mode: str
    w_score_fwd: Tensor     # (C, 1)
    b_score_fwd: Tensor     # (1,)
    w_score_bwd: Tensor     # (C, 1)
    b_score_bwd: Tensor     # (1,)
    w_hidden: Tensor        # (fused_dim, fused_dim)
    b_hidden: Tensor        # (fused_dim,)
    head: ASoftmaxHead      # output layer, (fused_dim, 2)

    @classmethod
    def create(cls, rng: Rng, channels: int, mode: str, margin: int = 4,
               lambda_start: float = 1000.0, lambda_decay: float = 0.99,
               lambda_floor: float = 5.0) -> "FusionBlock":
        if mode not in FUSION_MODES:
            raise ConfigError(f"fusion mode must be one of {FUSION_MODES}, "
                              f"got {mode!r}")
        C = channels
        fused = fused_dim(C, mode)
        return cls(
            mode=mode,
            w_score_fwd=Tensor(rng.normal((C, 1), std=1.0 / np.sqrt(C)),
                               requires_grad=True),
            b_score_fwd=Tensor(np.zeros(1), requires_grad=True),
            w_score_bwd=Tensor(rng.normal((C, 1), std=1.0 / np.sqrt(C)),
                               requires_grad=True),
            b_score_bwd=Tensor(np.zeros(1), requires_grad=True),
            w_hidden=Tensor(rng.normal((fused, fused), std=1.0 / np.sqrt(fused)),
                            requires_grad=True),
            b_hidden=Tensor(np.zeros(fused), requires_grad=True),
            head=ASoftmaxHead.create(rng, dim=fused, margin=margin,
                                     lambda_start=lambda_start,
                                     lambda_decay=lambda_decay,
                                     lambda_floor=lambda_floor),
        )

    def named_tensors(self, prefix: str = "fusion"):
        return {
            f"{prefix}.w_score_fwd": self.w_score_fwd,
            f"{prefix}.b_score_fwd": self.b_score_fwd,
            f"{prefix}.w_score_bwd": self.w_score_bwd,
            f"{prefix}.b_score_bwd": self.b_score_bwd,
            f"{prefix}.w_hidden": self.w_hidden,
            f"{prefix}.b_hidden": self.b_hidden,
            f"{prefix}.head_weight": self.head.weight,
        }


def fused_dim(channels: int, mode: str) -> int:
    if mode not in FUSION_MODES:
        raise ConfigError(f"fusion mode must be one of {FUSION_MODES}, got {mode!r}")
    return 2 * channels if mode == "concat" else channels


@dataclass
class FusionOutput:
    logits: Tensor       # (B, 2)
    embedding: Tensor    # (B, fused_dim), exported for projection tools
    hidden: Tensor       # (B, fused_dim), input of the angular output layer


@dataclass
class BiMambaModel:
    forward_stack: MambaStack
    backward_stack: MambaStack
    fusion: FusionBlock

    @classmethod
    def create(cls, rng: Rng, n_layers: int, channels: int, inner_dim: int,
               state_dim: int, conv_kernel: int = 4, bias: bool = True,
               residual: bool = True, fusion_mode: str = "concat",
               margin: int = 4, lambda_start: float = 1000.0,
               lambda_decay: float = 0.99,
               lambda_floor: float = 5.0) -> "BiMambaModel":
        make = lambda: MambaStack.create(
            rng, n_layers, channels, inner_dim, state_dim,
            conv_kernel=conv_kernel, bias=bias, residual=residual)
        return cls(
            forward_stack=make(),
            backward_stack=make(),
            fusion=FusionBlock.create(rng, channels, fusion_mode, margin=margin,
                                      lambda_start=lambda_start,
                                      lambda_decay=lambda_decay,
                                      lambda_floor=lambda_floor),
        )

    def named_tensors(self, prefix: str = "model"):
        out = {}
        out.update(self.forward_stack.named_tensors(f"{prefix}.fwd"))
        out.update(self.backward_stack.named_tensors(f"{prefix}.bwd"))
        out.update(self.fusion.named_tensors(f"{prefix}.fusion"))
        return out


def bidirectional_forward(model: BiMambaModel, x: Tensor):
    """Run both directions; the backward features stay in reversed order."""
    f_fwd = stack_forward(model.forward_stack, x)
    f_bwd = stack_forward(model.backward_stack, reverse_sequence(x))
    return f_fwd, f_bwd


def fuse(fusion: FusionBlock, f_fwd: Tensor, f_bwd: Tensor) -> FusionOutput:
    """Pool both directions, fuse, and classify.

    sum / concat combine the two pooled vectors directly; attention instead
    lets each pooled vector attend over the opposite direction's tokens and
    sums the two attended reads.  Embedding dims are C, 2C, C respectively.
    """
    pooled_fwd = attention_pool(f_fwd, fusion.w_score_fwd, fusion.b_score_fwd)
    pooled_bwd = attention_pool(f_bwd, fusion.w_score_bwd, fusion.b_score_bwd)
    if fusion.mode == "sum":
        embedding = ad.add(pooled_fwd, pooled_bwd)
    elif fusion.mode == "concat":
        embedding = ad.concat([pooled_fwd, pooled_bwd], axis=1)
    elif fusion.mode == "attention":
        embedding = ad.add(cross_attention_pool(pooled_fwd, f_bwd),
                           cross_attention_pool(pooled_bwd, f_fwd))
    else:
        raise ConfigError(f"fusion mode must be one of {FUSION_MODES}, "
                          f"got {fusion.mode!r}")
    if embedding.shape[1] != fusion.w_hidden.shape[0]:
        raise ConfigError(
            f"fused embedding width {embedding.shape[1]} does not match the "
            f"head input width {fusion.w_hidden.shape[0]}")
    hidden = ad.silu(ad.add(ad.matmul(embedding, fusion.w_hidden),
                            fusion.b_hidden))
    logits = ad.matmul(hidden, fusion.head.weight)
    return FusionOutput(logits=logits, embedding=embedding, hidden=hidden)


def model_forward(model: BiMambaModel, x: Tensor) -> FusionOutput:
    f_fwd, f_bwd = bidirectional_forward(model, x)
    return fuse(model.fusion, f_fwd, f_bwd)
