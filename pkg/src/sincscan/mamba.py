"""Selective state-space layers over (B, L, C) sequences.

Each layer widens the channel dim to an inner width E, runs a depthwise
causal convolution and the selective scan over it, gates with the parallel
branch, and projects back to C.  All position mixing happens in the causal
convolution and the scan, so a layer never lets information flow backward
in time.

residual=True (the default) adds the layer input back and applies an
RMS-style pre-normalization; residual=False is the bare form where the
layer output replaces its input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError
from .rng import Rng
from .ssm import SsmParams, discretize_zoh, select_projections, selective_scan

RMS_EPS = 1e-6


def rms_norm(x: Tensor, scale: Tensor) -> Tensor:
    """Per-position root-mean-square normalization over channels."""
    ms = ad.tmean(ad.mul(x, x), axis=-1, keepdims=True)
    return ad.mul(ad.mul(x, ad.reciprocal(ad.sqrt(ms + RMS_EPS))), scale)


@dataclass
class MambaLayer:
    w_in: Tensor                 # (C, 2E) joint projection to branch + gate
    conv_w: Tensor               # (E, k) depthwise causal taps
    ssm: SsmParams
    w_out: Tensor                # (E, C)
    b_in: Tensor | None = None   # (2E,)
    conv_b: Tensor | None = None  # (E,)
    b_out: Tensor | None = None  # (C,)
    norm_scale: Tensor | None = None  # (C,), present only when residual
    residual: bool = True

    @classmethod
    def create(cls, rng: Rng, channels: int, inner_dim: int, state_dim: int,
               conv_kernel: int = 4, bias: bool = True,
               residual: bool = True) -> "MambaLayer":
        C, E = channels, inner_dim
        return cls(
            w_in=Tensor(rng.normal((C, 2 * E), std=1.0 / np.sqrt(C)),
                        requires_grad=True),
            b_in=Tensor(np.zeros(2 * E), requires_grad=True) if bias else None,
            conv_w=Tensor(rng.uniform(-1.0, 1.0, size=(E, conv_kernel))
                          / np.sqrt(conv_kernel), requires_grad=True),
            conv_b=Tensor(np.zeros(E), requires_grad=True) if bias else None,
            ssm=SsmParams.create(rng, inner_dim=E, state_dim=state_dim),
            w_out=Tensor(rng.normal((E, C), std=1.0 / np.sqrt(E)),
                         requires_grad=True),
            b_out=Tensor(np.zeros(C), requires_grad=True) if bias else None,
            norm_scale=(Tensor(np.ones(C), requires_grad=True)
                        if residual else None),
            residual=residual,
        )

    @property
    def channels(self) -> int:
        return self.w_in.shape[0]

    def named_tensors(self, prefix: str):
        out = {f"{prefix}.w_in": self.w_in, f"{prefix}.conv_w": self.conv_w,
               f"{prefix}.w_out": self.w_out}
        if self.b_in is not None:
            out[f"{prefix}.b_in"] = self.b_in
        if self.conv_b is not None:
            out[f"{prefix}.conv_b"] = self.conv_b
        if self.b_out is not None:
            out[f"{prefix}.b_out"] = self.b_out
        if self.norm_scale is not None:
            out[f"{prefix}.norm_scale"] = self.norm_scale
        out.update(self.ssm.named_tensors(prefix=f"{prefix}.ssm"))
        return out


def layer_forward(layer: MambaLayer, x: Tensor) -> Tensor:
    """One selective layer over (B, L, C); output has the same shape."""
    if x.ndim != 3 or x.shape[2] != layer.channels:
        raise DimensionError(
            f"expected (B, L, {layer.channels}) input, got {x.shape}")
    u = rms_norm(x, layer.norm_scale) if layer.residual else x
    xz = ad.matmul(u, layer.w_in)
    if layer.b_in is not None:
        xz = ad.add(xz, layer.b_in)
    E = layer.w_in.shape[1] // 2
    branch, gate = xz[:, :, :E], xz[:, :, E:]
    conv = ad.causal_conv1d(branch, layer.conv_w, layer.conv_b)
    activated = ad.silu(conv)
    b_sel, c_sel, delta = select_projections(layer.ssm, activated)
    pair = discretize_zoh(layer.ssm.state_matrix(), delta, b_sel, activated)
    scanned = selective_scan(pair, c_sel)
    gated = ad.mul(scanned, ad.silu(gate))
    out = ad.matmul(gated, layer.w_out)
    if layer.b_out is not None:
        out = ad.add(out, layer.b_out)
    return ad.add(x, out) if layer.residual else out


@dataclass
class MambaStack:
    """A fixed-depth pipeline of layers sharing one channel width."""

    layers: list[MambaLayer] = field(default_factory=list)

    @classmethod
    def create(cls, rng: Rng, n_layers: int, channels: int, inner_dim: int,
               state_dim: int, conv_kernel: int = 4, bias: bool = True,
               residual: bool = True) -> "MambaStack":
        if n_layers < 1:
            raise ConfigError(f"a stack needs at least one layer, got {n_layers}")
        return cls(layers=[
            MambaLayer.create(rng, channels, inner_dim, state_dim,
                              conv_kernel=conv_kernel, bias=bias,
                              residual=residual)
            for _ in range(n_layers)
        ])

    @property
    def channels(self) -> int:
        return self.layers[0].channels

    def named_tensors(self, prefix: str):
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.named_tensors(prefix=f"{prefix}.layer{i}"))
        return out


def stack_forward(stack: MambaStack, x: Tensor) -> Tensor:
    if not stack.layers:
        raise ConfigError("cannot run an empty stack")
    for layer in stack.layers:
        x = layer_forward(layer, x)
    return x
