"""Temporal state-space (TSS) module.

``y = x + W_out . scan(silu(conv(W_in . LN(x))), h_in)`` applied to a batch of
patch sequences; the scan's final state is handed back for the next frame.
The causal conv restarts from zero padding on every call; only the scan
state crosses frame boundaries.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError
from .ndcore import (Param, Tensor, add, causal_conv_tokens, layer_norm, linear, mul,
                     reshape, silu, transpose)
from .ssm import HiddenState, SSMParams, ssm_forward

LN_EPS = 1e-6


class TSSWeights:
    def __init__(self, d_embed: int, expand: int = 2, n_state: int = 16, conv_k: int = 4,
                 rank: int | None = None, gate: bool = False,
                 rng: np.random.Generator | None = None, prefix: str = "tss", dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        d_inner = expand * d_embed
        self.d_embed, self.d_inner, self.gate = d_embed, d_inner, gate
        self.norm_g = Param(np.ones(d_embed, dtype), f"{prefix}.norm.gamma")
        self.norm_b = Param(np.zeros(d_embed, dtype), f"{prefix}.norm.beta")
        lim_in = 1.0 / math.sqrt(d_embed)
        self.W_in = Param(rng.uniform(-lim_in, lim_in, (d_inner, d_embed)).astype(dtype), f"{prefix}.W_in")
        lim_k = 1.0 / math.sqrt(conv_k)
        self.conv_k = Param(rng.uniform(-lim_k, lim_k, (d_inner, conv_k)).astype(dtype), f"{prefix}.conv.kernel")
        self.conv_b = Param(np.zeros(d_inner, dtype), f"{prefix}.conv.bias")
        self.ssm = SSMParams(d_inner, n_state, rank, rng=rng, prefix=f"{prefix}.ssm", dtype=dtype)
        self.W_gate = (Param(rng.uniform(-lim_in, lim_in, (d_inner, d_embed)).astype(dtype), f"{prefix}.W_gate")
                       if gate else None)
        lim_out = 1.0 / math.sqrt(d_inner)
        self.W_out = Param(rng.uniform(-lim_out, lim_out, (d_embed, d_inner)).astype(dtype), f"{prefix}.W_out")

    @property
    def n_state(self) -> int:
        return self.ssm.n_state

    def params(self) -> list[Param]:
        out = [self.norm_g, self.norm_b, self.W_in, self.conv_k, self.conv_b]
        out += self.ssm.params()
        if self.W_gate is not None:
            out.append(self.W_gate)
        out.append(self.W_out)
        return out


def tss_tokens(x: Tensor, h_in: Tensor, weights: TSSWeights, lengths: np.ndarray) -> tuple[Tensor, Tensor]:
    """Batched TSS over channels-last sequences ``x[B, L, D_embed]`` and states ``h_in[B, D_inner, N]``."""
    if h_in.shape[1:] != (weights.d_inner, weights.n_state):
        raise ConfigError(f"hidden state {h_in.shape[1:]} does not match TSS "
                          f"({weights.d_inner}, {weights.n_state})")
    z = layer_norm(x, weights.norm_g, weights.norm_b, LN_EPS)
    v = silu(causal_conv_tokens(linear(z, weights.W_in), weights.conv_k, weights.conv_b))
    s, h_out = ssm_forward(weights.ssm, v, h_in, lengths)
    if weights.W_gate is not None:
        s = mul(s, silu(linear(z, weights.W_gate)))
    return add(x, linear(s, weights.W_out)), h_out


def tss_forward(x, h_in: HiddenState | None, weights: TSSWeights) -> tuple[Tensor, HiddenState]:
    """Single-sequence form: ``x[D_embed, L]`` in, ``(y[D_embed, L], final state)`` out."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    d, length = x.shape
    if h_in is None:
        h = Tensor(np.zeros((1, weights.d_inner, weights.n_state), x.dtype))
        step = None
    else:
        h_arr = h_in.h if isinstance(h_in.h, Tensor) else Tensor(np.asarray(h_in.h, x.dtype))
        if h_arr.shape != (weights.d_inner, weights.n_state):
            raise ConfigError(f"hidden state {h_arr.shape} does not match TSS "
                              f"({weights.d_inner}, {weights.n_state})")
        h = reshape(h_arr, (1,) + h_arr.shape)
        step = h_in.last_step
    tokens = reshape(transpose(x, (1, 0)), (1, length, d))
    y, h_out = tss_tokens(tokens, h, weights, np.array([length]))
    y = transpose(reshape(y, (length, d)), (1, 0))
    return y, HiddenState(reshape(h_out, h_out.shape[1:]), step)
