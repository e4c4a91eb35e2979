"""Selective (input-dependent) state-space scan.

Per channel ``d`` and state index ``n`` the recurrence is::

    h[d, n] <- exp(delta[d] * A[d, n]) * h[d, n] + delta[d] * B_t[n] * x[d]
    y[d]    =  sum_n C_t[n] * h[d, n]

where ``B_t``, ``C_t`` and ``delta`` are linear functions of the current
token (``delta`` through a low-rank bottleneck and a softplus).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError, NumericError
from .ndcore import Param, Tensor, exp, linear, mul, record, softplus, active_tape


@dataclass
class HiddenState:
    h: np.ndarray
    last_step: int | None = None

    @classmethod
    def fresh(cls, d: int, n_state: int, dtype=np.float32) -> "HiddenState":
        return cls(np.zeros((d, n_state), dtype), None)


def default_rank(d: int) -> int:
    return max(math.ceil(d / 16), 1)


class SSMParams:
    """Learnable parameters of one selective scan over ``d`` channels."""

    def __init__(self, d: int, n_state: int = 16, rank: int | None = None,
                 rng: np.random.Generator | None = None, prefix: str = "ssm",
                 dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        rank = default_rank(d) if rank is None else rank
        self.d, self.n_state, self.rank = d, n_state, rank
        a_log = np.log(np.tile(np.arange(1, n_state + 1, dtype=np.float64), (d, 1)))
        lim = 1.0 / math.sqrt(d)
        dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), size=d))
        self.A_log = Param(a_log.astype(dtype), f"{prefix}.A_log")
        self.W_B = Param(rng.uniform(-lim, lim, (n_state, d)).astype(dtype), f"{prefix}.W_B")
        self.W_C = Param(rng.uniform(-lim, lim, (n_state, d)).astype(dtype), f"{prefix}.W_C")
        self.W_dt_in = Param(rng.uniform(-lim, lim, (rank, d)).astype(dtype), f"{prefix}.W_dt_in")
        std = rank ** -0.5
        self.W_dt = Param(rng.uniform(-std, std, (d, rank)).astype(dtype), f"{prefix}.W_dt")
        # inverse softplus so that softplus(b_dt) == dt
        self.b_dt = Param((dt + np.log(-np.expm1(-dt))).astype(dtype), f"{prefix}.b_dt")

    def params(self) -> list[Param]:
        return [self.A_log, self.W_B, self.W_C, self.W_dt_in, self.W_dt, self.b_dt]

    def state_matrix(self) -> np.ndarray:
        return -np.exp(self.A_log.data)

    def project(self, x: np.ndarray):
        """Per-token ``(B_t, C_t, delta_t)`` for channels-last tokens ``x[..., d]``."""
        bm = x @ self.W_B.data.T
        cm = x @ self.W_C.data.T
        z = (x @ self.W_dt_in.data.T) @ self.W_dt.data.T + self.b_dt.data
        delta = np.logaddexp(0.0, z).astype(x.dtype, copy=False)
        return bm, cm, delta


def discretize(A: np.ndarray, B_t: np.ndarray, delta_t: np.ndarray):
    """Zero-order hold for the state matrix, Euler step for the input matrix.

    Returns ``(A_bar[d, n], B_bar[d, n])``.
    """
    A = np.asarray(A)
    delta_t = np.asarray(delta_t)
    if np.any(delta_t <= 0):
        raise ValueError("time scale must be strictly positive")
    a_bar = np.exp(delta_t[:, None] * A)
    b_bar = delta_t[:, None] * np.asarray(B_t)[None, :]
    return a_bar, b_bar


def _as_state(h0, params: SSMParams, dtype) -> np.ndarray:
    if h0 is None:
        return np.zeros((params.d, params.n_state), dtype)
    h = h0.h if isinstance(h0, HiddenState) else h0
    h = np.asarray(h, dtype=dtype)
    if h.shape != (params.d, params.n_state):
        raise DimensionError(f"hidden state {h.shape} does not match ({params.d}, {params.n_state})")
    return h


def _check_finite(y: np.ndarray) -> None:
    bad = ~np.isfinite(y)
    if bad.any():
        pos = int(np.argwhere(bad.any(axis=0))[0, 0])
        raise NumericError(f"non-finite scan output at position l={pos}")


def selective_scan_seq(params: SSMParams, x: np.ndarray, h0=None):
    """Sequential scan of a ``[D, L]`` signal; returns ``(y[D, L], HiddenState)``."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != params.d:
        raise DimensionError(f"expected [{params.d}, L] input, got {x.shape}")
    dtype = x.dtype if x.dtype in (np.float32, np.float64) else np.float64
    h = _as_state(h0, params, dtype)
    tokens = np.ascontiguousarray(x.T.astype(dtype))
    bm, cm, delta = params.project(tokens)
    A = params.state_matrix().astype(dtype)
    lengths = np.array([tokens.shape[0]])
    y, hL, _ = kernels.scan_forward(tokens[None], delta[None], A, bm[None], cm[None], h[None], lengths)
    _check_finite(y[0].T)
    step = None if not isinstance(h0, HiddenState) else h0.last_step
    return y[0].T.copy(), HiddenState(hL[0], step)


def chunked_affine_scan(a: np.ndarray, b: np.ndarray, h0: np.ndarray, chunk: int) -> np.ndarray:
    """All states of ``h_t = a_t * h_{t-1} + b_t`` for ``a, b`` of shape ``[L, ...]``.

    Chunks are scanned locally from a zero state (vectorised across chunks);
    chunk summaries are combined with a log-depth inclusive scan under
    ``(a2, b2) o (a1, b1) = (a2 a1, a2 b1 + b2)`` and the resulting carry-ins
    are folded back into each chunk.
    """
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    length = a.shape[0]
    n_chunks = -(-length // chunk)
    pad = n_chunks * chunk - length
    if pad:
        a = np.concatenate([a, np.ones((pad,) + a.shape[1:], a.dtype)])
        b = np.concatenate([b, np.zeros((pad,) + b.shape[1:], b.dtype)])
    a = a.reshape((n_chunks, chunk) + a.shape[1:])
    b = b.reshape((n_chunks, chunk) + b.shape[1:])

    # local prefix within each chunk: decay product and zero-start state
    decay = np.empty_like(a)
    local = np.empty_like(b)
    decay[:, 0] = a[:, 0]
    local[:, 0] = b[:, 0]
    for j in range(1, chunk):
        decay[:, j] = a[:, j] * decay[:, j - 1]
        local[:, j] = a[:, j] * local[:, j - 1] + b[:, j]

    # inclusive scan over chunk summaries (Hillis-Steele doubling)
    sa = decay[:, -1].copy()
    sb = local[:, -1].copy()
    step = 1
    while step < n_chunks:
        na = sa.copy()
        nb = sb.copy()
        na[step:] = sa[step:] * sa[:-step]
        nb[step:] = sa[step:] * sb[:-step] + sb[step:]
        sa, sb = na, nb
        step *= 2

    carry = np.empty_like(sb)
    carry[0] = h0
    carry[1:] = sa[:-1] * h0 + sb[:-1]
    states = local + decay * carry[:, None]
    return states.reshape((n_chunks * chunk,) + states.shape[2:])[:length]


def selective_scan_chunked(params: SSMParams, x: np.ndarray, h0=None, chunk: int = 16):
    """Chunk-parallel form of :func:`selective_scan_seq` with the same contract."""
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != params.d:
        raise DimensionError(f"expected [{params.d}, L] input, got {x.shape}")
    dtype = x.dtype if x.dtype in (np.float32, np.float64) else np.float64
    h = _as_state(h0, params, dtype)
    tokens = x.T.astype(dtype)
    bm, cm, delta = params.project(tokens)
    A = params.state_matrix().astype(dtype)
    a = np.exp(delta[:, :, None] * A)                               # [L, D, N]
    b = (delta * tokens)[:, :, None] * bm[:, None, :]               # [L, D, N]
    states = chunked_affine_scan(a, b, h, chunk)
    y = np.einsum("ldn,ln->dl", states, cm)
    _check_finite(y)
    step = None if not isinstance(h0, HiddenState) else h0.last_step
    return y, HiddenState(states[-1].copy(), step)


# ---------------------------------------------------------------- differentiable form


def scan_op(u: Tensor, delta: Tensor, A: Tensor, Bm: Tensor, Cm: Tensor, h0: Tensor,
            lengths: np.ndarray) -> tuple[Tensor, Tensor]:
    """Fused selective scan primitive on ``[B, L, D]`` tokens; returns ``(y, h_last)``."""
    lengths = np.asarray(lengths, dtype=np.int64)
    inputs = (u, delta, A, Bm, Cm, h0)
    keep = active_tape() is not None and any(t.requires_grad for t in inputs)
    dtype = u.dtype
    y, hL, hs = kernels.scan_forward(u.data, delta.data.astype(dtype, copy=False), A.data.astype(dtype, copy=False),
                                     Bm.data, Cm.data, h0.data.astype(dtype, copy=False), lengths, keep)
    y_t, h_t = Tensor(y), Tensor(hL)
    if keep:
        def backward(gy, ghL):
            return kernels.scan_backward(gy, ghL, u.data, delta.data, A.data, Bm.data, Cm.data,
                                         h0.data, hs, lengths)

        record(inputs, (y_t, h_t), backward)
    return y_t, h_t


def ssm_forward(params: SSMParams, x: Tensor, h0: Tensor, lengths: np.ndarray) -> tuple[Tensor, Tensor]:
    """Differentiable scan of channels-last tokens ``x[B, L, D]`` from states ``h0[B, D, N]``."""
    if x.shape[-1] != params.d:
        raise DimensionError(f"scan input has {x.shape[-1]} channels, parameters expect {params.d}")
    if h0.shape != (x.shape[0], params.d, params.n_state):
        raise DimensionError(f"hidden state {h0.shape} does not match batch {x.shape[0]} x "
                             f"({params.d}, {params.n_state})")
    bm = linear(x, params.W_B)
    cm = linear(x, params.W_C)
    delta = softplus(linear(linear(x, params.W_dt_in), params.W_dt, params.b_dt))
    A = mul(exp(params.A_log), -1.0)
    return scan_op(x, delta, A, bm, cm, h0, lengths)
