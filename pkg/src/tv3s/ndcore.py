"""Minimal dense-tensor engine with tape-based reverse-mode differentiation.

Values are numpy arrays wrapped in :class:`Tensor`.  Operations record
themselves on the active :class:`Tape` (if any input requires a gradient);
``Tape.backward`` replays the record in reverse.  Outside a tape nothing is
recorded, which is how inference and finite-difference probes stay cheap.
"""

from __future__ import annotations

import math
import warnings
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericError

DTYPES = (np.float32, np.float64)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr if arr.flags.c_contiguous else np.array(arr, order="C")
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


class Param(Tensor):
    """A learnable tensor; its gradient buffer is zero-initialised."""

    __slots__ = ()

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape}, dtype={self.dtype.name})"


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of executed primitives.

    Use as a context manager; every op run inside it whose inputs need a
    gradient appends ``(inputs, outputs, backward_fn)``.
    """

    def __init__(self):
        self.records: list[tuple[Sequence[Tensor], Sequence[Tensor], Callable]] = []
        self.replayed = 0

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, root: Tensor, grad: np.ndarray | None = None) -> None:
        root.grad = np.ones_like(root.data) if grad is None else np.asarray(grad, root.dtype)
        self.replayed = 0
        for inputs, outputs, fn in reversed(self.records):
            self.replayed += 1
            grads = [o.grad for o in outputs]
            if all(g is None for g in grads):
                continue
            grads = [np.zeros_like(o.data) if g is None else g for o, g in zip(outputs, grads)]
            in_grads = fn(*grads)
            for t, g in zip(inputs, in_grads):
                if g is None or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = np.array(g, dtype=t.dtype, copy=True)
                else:
                    t.grad += g
        self.records.clear()


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def record(inputs: Sequence[Tensor], outputs: Sequence[Tensor], backward: Callable) -> None:
    """Register a primitive on the active tape if any input needs a gradient."""
    tape = active_tape()
    if tape is None or not any(t.requires_grad for t in inputs):
        return
    for o in outputs:
        o.requires_grad = True
    tape.records.append((tuple(inputs), tuple(outputs), backward))


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x).astype(x.dtype, copy=False)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)
    out = Tensor(a.data + b.data)
    record((a, b), (out,), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    return out


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)
    out = Tensor(a.data - b.data)
    record((a, b), (out,), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))
    return out


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data
    out = Tensor(ad * bd)
    record((a, b), (out,), lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)))
    return out


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y)
    record((a,), (out,), lambda g: (g * y,))
    return out


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = _sigmoid(x)
    out = Tensor(x * s)
    record((a,), (out,), lambda g: (g * s * (1.0 + x * (1.0 - s)),))
    return out


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = Tensor(_softplus(x))
    record((a,), (out,), lambda g: (g * _sigmoid(x),))
    return out


_UNARY = {"silu": silu, "softplus": softplus, "exp": exp}
_BINARY = {"add": add, "mul": mul}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch one of ``silu``, ``softplus``, ``exp``, ``add``, ``mul``."""
    a = as_tensor(a)
    if kind in _UNARY:
        if b is not None:
            raise TypeError(f"{kind} takes one operand")
        return _UNARY[kind](a)
    if kind in _BINARY:
        if b is None:
            raise TypeError(f"{kind} takes two operands")
        return _BINARY[kind](a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------- structural


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    out = Tensor(a.data.reshape(shape))
    record((a,), (out,), lambda g: (g.reshape(old),))
    return out


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(a.data.transpose(axes))
    record((a,), (out,), lambda g: (g.transpose(inv),))
    return out


def total(a: Tensor) -> Tensor:
    out = Tensor(np.asarray(a.data.sum(), dtype=a.dtype))
    record((a,), (out,), lambda g: (np.broadcast_to(g, a.shape).copy(),))
    return out


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(np.asarray(a.data.mean(), dtype=a.dtype))
    record((a,), (out,), lambda g: (np.full(a.shape, g / n, dtype=a.dtype),))
    return out


def gather_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """``out[...] = table[index[...]]`` with ``index == -1`` reading zeros.

    ``table`` is ``[R, D]``; the result is ``index.shape + (D,)``.
    """
    index = np.asarray(index)
    padded = np.concatenate([table.data, np.zeros((1, table.shape[1]), table.dtype)])
    out = Tensor(padded[index])
    rows = table.shape[0]

    def backward(g):
        acc = np.zeros((rows + 1, table.shape[1]), table.dtype)
        np.add.at(acc, index.reshape(-1), g.reshape(-1, table.shape[1]))
        return (acc[:rows],)

    record((table,), (out,), backward)
    return out


def scatter_rows(seqs: Tensor, index: np.ndarray, rows: int) -> Tensor:
    """Inverse of :func:`gather_rows` for an index covering each row once."""
    index = np.asarray(index)
    flat = index.reshape(-1)
    valid = flat >= 0
    d = seqs.shape[-1]
    src = seqs.data.reshape(-1, d)
    out_arr = np.zeros((rows, d), seqs.dtype)
    out_arr[flat[valid]] = src[valid]
    out = Tensor(out_arr)

    def backward(g):
        gs = np.zeros_like(src)
        gs[valid] = g[flat[valid]]
        return (gs.reshape(seqs.shape),)

    record((seqs,), (out,), backward)
    return out


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    sizes = [p.shape[0] for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    cuts = np.cumsum(sizes)[:-1]
    record(tuple(parts), (out,), lambda g: tuple(np.split(g, cuts, axis=0)))
    return out


def take(a: Tensor, index) -> Tensor:
    """Basic slicing/indexing along the leading axes, e.g. ``take(x, (slice(0, 2),))``."""
    out = Tensor(a.data[index])

    def backward(g):
        acc = np.zeros_like(a.data)
        acc[index] += g
        return (acc,)

    record((a,), (out,), backward)
    return out


# ---------------------------------------------------------------- linear algebra


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x[..., Din] @ weight[Dout, Din].T + bias``."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    y = xd @ wd.T
    if bias is not None:
        y = y + bias.data
    out = Tensor(y)
    din, dout = weight.shape[1], weight.shape[0]

    def backward(g):
        g2 = g.reshape(-1, dout)
        gx = g @ wd
        gw = g2.T @ xd.reshape(-1, din)
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    record(inputs, (out,), backward)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = Tensor(ad @ bd)
    record((a, b), (out,), lambda g: (_unbroadcast(g @ np.swapaxes(bd, -1, -2), a.shape),
                                      _unbroadcast(np.swapaxes(ad, -1, -2) @ g, b.shape)))
    return out


# ---------------------------------------------------------------- normalisation


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: last dim {d} vs gamma {gamma.shape}, beta {beta.shape}")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = Tensor(xhat * gamma.data + beta.data)

    def backward(g):
        red = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        gx_hat = g * gamma.data
        gx = rstd * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                     - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    record((x, gamma, beta), (out,), backward)
    return out


# ---------------------------------------------------------------- convolution


def causal_conv_tokens(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Causal depthwise conv over the token axis of a channels-last ``[B, L, D]`` batch.

    ``out[b, l, d] = bias[d] + sum_k kernel[d, k] * x[b, l - (K-1) + k, d]``.
    """
    if x.data.ndim != 3:
        raise DimensionError(f"causal_conv_tokens expects [B, L, D], got {x.shape}")
    bsz, length, d = x.shape
    if kernel.shape[0] != d or bias.shape != (d,):
        raise DimensionError(f"conv: input {x.shape}, kernel {kernel.shape}, bias {bias.shape}")
    k = kernel.shape[1]
    xp = np.zeros((bsz, length + k - 1, d), x.dtype)
    xp[:, k - 1:] = x.data
    kd = kernel.data
    y = np.broadcast_to(bias.data, (bsz, length, d)).copy()
    for j in range(k):
        y += kd[:, j] * xp[:, j:j + length]
    out = Tensor(y)

    def backward(g):
        gk = np.empty_like(kd)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gk[:, j] = (g * xp[:, j:j + length]).sum(axis=(0, 1))
            gxp[:, j:j + length] += g * kd[:, j]
        return gxp[:, k - 1:], gk, g.sum(axis=(0, 1))

    record((x, kernel, bias), (out,), backward)
    return out


def depthwise_conv1d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Causal depthwise convolution of a ``[D, L]`` signal with a ``[D, K]`` kernel."""
    if x.data.ndim != 2:
        raise DimensionError(f"depthwise_conv1d expects [D, L], got {x.shape}")
    tokens = reshape(transpose(x, (1, 0)), (1, x.shape[1], x.shape[0]))
    y = causal_conv_tokens(tokens, kernel, bias)
    return transpose(reshape(y, (x.shape[1], x.shape[0])), (1, 0))


# ---------------------------------------------------------------- resampling


def interp_matrix(n_in: int, factor: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic ``[factor*n_in, n_in]`` matrix for 1-D linear interpolation
    with half-pixel centres (align-corners false)."""
    n_out = n_in * factor
    src = (np.arange(n_out) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in), dtype)
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Upsample a ``[C, H, W]`` map by an integer factor."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if x.data.ndim != 3:
        raise DimensionError(f"bilinear_upsample expects [C, H, W], got {x.shape}")
    if factor == 1:
        return x
    _, h, w = x.shape
    uh = interp_matrix(h, factor, x.dtype)
    uw = interp_matrix(w, factor, x.dtype)
    out = Tensor(uh @ x.data @ uw.T)
    record((x,), (out,), lambda g: (uh.T @ g @ uw,))
    return out


# ---------------------------------------------------------------- loss


class AllIgnoredWarning(RuntimeWarning):
    pass


def softmax_cross_entropy(logits: Tensor, mask: np.ndarray, ignore_label: int = 255) -> Tensor:
    """Mean pixel cross-entropy of ``[C, H, W]`` logits against an ``[H, W]`` label map."""
    c = logits.shape[0]
    mask = np.asarray(mask)
    if mask.shape != logits.shape[1:]:
        raise DimensionError(f"mask {mask.shape} does not match logits {logits.shape}")
    labels = mask.reshape(-1).astype(np.int64)
    valid = labels != ignore_label
    if np.any((labels[valid] < 0) | (labels[valid] >= c)):
        raise ValueError(f"mask holds labels outside [0, {c}) and != {ignore_label}")
    z = logits.data.reshape(c, -1)
    n_valid = int(valid.sum())
    if n_valid == 0:
        warnings.warn("every pixel carries the ignore label; loss defined as 0", AllIgnoredWarning)
        out = Tensor(np.zeros((), logits.dtype))
        record((logits,), (out,), lambda g: (np.zeros_like(logits.data),))
        return out
    zmax = z.max(axis=0, keepdims=True)
    ez = np.exp(z - zmax)
    se = ez.sum(axis=0, keepdims=True)
    logp = z - zmax - np.log(se)
    cols = np.nonzero(valid)[0]
    loss = -logp[labels[cols], cols].sum() / n_valid
    out = Tensor(np.asarray(loss, dtype=logits.dtype))

    def backward(g):
        p = ez / se
        p[:, ~valid] = 0.0
        p[labels[cols], cols] -= 1.0
        return ((g / n_valid) * p.reshape(logits.shape),)

    record((logits,), (out,), backward)
    return out


# ---------------------------------------------------------------- gradient check


def grad_check_detail(f: Callable[[], Tensor], params: Iterable[Param], h: float = 1e-5,
                      samples: int | None = None, seed: int = 0) -> dict[str, float]:
    """Per-parameter max of ``|analytic - central difference| / max(1, |analytic|)``.

    ``samples`` limits each tensor to that many seeded random coordinates; one
    random-direction derivative per tensor then covers the entries not sampled.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
        tape.backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}
    rng = np.random.default_rng(seed)

    def central() -> float:
        return f().item()

    report = {}
    for p in params:
        flat = p.data.reshape(-1)
        ga = analytic[p.name].reshape(-1)
        coords = range(flat.size)
        if samples is not None and flat.size > samples:
            coords = np.sort(rng.choice(flat.size, samples, replace=False))
        worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = central()
            flat[i] = orig - h
            fm = central()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            if not (math.isfinite(num) and math.isfinite(ga[i])):
                raise NumericError(f"non-finite gradient for parameter {p.name!r} at index {i}")
            worst = max(worst, abs(ga[i] - num) / max(1.0, abs(ga[i])))
        if samples is not None and flat.size > samples:
            v = rng.standard_normal(flat.size) / math.sqrt(flat.size)
            orig = flat.copy()
            flat[:] = orig + h * v
            fp = central()
            flat[:] = orig - h * v
            fm = central()
            flat[:] = orig
            num, ana = (fp - fm) / (2.0 * h), float(ga @ v)
            if not (math.isfinite(num) and math.isfinite(ana)):
                raise NumericError(f"non-finite directional gradient for parameter {p.name!r}")
            worst = max(worst, abs(ana - num) / max(1.0, abs(ana)))
        report[p.name] = worst
    return report


def grad_check(f: Callable[[], Tensor], params: Iterable[Param], h: float = 1e-5,
               samples: int | None = None, seed: int = 0) -> float:
    """Max relative error between reverse-mode and central-difference gradients."""
    report = grad_check_detail(f, params, h, samples, seed)
    return max(report.values(), default=0.0)
