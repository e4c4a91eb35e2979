"""Pure-numpy selective scan kernels (fallback for the compiled extension).

Layout: tokens ``u``/``delta`` are ``[B, L, D]``, per-token projections
``Bm``/``Cm`` are ``[B, L, N]``, ``A`` is ``[D, N]`` and states are
``[B, D, N]``.  Sequence ``b`` is valid for ``t < lengths[b]``; padded steps
leave the state untouched and emit zeros.
"""

import numpy as np


def scan_forward(u, delta, A, Bm, Cm, h0, lengths, keep_states=False):
    bsz, length, d = u.shape
    h = h0.copy()
    y = np.zeros_like(u)
    hs = np.empty((bsz, length, d, A.shape[1]), u.dtype) if keep_states else None
    full = bool(np.all(lengths >= length))
    for t in range(length):
        dt = delta[:, t]
        hn = np.exp(dt[:, :, None] * A) * h + (dt * u[:, t])[:, :, None] * Bm[:, t, None, :]
        if full:
            h = hn
        else:
            m = (t < lengths)[:, None, None]
            h = np.where(m, hn, h)
        yt = (h * Cm[:, t, None, :]).sum(axis=-1)
        if not full:
            yt *= (t < lengths)[:, None]
        y[:, t] = yt
        if keep_states:
            hs[:, t] = h
    return y, h, hs


def scan_backward(gy, ghL, u, delta, A, Bm, Cm, h0, hs, lengths):
    bsz, length, d = u.shape
    gh = np.zeros_like(h0) if ghL is None else ghL.copy()
    du = np.zeros_like(u)
    ddelta = np.zeros_like(delta)
    dA = np.zeros_like(A)
    dB = np.zeros_like(Bm)
    dC = np.zeros_like(Cm)
    for t in range(length - 1, -1, -1):
        valid = (t < lengths).astype(u.dtype)
        m = valid[:, None, None]
        if not valid.any():
            continue
        dt = delta[:, t]
        x = u[:, t]
        a = np.exp(dt[:, :, None] * A)
        hprev = hs[:, t - 1] if t > 0 else h0
        g = gh + m * (Cm[:, t, None, :] * gy[:, t, :, None])
        dC[:, t] = (gy[:, t, :, None] * hs[:, t]).sum(axis=1) * valid[:, None]
        ga = g * hprev * a * m
        gB = g * Bm[:, t, None, :] * m
        ddelta[:, t] = (ga * A).sum(axis=-1) + gB.sum(axis=-1) * x
        dA += (ga * dt[:, :, None]).sum(axis=0)
        du[:, t] = gB.sum(axis=-1) * dt
        dB[:, t] = (g * (dt * x)[:, :, None] * m).sum(axis=1)
        gh = m * (g * a) + (1.0 - m) * gh
    return du, ddelta, dA, dB, dC, gh
