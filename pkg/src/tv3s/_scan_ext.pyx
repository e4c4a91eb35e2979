# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled selective scan kernels; same contract as ``_scan_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expf

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline real _exp(real x) noexcept nogil:
    if real is float:
        return expf(x)
    else:
        return exp(x)


cdef void _forward(real[:, :, ::1] u, real[:, :, ::1] delta, real[:, ::1] A,
                   real[:, :, ::1] Bm, real[:, :, ::1] Cm, real[:, :, ::1] h,
                   long long[::1] lengths, real[:, :, ::1] y,
                   real[:, :, :, ::1] hs, bint keep):
    cdef Py_ssize_t bsz = u.shape[0], length = u.shape[1], d = u.shape[2], nst = A.shape[1]
    cdef Py_ssize_t b, t, i, n, stop
    cdef real dt, x, acc, hv
    with nogil:
        for b in range(bsz):
            stop = lengths[b]
            if stop > length:
                stop = length
            for t in range(stop):
                for i in range(d):
                    dt = delta[b, t, i]
                    x = dt * u[b, t, i]
                    acc = 0
                    for n in range(nst):
                        hv = _exp(dt * A[i, n]) * h[b, i, n] + x * Bm[b, t, n]
                        h[b, i, n] = hv
                        acc = acc + hv * Cm[b, t, n]
                        if keep:
                            hs[b, t, i, n] = hv
                    y[b, t, i] = acc
            if keep:
                for t in range(stop, length):
                    for i in range(d):
                        for n in range(nst):
                            hs[b, t, i, n] = h[b, i, n]


cdef void _backward(real[:, :, ::1] gy, real[:, :, ::1] u, real[:, :, ::1] delta,
                    real[:, ::1] A, real[:, :, ::1] Bm, real[:, :, ::1] Cm,
                    real[:, :, ::1] h0, real[:, :, :, ::1] hs, long long[::1] lengths,
                    real[:, :, ::1] gh, real[:, :, ::1] du, real[:, :, ::1] ddelta,
                    real[:, ::1] dA, real[:, :, ::1] dB, real[:, :, ::1] dC):
    cdef Py_ssize_t bsz = u.shape[0], length = u.shape[1], d = u.shape[2], nst = A.shape[1]
    cdef Py_ssize_t b, t, i, n, stop
    cdef real dt, x, gyv, a, hp, g, ga, sd, su, bn
    with nogil:
        for b in range(bsz):
            stop = lengths[b]
            if stop > length:
                stop = length
            for t in range(stop - 1, -1, -1):
                for i in range(d):
                    dt = delta[b, t, i]
                    x = u[b, t, i]
                    gyv = gy[b, t, i]
                    sd = 0
                    su = 0
                    for n in range(nst):
                        a = _exp(dt * A[i, n])
                        if t > 0:
                            hp = hs[b, t - 1, i, n]
                        else:
                            hp = h0[b, i, n]
                        bn = Bm[b, t, n]
                        g = gh[b, i, n] + Cm[b, t, n] * gyv
                        dC[b, t, n] += gyv * hs[b, t, i, n]
                        ga = g * hp * a
                        sd = sd + ga * A[i, n] + g * bn * x
                        dA[i, n] += ga * dt
                        su = su + g * bn
                        dB[b, t, n] += g * dt * x
                        gh[b, i, n] = g * a
                    ddelta[b, t, i] = sd
                    du[b, t, i] = su * dt


def scan_forward(u, delta, A, Bm, Cm, h0, lengths, keep_states=False):
    dtype = u.dtype
    u = np.ascontiguousarray(u)
    delta = np.ascontiguousarray(delta, dtype)
    A = np.ascontiguousarray(A, dtype)
    Bm = np.ascontiguousarray(Bm, dtype)
    Cm = np.ascontiguousarray(Cm, dtype)
    h = np.array(h0, dtype=dtype, copy=True, order="C")
    lens = np.ascontiguousarray(lengths, dtype=np.int64)
    bsz, length, d = u.shape
    y = np.zeros_like(u)
    keep = bool(keep_states)
    hs = np.empty((bsz, length, d, A.shape[1]) if keep else (1, 1, 1, 1), dtype)
    if dtype == np.float32:
        _forward[float](u, delta, A, Bm, Cm, h, lens, y, hs, keep)
    elif dtype == np.float64:
        _forward[double](u, delta, A, Bm, Cm, h, lens, y, hs, keep)
    else:
        raise TypeError(f"unsupported dtype {dtype}")
    return y, h, (hs if keep else None)


def scan_backward(gy, ghL, u, delta, A, Bm, Cm, h0, hs, lengths):
    dtype = u.dtype
    gy = np.ascontiguousarray(gy, dtype)
    u = np.ascontiguousarray(u)
    delta = np.ascontiguousarray(delta, dtype)
    A = np.ascontiguousarray(A, dtype)
    Bm = np.ascontiguousarray(Bm, dtype)
    Cm = np.ascontiguousarray(Cm, dtype)
    h0 = np.ascontiguousarray(h0, dtype)
    hs = np.ascontiguousarray(hs, dtype)
    lens = np.ascontiguousarray(lengths, dtype=np.int64)
    gh = np.zeros_like(h0) if ghL is None else np.array(ghL, dtype=dtype, copy=True, order="C")
    du = np.zeros_like(u)
    ddelta = np.zeros_like(delta)
    dA = np.zeros_like(A)
    dB = np.zeros_like(Bm)
    dC = np.zeros_like(Cm)
    if dtype == np.float32:
        _backward[float](gy, u, delta, A, Bm, Cm, h0, hs, lens, gh, du, ddelta, dA, dB, dC)
    elif dtype == np.float64:
        _backward[double](gy, u, delta, A, Bm, Cm, h0, hs, lens, gh, du, ddelta, dA, dB, dC)
    else:
        raise TypeError(f"unsupported dtype {dtype}")
    return du, ddelta, dA, dB, dC, gh
