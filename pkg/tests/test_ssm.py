import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tv3s import kernels
from tv3s.errors import DimensionError, NumericError
from tv3s.ndcore import Param, Tape, Tensor, grad_check, mul, total
from tv3s.ssm import (HiddenState, SSMParams, chunked_affine_scan, discretize, scan_op, selective_scan_chunked,
                      selective_scan_seq, ssm_forward)


def literal_loop(params, x, h0=None):
    """Direct transcription of the recurrence, one channel and state at a time."""
    D, L = x.shape
    N = params.n_state
    A = -np.exp(params.A_log.data.astype(np.float64))
    WB, WC = params.W_B.data.astype(np.float64), params.W_C.data.astype(np.float64)
    Win, Wdt, bdt = (p.data.astype(np.float64) for p in (params.W_dt_in, params.W_dt, params.b_dt))
    h = np.zeros((D, N)) if h0 is None else np.array(h0, dtype=np.float64)
    y = np.zeros((D, L))
    for t in range(L):
        xt = x[:, t]
        Bt, Ct = WB @ xt, WC @ xt
        z = Wdt @ (Win @ xt) + bdt
        dt = np.log1p(np.exp(z))
        for d in range(D):
            for n in range(N):
                h[d, n] = math.exp(dt[d] * A[d, n]) * h[d, n] + dt[d] * Bt[n] * xt[d]
                y[d, t] += Ct[n] * h[d, n]
    return y, h


def make(D=8, N=4, dtype=np.float64, seed=0):
    return SSMParams(D, N, rng=np.random.default_rng(seed), dtype=dtype)


class TestDiscretize:
    def test_small_step_limit(self):
        a, b = discretize(np.array([[-1.0, -3.0]]), np.array([1.0, 2.0]), np.array([1e-12]))
        np.testing.assert_allclose(a, 1.0, atol=1e-11)
        np.testing.assert_allclose(b, 0.0, atol=1e-11)

    def test_half_life(self):
        a, _ = discretize(np.array([[-1.0]]), np.array([1.0]), np.array([math.log(2)]))
        assert a[0, 0] == pytest.approx(0.5, abs=1e-15)

    def test_unit_step(self):
        a, b = discretize(np.array([[-1.0]]), np.array([2.0]), np.array([1.0]))
        assert a[0, 0] == pytest.approx(0.367879, abs=1e-6)
        assert b[0, 0] == 2.0

    def test_rejects_nonpositive_step(self):
        with pytest.raises(ValueError):
            discretize(np.array([[-1.0]]), np.array([1.0]), np.array([0.0]))


class TestSequentialScan:
    def test_zero_dynamics(self):
        p = make()
        y, h = selective_scan_seq(p, np.zeros((8, 5)))
        assert not y.any() and not h.h.any()

    def test_single_step(self, rng):
        p = make(D=3, N=2)
        x = rng.normal(size=(3, 1))
        Bm, Cm, dt = p.project(x.T)
        y, _ = selective_scan_seq(p, x)
        expect = (Cm[0][None, :] * (dt[0][:, None] * Bm[0][None, :] * x[:, 0:1])).sum(axis=1)
        np.testing.assert_allclose(y[:, 0], expect, atol=1e-14)

    def test_matches_literal_loop(self, rng):
        p = make(D=2, N=2, seed=3)
        x = rng.normal(size=(2, 4))
        h0 = rng.normal(size=(2, 2))
        y, h = selective_scan_seq(p, x, h0)
        y_ref, h_ref = literal_loop(p, x, h0)
        assert np.abs(y - y_ref).max() < 1e-12
        assert np.abs(h.h - h_ref).max() < 1e-12

    def test_causality(self, rng):
        p = make()
        x = rng.normal(size=(8, 20))
        y1, _ = selective_scan_seq(p, x)
        x[:, 12:] = rng.normal(size=(8, 8))
        y2, _ = selective_scan_seq(p, x)
        np.testing.assert_array_equal(y1[:, :12], y2[:, :12])

    def test_carry_composition(self, rng):
        p = make()
        x = rng.normal(size=(8, 30))
        y, h = selective_scan_seq(p, x)
        ya, ha = selective_scan_seq(p, x[:, :11])
        yb, hb = selective_scan_seq(p, x[:, 11:], ha)
        np.testing.assert_allclose(np.concatenate([ya, yb], axis=1), y, atol=1e-12)
        np.testing.assert_allclose(hb.h, h.h, atol=1e-12)

    def test_state_decays_without_input(self, rng):
        p = make()
        h0 = HiddenState(rng.normal(size=(8, 4)))
        _, h = selective_scan_seq(p, np.zeros((8, 50)), h0)
        assert np.abs(h.h).max() < np.abs(h0.h).max()

    def test_rejects_bad_shapes(self):
        with pytest.raises(DimensionError):
            selective_scan_seq(make(), np.zeros((3, 4)))
        with pytest.raises(DimensionError):
            selective_scan_seq(make(), np.zeros((8, 4)), np.zeros((8, 5)))

    def test_nonfinite_reports_position(self):
        x = np.zeros((8, 6))
        x[:, 4] = np.nan
        with np.errstate(invalid="ignore"), pytest.raises(NumericError, match="l=4"):
            selective_scan_seq(make(), x)


class TestChunkedScan:
    @pytest.mark.parametrize("chunk", [1, 3, 7, 64, 100])
    def test_matches_sequential(self, rng, chunk):
        p = make()
        x = rng.normal(size=(8, 64))
        h0 = rng.normal(size=(8, 4))
        ys, hs = selective_scan_seq(p, x, h0)
        yc, hc = selective_scan_chunked(p, x, h0, chunk)
        assert np.abs(ys - yc).max() < 1e-10
        assert np.abs(hs.h - hc.h).max() < 1e-10

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 40), st.integers(1, 12), st.integers(0, 2**31))
    def test_affine_scan_oracle(self, length, chunk, seed):
        r = np.random.default_rng(seed)
        a = r.uniform(0, 1, (length, 3))
        b = r.normal(size=(length, 3))
        h0 = r.normal(size=3)
        out = chunked_affine_scan(a, b, h0, chunk)
        h, ref = h0.copy(), []
        for t in range(length):
            h = a[t] * h + b[t]
            ref.append(h.copy())
        np.testing.assert_allclose(out, np.array(ref), atol=1e-12)


class TestBackends:
    def test_backend_selected(self):
        assert kernels.BACKEND in ("compiled", "python")

    @pytest.mark.parametrize("dtype, tol", [(np.float64, 1e-12), (np.float32, 1e-5)])
    def test_backends_agree(self, rng, dtype, tol):
        impls = kernels.implementations()
        if "compiled" not in impls:
            pytest.skip("compiled extension not built")
        B, L, D, N = 3, 9, 5, 4
        u = rng.normal(size=(B, L, D)).astype(dtype)
        dt = rng.uniform(0.01, 0.5, (B, L, D)).astype(dtype)
        A = -rng.uniform(0.5, 3, (D, N)).astype(dtype)
        Bm, Cm = (rng.normal(size=(B, L, N)).astype(dtype) for _ in range(2))
        h0 = rng.normal(size=(B, D, N)).astype(dtype)
        lengths = np.array([9, 4, 1])
        outs = {k: fwd(u, dt, A, Bm, Cm, h0, lengths, True) for k, (fwd, _) in impls.items()}
        for a, b in zip(outs["python"][:2], outs["compiled"][:2]):
            assert np.abs(a - b).max() < tol
        gy, ghL = rng.normal(size=(B, L, D)).astype(dtype), rng.normal(size=(B, D, N)).astype(dtype)
        grads = {k: bwd(gy, ghL, u, dt, A, Bm, Cm, h0, outs[k][2], lengths) for k, (_, bwd) in impls.items()}
        for a, b in zip(grads["python"], grads["compiled"]):
            assert np.abs(a - b).max() < tol * max(1.0, np.abs(a).max())

    def test_padded_steps_are_inert(self, rng):
        B, L, D, N = 2, 6, 3, 2
        u = rng.normal(size=(B, L, D))
        dt = rng.uniform(0.1, 0.5, (B, L, D))
        A = -np.ones((D, N))
        Bm, Cm = rng.normal(size=(B, L, N)), rng.normal(size=(B, L, N))
        h0 = rng.normal(size=(B, D, N))
        y, hL, _ = kernels.scan_forward(u, dt, A, Bm, Cm, h0, np.array([6, 3]))
        y3, h3, _ = kernels.scan_forward(u[1:, :3], dt[1:, :3], A, Bm[1:, :3], Cm[1:, :3], h0[1:], np.array([3]))
        np.testing.assert_allclose(hL[1], h3[0], atol=1e-14)
        assert not y[1, 3:].any()


class TestScanGradients:
    def test_all_parameters(self, rng):
        p = make(D=4, N=3)
        x = Tensor(rng.normal(size=(2, 7, 4)))
        h0 = Param(rng.normal(size=(2, 4, 3)), "h0")
        w = Tensor(rng.normal(size=(2, 7, 4)))

        def f():
            y, hL = ssm_forward(p, x, h0, np.array([7, 5]))
            return total(mul(y, w)) + total(mul(hL, hL))
        assert grad_check(f, p.params() + [h0]) < 1e-6

    def test_h0_gradient_single_step(self, rng):
        D, N = 3, 2
        u = Tensor(rng.normal(size=(1, 1, D)))
        dt = Tensor(rng.uniform(0.1, 1, (1, 1, D)))
        A = Tensor(-rng.uniform(0.5, 2, (D, N)))
        Bm, Cm = Tensor(rng.normal(size=(1, 1, N))), Tensor(rng.normal(size=(1, 1, N)))
        h0 = Param(np.zeros((1, D, N)), "h0")
        with Tape() as tape:
            y, _ = scan_op(u, dt, A, Bm, Cm, h0, np.array([1]))
            tape.backward(total(y))
        abar = np.exp(dt.data[0, 0][:, None] * A.data)
        np.testing.assert_allclose(h0.grad[0], Cm.data[0, 0][None, :] * abar, atol=1e-14)
