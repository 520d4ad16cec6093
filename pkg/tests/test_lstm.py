import numpy as np
import pytest

from conftest import assert_close, central_diff
from phenoseq.lstm import (
    GATES,
    LstmCellParams,
    LstmState,
    init_lstm_params,
    lstm_backward,
    lstm_forward,
    lstm_step,
)
from phenoseq.tensor import RngStream, ShapeMismatchError


def make_params(d, h, fill=0.0):
    W = {g: np.full((h, d), fill) for g in GATES}
    U = {g: np.full((h, h), fill) for g in GATES}
    b = {g: np.zeros(h) for g in GATES}
    return LstmCellParams(W=W, U=U, b=b)


def random_params(rng, d, h, scale=0.4):
    W = {g: rng.standard_normal((h, d)) * scale for g in GATES}
    U = {g: rng.standard_normal((h, h)) * scale for g in GATES}
    b = {g: rng.standard_normal(h) * scale for g in GATES}
    return LstmCellParams(W=W, U=U, b=b)


def scalar_cell_oracle(x_seq, w=1.0, u=1.0):
    """Independent step-by-step scalar evaluation of the cell equations."""
    import math

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    h = c = 0.0
    for x in x_seq:
        a = w * x + u * h
        f, i, o, g = sig(a), sig(a), sig(a), math.tanh(a)
        c = f * c + i * g
        h = o * math.tanh(c)
    return h, c


class TestLstmStep:
    def test_zero_params_zero_state(self, rng):
        params = make_params(3, 4)
        state, cache = lstm_step(params, rng.standard_normal(3), LstmState.zeros(4))
        for g in ("f", "i", "o"):
            assert np.allclose(cache.gates[g], 0.5)
        assert np.allclose(cache.gates["c"], 0.0)
        assert np.allclose(state.c, 0.0) and np.allclose(state.h, 0.0)

    def test_forget_gate_preserves_cell(self, rng):
        # saturated forget gate, all weights zero: c_t == c_{t-1}
        params = make_params(2, 3)
        params.b["f"][:] = 50.0
        prev = LstmState(h=np.zeros(3), c=np.ones(3))
        state, _ = lstm_step(params, rng.standard_normal(2), prev)
        assert np.allclose(state.c, prev.c, atol=1e-15)

    def test_scalar_cell_high_precision_values(self):
        # frozen from a 40-digit independent evaluation of the cell equations
        # at d=h=1, W=U=1, b=0, x=1, zero initial state
        params = make_params(1, 1, fill=1.0)
        state, cache = lstm_step(params, np.array([1.0]), LstmState.zeros(1))
        assert_close(cache.gates["f"], [0.73105857863000487925], rtol=1e-15, label="f")
        assert_close(cache.gates["c"], [0.76159415595576488812], rtol=1e-15, label="cand")
        assert_close(state.c, [0.55676994114593974427], rtol=1e-14, label="c")
        assert_close(state.h, [0.36960635293570577314], rtol=1e-14, label="h")

    def test_dimension_mismatch_rejected(self, rng):
        params = make_params(3, 4)
        with pytest.raises(ShapeMismatchError):
            lstm_step(params, rng.standard_normal(5), LstmState.zeros(4))
        with pytest.raises(ShapeMismatchError):
            lstm_step(params, rng.standard_normal(3), LstmState.zeros(7))

    def test_hidden_state_bounded_by_one(self, rng):
        params = random_params(rng, 4, 6, scale=3.0)
        state = LstmState.zeros(6)
        for _ in range(20):
            state, _ = lstm_step(params, rng.standard_normal(4) * 5, state)
            assert np.all(np.abs(state.h) <= 1.0)


class TestLstmForward:
    def test_t1_reduces_to_step(self, rng):
        params = random_params(rng, 3, 5)
        x = rng.standard_normal(3)
        h, trace = lstm_forward(params, [x])
        state, _ = lstm_step(params, x, LstmState.zeros(5))
        assert np.array_equal(h, state.h)
        assert len(trace) == 1

    def test_severed_recurrence_is_stationary(self, rng):
        # recurrence fully severed: U = 0 *and* forget gate closed, otherwise
        # the cell-state path c_t = f*c_{t-1} + i*cand still carries history
        params = random_params(rng, 3, 5)
        for g in GATES:
            params.U[g][:] = 0.0
        params.b["f"][:] = -50.0
        x = rng.standard_normal(3)
        _, trace = lstm_forward(params, [x] * 6)
        h_all = [np.asarray(s.tanh_c * s.gates["o"]) for s in trace.steps]
        for h_t in h_all[1:]:
            assert np.allclose(h_t, h_all[0], atol=1e-15)

    def test_scalar_chain_matches_composed_oracle(self):
        params = make_params(1, 1, fill=1.0)
        xs = [np.array([1.0]), np.array([1.0]), np.array([1.0])]
        h, trace = lstm_forward(params, xs)
        h_ref, c_ref = scalar_cell_oracle([1.0, 1.0, 1.0])
        assert_close(h, [h_ref], rtol=1e-12, label="scalar chain h")
        assert_close(trace.steps[-1].c, [c_ref], rtol=1e-12, label="scalar chain c")

    def test_empty_sequence_rejected(self, rng):
        with pytest.raises(ValueError):
            lstm_forward(random_params(rng, 2, 2), [])

    def test_forget_saturation_long_memory(self):
        # f ~ 1 and i ~ 0 forced: c_T == c_0-after-step-1 across 32 steps
        params = make_params(2, 3)
        params.b["f"][:] = 50.0
        params.b["i"][:] = -50.0
        state = LstmState(h=np.zeros(3), c=np.array([1.0, -0.5, 2.0]))
        c0 = state.c.copy()
        for _ in range(32):
            state, _ = lstm_step(params, np.zeros(2), state)
        assert np.allclose(state.c, c0, atol=1e-12)


class TestLstmBackward:
    def test_zero_grad_gives_zero(self, rng):
        params = random_params(rng, 3, 4)
        _, trace = lstm_forward(params, [rng.standard_normal(3) for _ in range(4)])
        grads, grad_xs = lstm_backward(params, trace, np.zeros(4))
        assert all(not g.any() for g in grads.values())
        assert all(not g.any() for g in grad_xs)

    def test_severed_recurrence_blocks_temporal_grads(self, rng):
        # U = 0 alone leaves the cell-state path open; closing the forget
        # gate removes the last temporal route into h_T
        params = random_params(rng, 3, 4)
        for g in GATES:
            params.U[g][:] = 0.0
        params.b["f"][:] = -50.0
        _, trace = lstm_forward(params, [rng.standard_normal(3) for _ in range(5)])
        _, grad_xs = lstm_backward(params, trace, rng.standard_normal(4))
        for t in range(4):
            assert np.allclose(grad_xs[t], 0.0, atol=1e-15)
        assert grad_xs[4].any()

    def test_gradients_match_finite_differences(self, rng):
        d, h, T = 3, 4, 5
        params = random_params(rng, d, h)
        xs = [rng.standard_normal(d) for _ in range(T)]
        go = rng.standard_normal(h)

        def loss(params_, xs_):
            h_T, _ = lstm_forward(params_, xs_)
            return float((h_T * go).sum())

        _, trace = lstm_forward(params, xs)
        grads, grad_xs = lstm_backward(params, trace, go)

        for g in GATES:
            for kind, store in (("W", params.W), ("U", params.U), ("b", params.b)):
                ref = store[g]

                def f(v, _g=g, _kind=kind, _store=store, _ref=ref):
                    saved = _store[_g]
                    _store[_g] = v
                    out = loss(params, xs)
                    _store[_g] = saved
                    return out

                fd = central_diff(f, ref.copy())
                assert_close(grads[f"{kind}_{g}"], fd, rtol=1e-5,
                             label=f"grad {kind}_{g}")
        for t in range(T):
            def f(v, _t=t):
                xs2 = list(xs)
                xs2[_t] = v
                return loss(params, xs2)

            assert_close(grad_xs[t], central_diff(f, xs[t].copy()), rtol=1e-5,
                         label=f"grad x_{t}")

    def test_randomized_configurations(self, rng):
        # 20 random (d, h, T) configurations; spot-check one parameter and one
        # input per configuration against finite differences
        for trial in range(20):
            d = int(rng.integers(1, 9))
            h = int(rng.integers(1, 9))
            T = int(rng.integers(1, 11))
            params = random_params(rng, d, h)
            xs = [rng.standard_normal(d) for _ in range(T)]
            go = rng.standard_normal(h)
            _, trace = lstm_forward(params, xs)
            grads, grad_xs = lstm_backward(params, trace, go)

            def loss_w(v):
                saved = params.W["i"]
                params.W["i"] = v
                out = float((lstm_forward(params, xs)[0] * go).sum())
                params.W["i"] = saved
                return out

            assert_close(grads["W_i"], central_diff(loss_w, params.W["i"].copy()),
                         rtol=1e-5, atol=1e-7, label=f"trial {trial} W_i")

            t_probe = int(rng.integers(0, T))

            def loss_x(v):
                xs2 = list(xs)
                xs2[t_probe] = v
                return float((lstm_forward(params, xs2)[0] * go).sum())

            assert_close(grad_xs[t_probe], central_diff(loss_x, xs[t_probe].copy()),
                         rtol=1e-5, atol=1e-7, label=f"trial {trial} x_{t_probe}")

    def test_batched_matches_per_sample(self, rng):
        d, h, T, B = 3, 4, 5, 6
        params = random_params(rng, d, h)
        xs_b = rng.standard_normal((T, B, d))
        go_b = rng.standard_normal((B, h))
        h_b, trace_b = lstm_forward(params, xs_b)
        grads_b, grad_xs_b = lstm_backward(params, trace_b, go_b)

        grads_sum = None
        for n in range(B):
            h_n, trace_n = lstm_forward(params, [xs_b[t, n] for t in range(T)])
            assert np.allclose(h_b[n], h_n, atol=1e-12)
            g_n, gx_n = lstm_backward(params, trace_n, go_b[n])
            if grads_sum is None:
                grads_sum = g_n
            else:
                grads_sum = {k: grads_sum[k] + g_n[k] for k in g_n}
            for t in range(T):
                assert np.allclose(grad_xs_b[t][n], gx_n[t], atol=1e-10)
        for k in grads_b:
            assert np.allclose(grads_b[k], grads_sum[k], atol=1e-9)

    def test_trace_grad_shape_mismatch_rejected(self, rng):
        params = random_params(rng, 3, 4)
        _, trace = lstm_forward(params, [rng.standard_normal(3)])
        with pytest.raises(ShapeMismatchError):
            lstm_backward(params, trace, np.zeros(5))


def test_init_lstm_params_shapes_and_determinism():
    p1 = init_lstm_params(RngStream(3), 5, 7)
    p2 = init_lstm_params(RngStream(3), 5, 7)
    p1.validate()
    assert p1.input_size == 5 and p1.hidden_size == 7
    for g in GATES:
        assert np.array_equal(p1.W[g], p2.W[g])
        assert np.array_equal(p1.U[g], p2.U[g])
        assert not p1.b[g].any()
