import math

import numpy as np
import pytest

import baryvae.diffgraph as dg
from baryvae.errors import NumericError


def make_store(**arrays):
    store = dg.ParamStore()
    for name, arr in arrays.items():
        store.add(name, np.asarray(arr, dtype=np.float64))
    return store


class TestForwardBackward:
    def test_sum_of_squares(self):
        store = make_store(x=[1.0, 2.0])
        loss, grads = dg.forward_backward(lambda v: dg.vsum(dg.square(v["x"])), store)
        assert loss == 5.0
        assert np.array_equal(grads["x"], [2.0, 4.0])

    def test_constant_loss_zero_grads(self):
        store = make_store(x=[1.0, -1.0])
        loss, grads = dg.forward_backward(
            lambda v: dg.add(dg.mul(dg.vsum(v["x"]), 0.0), 3.0), store
        )
        assert loss == 3.0
        assert np.array_equal(grads["x"], [0.0, 0.0])

    def test_two_layer_network_matches_finite_differences(self):
        rng = np.random.default_rng(51)
        store = make_store(
            w1=0.4 * rng.standard_normal((3, 6)),
            b1=0.1 * rng.standard_normal(6),
            w2=0.4 * rng.standard_normal((6, 2)),
            b2=0.1 * rng.standard_normal(2),
        )
        x = rng.standard_normal((5, 3))
        y = rng.standard_normal((5, 2))

        def build(v):
            h = dg.tanh(dg.add(dg.matmul(dg.Value(x), v["w1"]), v["b1"]))
            out = dg.add(dg.matmul(h, v["w2"]), v["b2"])
            return dg.vmean(dg.square(dg.add(out, dg.mul(dg.Value(y), -1.0))))

        assert dg.grad_check(build, store, 1e-5) < 1e-6

    def test_non_scalar_loss_rejected(self):
        store = make_store(x=[1.0, 2.0])
        with pytest.raises(ValueError):
            dg.forward_backward(lambda v: dg.square(v["x"]), store)

    def test_reused_node_accumulates(self):
        store = make_store(x=[3.0])

        def build(v):
            # x appears twice: d/dx (x*x + x) = 2x + 1
            return dg.vsum(dg.add(dg.mul(v["x"], v["x"]), v["x"]))

        _, grads = dg.forward_backward(build, store)
        assert np.array_equal(grads["x"], [7.0])


class TestPrimitives:
    """Every primitive's backward is covered by the central-difference check."""

    @pytest.mark.parametrize(
        "name,build",
        [
            ("matmul", lambda v: dg.vsum(dg.matmul(v["a2"], v["b2"]))),
            ("add", lambda v: dg.vsum(dg.add(v["a2"], v["c2"]))),
            ("broadcast_add", lambda v: dg.vsum(dg.add(v["a2"], v["row"]))),
            ("mul", lambda v: dg.vsum(dg.mul(v["a2"], v["c2"]))),
            ("tanh", lambda v: dg.vsum(dg.tanh(v["a2"]))),
            ("relu", lambda v: dg.vsum(dg.relu(v["a2"]))),
            ("softplus", lambda v: dg.vsum(dg.softplus(v["a2"]))),
            ("exp", lambda v: dg.vsum(dg.exp(v["a2"]))),
            ("log", lambda v: dg.vsum(dg.log(dg.add(dg.square(v["a2"]), 0.5)))),
            ("sum", lambda v: dg.vsum(v["a2"])),
            ("mean", lambda v: dg.vmean(v["a2"])),
            ("square", lambda v: dg.vsum(dg.square(v["a2"]))),
            ("sigmoid", lambda v: dg.vsum(dg.sigmoid(v["a2"]))),
            ("concat", lambda v: dg.vsum(dg.concat([v["a2"], v["c2"]], axis=0))),
            ("concat_axis1", lambda v: dg.vsum(dg.square(dg.concat([v["a2"], v["c2"]], axis=1)))),
            ("reciprocal", lambda v: dg.vsum(dg.reciprocal(dg.add(dg.square(v["a2"]), 1.0)))),
            ("sqrt", lambda v: dg.vsum(dg.sqrt(dg.add(dg.square(v["a2"]), 1.0)))),
        ],
    )
    def test_grad_check(self, name, build):
        rng = np.random.default_rng(52)
        # offsets keep relu away from its kink
        store = make_store(
            a2=rng.standard_normal((4, 3)) + 0.3,
            b2=rng.standard_normal((3, 4)),
            c2=rng.standard_normal((4, 3)),
            row=rng.standard_normal(3),
        )
        assert dg.grad_check(build, store, 1e-5) < 1e-6


class TestAdam:
    def test_zero_gradient_keeps_parameters(self):
        store = make_store(w=[1.0, -2.0])
        before = store["w"].copy()
        dg.adam_step(store, {"w": np.zeros(2)})
        assert np.array_equal(store["w"], before)
        assert store.step == 1

    def test_first_step_magnitude_is_learning_rate(self):
        store = make_store(w=[0.5, -0.5])
        before = store["w"].copy()
        g = np.array([0.3, -40.0])
        dg.adam_step(store, {"w": g}, lr=1e-3)
        delta = store["w"] - before
        # bias correction makes m_hat / sqrt(v_hat) = sign(g) on step one
        assert np.allclose(np.abs(delta), 1e-3, rtol=1e-6)
        assert np.all(np.sign(delta) == -np.sign(g))

    def test_two_steps_reduce_quadratic(self):
        store = make_store(w=[2.0])

        def loss_and_grad():
            w = store["w"][0]
            return w * w, np.array([2.0 * w])

        start, _ = loss_and_grad()
        for _ in range(2):
            _, grad = loss_and_grad()
            dg.adam_step(store, {"w": grad}, lr=0.1)
        end, _ = loss_and_grad()
        assert end < start

    def test_missing_gradient_rejected(self):
        store = make_store(w=[1.0], b=[1.0])
        with pytest.raises(ValueError):
            dg.adam_step(store, {"w": np.array([0.1])})


class TestGradCheck:
    def test_linear_loss(self):
        store = make_store(x=[0.5, -1.0, 2.0])
        assert dg.grad_check(lambda v: dg.vsum(dg.mul(v["x"], 3.0)), store) < 1e-10

    def test_softplus_chain(self):
        rng = np.random.default_rng(53)
        store = make_store(x=rng.standard_normal(8))
        build = lambda v: dg.vsum(dg.softplus(dg.mul(dg.softplus(v["x"]), 1.7)))
        assert dg.grad_check(build, store) < 1e-6

    def test_detects_corrupted_backward(self):
        store = make_store(x=[0.7, -0.4])

        def bad_square(a):
            out = dg.Value(a.data**2, parents=(a,))

            def backward(g):
                a.grad += g * (3.0 * a.data)  # deliberately wrong: should be 2x

            out._backward = backward
            return out

        assert dg.grad_check(lambda v: dg.vsum(bad_square(v["x"])), store) > 1e-2

    def test_sampled_coordinates_above_cap(self):
        rng = np.random.default_rng(54)
        store = make_store(big=0.01 * rng.standard_normal((150, 100)))
        err = dg.grad_check(lambda v: dg.vsum(dg.square(v["big"])), store)
        assert err < 1e-6

    def test_nonfinite_loss_raises(self):
        store = make_store(x=[-2.0])
        with np.errstate(invalid="ignore"):
            with pytest.raises(NumericError):
                dg.grad_check(lambda v: dg.vsum(dg.log(v["x"])), store)


class TestDeterminism:
    def test_rng_streams_repeat(self):
        a = dg.rng_stream(123, 4, 5).standard_normal(10)
        b = dg.rng_stream(123, 4, 5).standard_normal(10)
        c = dg.rng_stream(123, 4, 6).standard_normal(10)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_identical_runs_bit_identical(self):
        def run():
            rng = dg.rng_stream(7, 1)
            store = make_store(w=rng.standard_normal((4, 4)))
            x = dg.rng_stream(7, 2).standard_normal((3, 4))
            loss, grads = dg.forward_backward(
                lambda v: dg.vsum(dg.sigmoid(dg.matmul(dg.Value(x), v["w"]))), store
            )
            return loss, grads["w"]

        loss_a, grad_a = run()
        loss_b, grad_b = run()
        assert loss_a == loss_b
        assert np.array_equal(grad_a, grad_b)

    def test_glorot_bounds(self):
        rng = dg.rng_stream(0, 0)
        w = dg.glorot_uniform(rng, 30, 50)
        limit = math.sqrt(6.0 / 80.0)
        assert w.shape == (30, 50)
        assert np.all(np.abs(w) <= limit)
